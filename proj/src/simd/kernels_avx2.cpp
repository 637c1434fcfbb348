// Copyright 2026 The segvar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// AVX2+FMA kernels. Compiled with -mavx2 -mfma (see src/CMakeLists.txt);
// nothing here may be called unless dispatch confirmed CPU support.

#include <immintrin.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "gemm_driver.hpp"
#include "segvar/simd/simd.hpp"

namespace segvar::simd::avx2 {

namespace {

// Cephes-style expf. Max relative error ~2e-7 on [-87.3, 88]; the upper clamp
// stays below the overflow threshold so the result is always finite.
inline __m256 exp256(__m256 x) {
  x = _mm256_min_ps(_mm256_max_ps(x, _mm256_set1_ps(-87.336548f)), _mm256_set1_ps(88.0f));
  __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f), _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  __m256 r = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  r = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), r);
  __m256 p = _mm256_set1_ps(1.9875691500e-4f);
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.3981999507e-3f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(8.3334519073e-3f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(4.1665795894e-2f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.6666665459e-1f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(5.0000001201e-1f));
  p = _mm256_fmadd_ps(p, _mm256_mul_ps(r, r), _mm256_add_ps(r, _mm256_set1_ps(1.0f)));
  __m256i n = _mm256_cvtps_epi32(fx);
  n = _mm256_slli_epi32(_mm256_add_epi32(n, _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(p, _mm256_castsi256_ps(n));
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_add_ss(lo, _mm_movehdup_ps(lo));
  return _mm_cvtss_f32(lo);
}

inline float hmax(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_max_ps(lo, hi);
  lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_max_ss(lo, _mm_movehdup_ps(lo));
  return _mm_cvtss_f32(lo);
}

struct MicroAvx2 {
  static constexpr int MR = 6;
  static constexpr int NR = 16;
  static void run(int kc, const float* ap, const float* bp, float* acc) {
    __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
    __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
    __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
    __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
    __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
    __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
    for (int k = 0; k < kc; ++k) {
      const __m256 b0 = _mm256_loadu_ps(bp + (size_t)k * NR);
      const __m256 b1 = _mm256_loadu_ps(bp + (size_t)k * NR + 8);
      const float* ak = ap + (size_t)k * MR;
      __m256 ai = _mm256_broadcast_ss(ak + 0);
      c00 = _mm256_fmadd_ps(ai, b0, c00);
      c01 = _mm256_fmadd_ps(ai, b1, c01);
      ai = _mm256_broadcast_ss(ak + 1);
      c10 = _mm256_fmadd_ps(ai, b0, c10);
      c11 = _mm256_fmadd_ps(ai, b1, c11);
      ai = _mm256_broadcast_ss(ak + 2);
      c20 = _mm256_fmadd_ps(ai, b0, c20);
      c21 = _mm256_fmadd_ps(ai, b1, c21);
      ai = _mm256_broadcast_ss(ak + 3);
      c30 = _mm256_fmadd_ps(ai, b0, c30);
      c31 = _mm256_fmadd_ps(ai, b1, c31);
      ai = _mm256_broadcast_ss(ak + 4);
      c40 = _mm256_fmadd_ps(ai, b0, c40);
      c41 = _mm256_fmadd_ps(ai, b1, c41);
      ai = _mm256_broadcast_ss(ak + 5);
      c50 = _mm256_fmadd_ps(ai, b0, c50);
      c51 = _mm256_fmadd_ps(ai, b1, c51);
    }
    _mm256_storeu_ps(acc + 0 * NR, c00);
    _mm256_storeu_ps(acc + 0 * NR + 8, c01);
    _mm256_storeu_ps(acc + 1 * NR, c10);
    _mm256_storeu_ps(acc + 1 * NR + 8, c11);
    _mm256_storeu_ps(acc + 2 * NR, c20);
    _mm256_storeu_ps(acc + 2 * NR + 8, c21);
    _mm256_storeu_ps(acc + 3 * NR, c30);
    _mm256_storeu_ps(acc + 3 * NR + 8, c31);
    _mm256_storeu_ps(acc + 4 * NR, c40);
    _mm256_storeu_ps(acc + 4 * NR + 8, c41);
    _mm256_storeu_ps(acc + 5 * NR, c50);
    _mm256_storeu_ps(acc + 5 * NR + 8, c51);
  }
};

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  detail::gemm_blocked<MicroAvx2>(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void axpby(int64_t n, float alpha, const float* x, float beta, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  const __m256 vb = _mm256_set1_ps(beta);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vy = _mm256_mul_ps(vb, _mm256_loadu_ps(y + i));
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy));
  }
  for (; i < n; ++i) y[i] = alpha * x[i] + beta * y[i];
}

float reduce_sum(int64_t n, const float* x) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_add_ps(s0, _mm256_loadu_ps(x + i));
    s1 = _mm256_add_ps(s1, _mm256_loadu_ps(x + i + 8));
  }
  float s = hsum(_mm256_add_ps(s0, s1));
  for (; i < n; ++i) s += x[i];
  return s;
}

float reduce_max(int64_t n, const float* x) {
  float m = -std::numeric_limits<float>::infinity();
  __m256 vm = _mm256_set1_ps(m);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(x + i));
  if (i > 0) m = hmax(vm);
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

float reduce_sumsq(int64_t n, const float* x) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const __m256 v0 = _mm256_loadu_ps(x + i);
    const __m256 v1 = _mm256_loadu_ps(x + i + 8);
    s0 = _mm256_fmadd_ps(v0, v0, s0);
    s1 = _mm256_fmadd_ps(v1, v1, s1);
  }
  float s = hsum(_mm256_add_ps(s0, s1));
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

float reduce_abs_diff(int64_t n, const float* x, const float* y) {
  const __m256 sign_mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256 s = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i));
    s = _mm256_add_ps(s, _mm256_and_ps(d, sign_mask));
  }
  float r = hsum(s);
  for (; i < n; ++i) r += std::fabs(x[i] - y[i]);
  return r;
}

float reduce_sq_diff(int64_t n, const float* x, const float* y) {
  __m256 s = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i));
    s = _mm256_fmadd_ps(d, d, s);
  }
  float r = hsum(s);
  for (; i < n; ++i) r += (x[i] - y[i]) * (x[i] - y[i]);
  return r;
}

float dot(int64_t n, const float* x, const float* y) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), s1);
  }
  float s = hsum(_mm256_add_ps(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void silu(int64_t n, const float* x, float* y) {
  const __m256 one = _mm256_set1_ps(1.0f);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 den = _mm256_add_ps(one, exp256(_mm256_sub_ps(_mm256_setzero_ps(), v)));
    _mm256_storeu_ps(y + i, _mm256_div_ps(v, den));
  }
  for (; i < n; ++i) y[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void silu_backward(int64_t n, const float* x, const float* dy, float* dx) {
  const __m256 one = _mm256_set1_ps(1.0f);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 s = _mm256_div_ps(one, _mm256_add_ps(one, exp256(_mm256_sub_ps(_mm256_setzero_ps(), v))));
    // silu'(x) = s * (1 + x * (1 - s))
    const __m256 d = _mm256_mul_ps(s, _mm256_fmadd_ps(v, _mm256_sub_ps(one, s), one));
    _mm256_storeu_ps(dx + i, _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), d, _mm256_loadu_ps(dx + i)));
  }
  for (; i < n; ++i) {
    const float s = 1.0f / (1.0f + std::exp(-x[i]));
    dx[i] += dy[i] * s * (1.0f + x[i] * (1.0f - s));
  }
}

void softmax_rows(int rows, int cols, const float* x, float* y, const int* prefix) {
  for (int r = 0; r < rows; ++r) {
    const int valid = prefix ? prefix[r] : cols;
    const float* xr = x + (int64_t)r * cols;
    float* yr = y + (int64_t)r * cols;
    float m = -std::numeric_limits<float>::infinity();
    {
      __m256 vm = _mm256_set1_ps(m);
      int j = 0;
      for (; j + 8 <= valid; j += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(xr + j));
      if (j > 0) m = hmax(vm);
      for (; j < valid; ++j) m = xr[j] > m ? xr[j] : m;
    }
    const __m256 vm = _mm256_set1_ps(m);
    __m256 vs = _mm256_setzero_ps();
    int j = 0;
    for (; j + 8 <= valid; j += 8) {
      const __m256 e = exp256(_mm256_sub_ps(_mm256_loadu_ps(xr + j), vm));
      _mm256_storeu_ps(yr + j, e);
      vs = _mm256_add_ps(vs, e);
    }
    float sum = hsum(vs);
    for (; j < valid; ++j) {
      yr[j] = std::exp(xr[j] - m);
      sum += yr[j];
    }
    const float inv = sum > 0.0f ? 1.0f / sum : 0.0f;
    const __m256 vinv = _mm256_set1_ps(inv);
    j = 0;
    for (; j + 8 <= valid; j += 8) _mm256_storeu_ps(yr + j, _mm256_mul_ps(_mm256_loadu_ps(yr + j), vinv));
    for (; j < valid; ++j) yr[j] *= inv;
    if (valid < cols) std::memset(yr + valid, 0, (size_t)(cols - valid) * sizeof(float));
  }
}

float cross_entropy_rows(int rows, int cols, const float* logits, const int* targets,
                         float* dlogits, float grad_scale) {
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0) continue;
    const float* xr = logits + (int64_t)r * cols;
    const float m = reduce_max(cols, xr);
    const __m256 vm = _mm256_set1_ps(m);
    __m256 vs = _mm256_setzero_ps();
    int j = 0;
    for (; j + 8 <= cols; j += 8)
      vs = _mm256_add_ps(vs, exp256(_mm256_sub_ps(_mm256_loadu_ps(xr + j), vm)));
    float sum = hsum(vs);
    for (; j < cols; ++j) sum += std::exp(xr[j] - m);
    loss += m + std::log((double)sum) - xr[t];
    if (dlogits) {
      float* dr = dlogits + (int64_t)r * cols;
      const float scale = grad_scale / sum;
      const __m256 vscale = _mm256_set1_ps(scale);
      j = 0;
      for (; j + 8 <= cols; j += 8) {
        const __m256 e = exp256(_mm256_sub_ps(_mm256_loadu_ps(xr + j), vm));
        _mm256_storeu_ps(dr + j, _mm256_fmadd_ps(e, vscale, _mm256_loadu_ps(dr + j)));
      }
      for (; j < cols; ++j) dr[j] += scale * std::exp(xr[j] - m);
      dr[t] -= grad_scale;
    }
  }
  return (float)loss;
}

void argmin_rows(int rows, int cols, const float* scores, int* out) {
  const __m256i iota = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
  for (int r = 0; r < rows; ++r) {
    const float* sr = scores + (int64_t)r * cols;
    float best_val = sr[0];
    int best_idx = 0;
    int j = 0;
    if (cols >= 8) {
      __m256 vmin = _mm256_set1_ps(std::numeric_limits<float>::infinity());
      __m256i vidx = _mm256_setzero_si256();
      for (; j + 8 <= cols; j += 8) {
        const __m256 v = _mm256_loadu_ps(sr + j);
        const __m256 lt = _mm256_cmp_ps(v, vmin, _CMP_LT_OQ);
        vmin = _mm256_blendv_ps(vmin, v, lt);
        const __m256i ij = _mm256_add_epi32(_mm256_set1_epi32(j), iota);
        vidx = _mm256_blendv_epi8(vidx, ij, _mm256_castps_si256(lt));
      }
      alignas(32) float vals[8];
      alignas(32) int idxs[8];
      _mm256_store_ps(vals, vmin);
      _mm256_store_si256((__m256i*)idxs, vidx);
      best_val = vals[0];
      best_idx = idxs[0];
      for (int l = 1; l < 8; ++l)
        if (vals[l] < best_val || (vals[l] == best_val && idxs[l] < best_idx)) {
          best_val = vals[l];
          best_idx = idxs[l];
        }
    }
    for (; j < cols; ++j)
      if (sr[j] < best_val) {
        best_val = sr[j];
        best_idx = j;
      }
    out[r] = best_idx;
  }
}

void adamw_step(int64_t n, float* w, const float* g, float* m, float* v, float lr, float beta1,
                float beta2, float eps, float weight_decay, float bias_c1, float bias_c2) {
  const __m256 vb1 = _mm256_set1_ps(beta1);
  const __m256 vb1c = _mm256_set1_ps(1.0f - beta1);
  const __m256 vb2 = _mm256_set1_ps(beta2);
  const __m256 vb2c = _mm256_set1_ps(1.0f - beta2);
  const __m256 vic1 = _mm256_set1_ps(1.0f / bias_c1);
  const __m256 vic2 = _mm256_set1_ps(1.0f / bias_c2);
  const __m256 veps = _mm256_set1_ps(eps);
  const __m256 vlr = _mm256_set1_ps(lr);
  const __m256 vwd = _mm256_set1_ps(weight_decay);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gi = _mm256_loadu_ps(g + i);
    __m256 mi = _mm256_fmadd_ps(vb1c, gi, _mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)));
    __m256 vi = _mm256_fmadd_ps(vb2c, _mm256_mul_ps(gi, gi), _mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 mh = _mm256_mul_ps(mi, vic1);
    const __m256 vh = _mm256_mul_ps(vi, vic2);
    const __m256 den = _mm256_add_ps(_mm256_sqrt_ps(vh), veps);
    const __m256 wi = _mm256_loadu_ps(w + i);
    const __m256 upd = _mm256_fmadd_ps(vwd, wi, _mm256_div_ps(mh, den));
    _mm256_storeu_ps(w + i, _mm256_fnmadd_ps(vlr, upd, wi));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    const float mh = m[i] / bias_c1;
    const float vh = v[i] / bias_c2;
    w[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * w[i]);
  }
}

}  // namespace segvar::simd::avx2
