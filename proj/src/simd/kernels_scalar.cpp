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

// Plain-loop reference kernels. Deliberately naive: the vector variants are
// validated against these, so they must stay obviously correct.

#include <cmath>
#include <cstring>
#include <limits>

#include "segvar/simd/simd.hpp"

namespace segvar::simd::scalar {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        const float av = trans_a ? a[(int64_t)p * lda + i] : a[(int64_t)i * lda + p];
        const float bv = trans_b ? b[(int64_t)j * ldb + p] : b[(int64_t)p * ldb + j];
        acc += (double)av * (double)bv;
      }
      float* cij = c + (int64_t)i * ldc + j;
      *cij = alpha * (float)acc + (beta == 0.0f ? 0.0f : beta * *cij);
    }
  }
}

void axpby(int64_t n, float alpha, const float* x, float beta, float* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = alpha * x[i] + beta * y[i];
}

float reduce_sum(int64_t n, const float* x) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return (float)s;
}

float reduce_max(int64_t n, const float* x) {
  float m = -std::numeric_limits<float>::infinity();
  for (int64_t i = 0; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

float reduce_sumsq(int64_t n, const float* x) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += (double)x[i] * (double)x[i];
  return (float)s;
}

float reduce_abs_diff(int64_t n, const float* x, const float* y) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += std::fabs((double)x[i] - (double)y[i]);
  return (float)s;
}

float reduce_sq_diff(int64_t n, const float* x, const float* y) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = (double)x[i] - (double)y[i];
    s += d * d;
  }
  return (float)s;
}

float dot(int64_t n, const float* x, const float* y) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += (double)x[i] * (double)y[i];
  return (float)s;
}

void silu(int64_t n, const float* x, float* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void silu_backward(int64_t n, const float* x, const float* dy, float* dx) {
  for (int64_t i = 0; i < n; ++i) {
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
    for (int j = 0; j < valid; ++j) m = xr[j] > m ? xr[j] : m;
    double sum = 0.0;
    for (int j = 0; j < valid; ++j) {
      yr[j] = std::exp(xr[j] - m);
      sum += yr[j];
    }
    const float inv = sum > 0.0 ? (float)(1.0 / sum) : 0.0f;
    for (int j = 0; j < valid; ++j) yr[j] *= inv;
    for (int j = valid; j < cols; ++j) yr[j] = 0.0f;
  }
}

float cross_entropy_rows(int rows, int cols, const float* logits, const int* targets,
                         float* dlogits, float grad_scale) {
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0) continue;
    const float* xr = logits + (int64_t)r * cols;
    float m = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < cols; ++j) m = xr[j] > m ? xr[j] : m;
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) sum += std::exp((double)xr[j] - m);
    loss += m + std::log(sum) - xr[t];
    if (dlogits) {
      float* dr = dlogits + (int64_t)r * cols;
      const double inv = 1.0 / sum;
      for (int j = 0; j < cols; ++j)
        dr[j] += grad_scale * ((float)(std::exp((double)xr[j] - m) * inv) - (j == t ? 1.0f : 0.0f));
    }
  }
  return (float)loss;
}

void argmin_rows(int rows, int cols, const float* scores, int* out) {
  for (int r = 0; r < rows; ++r) {
    const float* sr = scores + (int64_t)r * cols;
    int best = 0;
    for (int j = 1; j < cols; ++j)
      if (sr[j] < sr[best]) best = j;
    out[r] = best;
  }
}

void adamw_step(int64_t n, float* w, const float* g, float* m, float* v, float lr, float beta1,
                float beta2, float eps, float weight_decay, float bias_c1, float bias_c2) {
  for (int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    const float mh = m[i] / bias_c1;
    const float vh = v[i] / bias_c2;
    w[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * w[i]);
  }
}

}  // namespace segvar::simd::scalar
