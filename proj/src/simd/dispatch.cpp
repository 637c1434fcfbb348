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

#include <cstdlib>
#include <cstring>

#include "segvar/simd/simd.hpp"

namespace segvar::simd {

namespace {

Level detect_best() {
#if defined(__x86_64__) && defined(SEGVAR_HAVE_X86_KERNELS)
  __builtin_cpu_init();
  const bool has_avx2 = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  const bool has_avx512 = __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512bw") &&
                          __builtin_cpu_supports("avx512vl") && __builtin_cpu_supports("avx512dq");
  if (has_avx512) return Level::avx512;
  if (has_avx2) return Level::avx2;
#endif
  return Level::scalar;
}

Level parse_env(Level best) {
  const char* s = std::getenv("SEGVAR_SIMD");
  if (!s) return best;
  Level want = best;
  if (std::strcmp(s, "scalar") == 0) want = Level::scalar;
  else if (std::strcmp(s, "avx2") == 0) want = Level::avx2;
  else if (std::strcmp(s, "avx512") == 0) want = Level::avx512;
  return (int)want <= (int)best ? want : best;
}

Level& active_ref() {
  static Level level = parse_env(detect_best());
  return level;
}

}  // namespace

Level best_supported() {
  static Level best = detect_best();
  return best;
}

Level active_level() { return active_ref(); }

void set_level(Level level) {
  active_ref() = (int)level <= (int)best_supported() ? level : best_supported();
}

const char* level_name(Level level) {
  switch (level) {
    case Level::avx512: return "avx512";
    case Level::avx2: return "avx2";
    default: return "scalar";
  }
}

#if defined(__x86_64__) && defined(SEGVAR_HAVE_X86_KERNELS)
#define SEGVAR_DISPATCH(fn, ...)                                   \
  switch (active_ref()) {                                          \
    case Level::avx512:                                            \
    case Level::avx2: return avx2::fn(__VA_ARGS__);                \
    default: return scalar::fn(__VA_ARGS__);                       \
  }
#define SEGVAR_DISPATCH_GEMM(...)                                  \
  switch (active_ref()) {                                          \
    case Level::avx512: return avx512::gemm(__VA_ARGS__);          \
    case Level::avx2: return avx2::gemm(__VA_ARGS__);              \
    default: return scalar::gemm(__VA_ARGS__);                     \
  }
#else
#define SEGVAR_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__);
#define SEGVAR_DISPATCH_GEMM(...) return scalar::gemm(__VA_ARGS__);
#endif

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  SEGVAR_DISPATCH_GEMM(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc)
}

void axpby(int64_t n, float alpha, const float* x, float beta, float* y) {
  SEGVAR_DISPATCH(axpby, n, alpha, x, beta, y)
}

float reduce_sum(int64_t n, const float* x) { SEGVAR_DISPATCH(reduce_sum, n, x) }

float reduce_max(int64_t n, const float* x) { SEGVAR_DISPATCH(reduce_max, n, x) }

float reduce_sumsq(int64_t n, const float* x) { SEGVAR_DISPATCH(reduce_sumsq, n, x) }

float reduce_abs_diff(int64_t n, const float* x, const float* y) {
  SEGVAR_DISPATCH(reduce_abs_diff, n, x, y)
}

float reduce_sq_diff(int64_t n, const float* x, const float* y) {
  SEGVAR_DISPATCH(reduce_sq_diff, n, x, y)
}

float dot(int64_t n, const float* x, const float* y) { SEGVAR_DISPATCH(dot, n, x, y) }

void silu(int64_t n, const float* x, float* y) { SEGVAR_DISPATCH(silu, n, x, y) }

void silu_backward(int64_t n, const float* x, const float* dy, float* dx) {
  SEGVAR_DISPATCH(silu_backward, n, x, dy, dx)
}

void softmax_rows(int rows, int cols, const float* x, float* y, const int* prefix) {
  SEGVAR_DISPATCH(softmax_rows, rows, cols, x, y, prefix)
}

float cross_entropy_rows(int rows, int cols, const float* logits, const int* targets,
                         float* dlogits, float grad_scale) {
  SEGVAR_DISPATCH(cross_entropy_rows, rows, cols, logits, targets, dlogits, grad_scale)
}

void argmin_rows(int rows, int cols, const float* scores, int* out) {
  SEGVAR_DISPATCH(argmin_rows, rows, cols, scores, out)
}

void adamw_step(int64_t n, float* w, const float* g, float* m, float* v, float lr, float beta1,
                float beta2, float eps, float weight_decay, float bias_c1, float bias_c2) {
  SEGVAR_DISPATCH(adamw_step, n, w, g, m, v, lr, beta1, beta2, eps, weight_decay, bias_c1, bias_c2)
}

}  // namespace segvar::simd
