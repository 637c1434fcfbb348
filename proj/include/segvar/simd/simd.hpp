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

#pragma once

#include <cstdint>

namespace segvar::simd {

// Kernel tiers. "scalar" is the plain-loop reference every vector variant is
// equivalence-tested against; avx2/avx512 are selected at runtime from CPUID.
// SEGVAR_SIMD=scalar|avx2|avx512 overrides the selection (clamped to what the
// host supports).
enum class Level : int { scalar = 0, avx2 = 1, avx512 = 2 };

Level best_supported();
Level active_level();
void set_level(Level level);  // test hook; clamps to best_supported()
const char* level_name(Level level);

// C = alpha * op(A) * op(B) + beta * C; row-major, op = optional transpose.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);

// y = alpha * x + beta * y
void axpby(int64_t n, float alpha, const float* x, float beta, float* y);

float reduce_sum(int64_t n, const float* x);
float reduce_max(int64_t n, const float* x);
float reduce_sumsq(int64_t n, const float* x);
float reduce_abs_diff(int64_t n, const float* x, const float* y);
float reduce_sq_diff(int64_t n, const float* x, const float* y);
float dot(int64_t n, const float* x, const float* y);

void silu(int64_t n, const float* x, float* y);
// dx += dy * silu'(x)
void silu_backward(int64_t n, const float* x, const float* dy, float* dx);

// Row-wise softmax. If prefix is non-null, row i uses only the first
// prefix[i] columns and the remainder of the output row is exactly zero
// (attention masking relies on the exactness).
void softmax_rows(int rows, int cols, const float* x, float* y, const int* prefix);

// Fused softmax cross-entropy over rows. targets[i] in [0, cols), or -1 to
// skip the row. Returns the summed loss over scored rows. When dlogits is
// non-null, accumulates grad_scale * (softmax(x_i) - onehot(t_i)) into it.
float cross_entropy_rows(int rows, int cols, const float* logits, const int* targets,
                         float* dlogits, float grad_scale);

// Row-wise argmin with ties broken toward the lowest index.
void argmin_rows(int rows, int cols, const float* scores, int* out);

// AdamW with decoupled weight decay; bias_c1/bias_c2 are 1-beta^t corrections.
void adamw_step(int64_t n, float* w, const float* g, float* m, float* v, float lr, float beta1,
                float beta2, float eps, float weight_decay, float bias_c1, float bias_c2);

// Per-level entry points, exposed for equivalence tests.
namespace scalar {
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void axpby(int64_t n, float alpha, const float* x, float beta, float* y);
float reduce_sum(int64_t n, const float* x);
float reduce_max(int64_t n, const float* x);
float reduce_sumsq(int64_t n, const float* x);
float reduce_abs_diff(int64_t n, const float* x, const float* y);
float reduce_sq_diff(int64_t n, const float* x, const float* y);
float dot(int64_t n, const float* x, const float* y);
void silu(int64_t n, const float* x, float* y);
void silu_backward(int64_t n, const float* x, const float* dy, float* dx);
void softmax_rows(int rows, int cols, const float* x, float* y, const int* prefix);
float cross_entropy_rows(int rows, int cols, const float* logits, const int* targets,
                         float* dlogits, float grad_scale);
void argmin_rows(int rows, int cols, const float* scores, int* out);
void adamw_step(int64_t n, float* w, const float* g, float* m, float* v, float lr, float beta1,
                float beta2, float eps, float weight_decay, float bias_c1, float bias_c2);
}  // namespace scalar

namespace avx2 {
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void axpby(int64_t n, float alpha, const float* x, float beta, float* y);
float reduce_sum(int64_t n, const float* x);
float reduce_max(int64_t n, const float* x);
float reduce_sumsq(int64_t n, const float* x);
float reduce_abs_diff(int64_t n, const float* x, const float* y);
float reduce_sq_diff(int64_t n, const float* x, const float* y);
float dot(int64_t n, const float* x, const float* y);
void silu(int64_t n, const float* x, float* y);
void silu_backward(int64_t n, const float* x, const float* dy, float* dx);
void softmax_rows(int rows, int cols, const float* x, float* y, const int* prefix);
float cross_entropy_rows(int rows, int cols, const float* logits, const int* targets,
                         float* dlogits, float grad_scale);
void argmin_rows(int rows, int cols, const float* scores, int* out);
void adamw_step(int64_t n, float* w, const float* g, float* m, float* v, float lr, float beta1,
                float beta2, float eps, float weight_decay, float bias_c1, float bias_c2);
}  // namespace avx2

namespace avx512 {
// AVX-512 currently accelerates the GEMM only; other kernels fall through to
// the avx2 variants in the dispatch table.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
}  // namespace avx512

}  // namespace segvar::simd
