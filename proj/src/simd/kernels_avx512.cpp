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

// AVX-512 GEMM microkernel (12x32, 24 zmm accumulators). Compiled with
// -mavx512f/bw/vl/dq; only reachable after dispatch checks CPUID.

#include <immintrin.h>

#include "gemm_driver.hpp"
#include "segvar/simd/simd.hpp"

namespace segvar::simd::avx512 {

namespace {

struct MicroAvx512 {
  static constexpr int MR = 12;
  static constexpr int NR = 32;
  static void run(int kc, const float* ap, const float* bp, float* acc) {
    __m512 c[MR][2];
    for (int i = 0; i < MR; ++i) {
      c[i][0] = _mm512_setzero_ps();
      c[i][1] = _mm512_setzero_ps();
    }
    for (int k = 0; k < kc; ++k) {
      const __m512 b0 = _mm512_loadu_ps(bp + (size_t)k * NR);
      const __m512 b1 = _mm512_loadu_ps(bp + (size_t)k * NR + 16);
      const float* ak = ap + (size_t)k * MR;
#pragma GCC unroll 12
      for (int i = 0; i < MR; ++i) {
        const __m512 ai = _mm512_set1_ps(ak[i]);
        c[i][0] = _mm512_fmadd_ps(ai, b0, c[i][0]);
        c[i][1] = _mm512_fmadd_ps(ai, b1, c[i][1]);
      }
    }
    for (int i = 0; i < MR; ++i) {
      _mm512_storeu_ps(acc + (size_t)i * NR, c[i][0]);
      _mm512_storeu_ps(acc + (size_t)i * NR + 16, c[i][1]);
    }
  }
};

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  detail::gemm_blocked<MicroAvx512>(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace segvar::simd::avx512
