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

#include <algorithm>
#include <cstring>
#include <vector>

namespace segvar::simd::detail {

// Cache blocking for the packed GEMM. Tuned for a single core with 48K L1D /
// 2M L2: the A block (MC x KC floats) stays L2-resident, one B panel
// (KC x NR) streams through L1.
inline constexpr int kBlockM = 132;   // multiple of common MR (4, 6, 12)
inline constexpr int kBlockK = 256;
inline constexpr int kBlockN = 2048;

// Packs a kc x nr B panel (k-major: bp[k*NR + j]) with zero padding.
template <int NR>
inline void pack_b_panel(int kc, int nr, bool trans_b, const float* b, int ldb, float* bp) {
  if (!trans_b && nr == NR) {
    for (int k = 0; k < kc; ++k) std::memcpy(bp + (int64_t)k * NR, b + (int64_t)k * ldb, NR * sizeof(float));
    return;
  }
  for (int k = 0; k < kc; ++k) {
    for (int j = 0; j < nr; ++j) bp[k * NR + j] = trans_b ? b[(int64_t)j * ldb + k] : b[(int64_t)k * ldb + j];
    for (int j = nr; j < NR; ++j) bp[k * NR + j] = 0.0f;
  }
}

// Packs an mr x kc A panel (k-major: ap[k*MR + i]) with zero padding.
template <int MR>
inline void pack_a_panel(int kc, int mr, bool trans_a, const float* a, int lda, float* ap) {
  for (int k = 0; k < kc; ++k) {
    for (int i = 0; i < mr; ++i) ap[k * MR + i] = trans_a ? a[(int64_t)k * lda + i] : a[(int64_t)i * lda + k];
    for (int i = mr; i < MR; ++i) ap[k * MR + i] = 0.0f;
  }
}

// Micro expects: static constexpr int MR, NR;
// static void run(int kc, const float* ap, const float* bp, float* acc)
// where acc is a zeroed MR x NR row-major tile the kernel accumulates into.
template <class Micro>
void gemm_blocked(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                  int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  constexpr int MR = Micro::MR;
  constexpr int NR = Micro::NR;

  if (m <= 0 || n <= 0) return;
  if (k <= 0 || alpha == 0.0f) {
    for (int i = 0; i < m; ++i) {
      float* ci = c + (int64_t)i * ldc;
      if (beta == 0.0f) std::memset(ci, 0, (size_t)n * sizeof(float));
      else if (beta != 1.0f)
        for (int j = 0; j < n; ++j) ci[j] *= beta;
    }
    return;
  }

  static thread_local std::vector<float> a_pack, b_pack;
  a_pack.resize((size_t)kBlockM * kBlockK);
  b_pack.resize((size_t)kBlockK * kBlockN);
  alignas(64) float acc[MR * NR];

  for (int jc = 0; jc < n; jc += kBlockN) {
    const int nc = std::min(kBlockN, n - jc);
    const int n_panels = (nc + NR - 1) / NR;
    for (int pc = 0; pc < k; pc += kBlockK) {
      const int kc = std::min(kBlockK, k - pc);
      const float eff_beta = pc == 0 ? beta : 1.0f;
      for (int p = 0; p < n_panels; ++p) {
        const int j0 = jc + p * NR;
        const float* bsrc = trans_b ? b + (int64_t)j0 * ldb + pc : b + (int64_t)pc * ldb + j0;
        pack_b_panel<NR>(kc, std::min(NR, n - j0), trans_b, bsrc, ldb, b_pack.data() + (size_t)p * kBlockK * NR);
      }
      for (int ic = 0; ic < m; ic += kBlockM) {
        const int mc = std::min(kBlockM, m - ic);
        const int m_panels = (mc + MR - 1) / MR;
        for (int q = 0; q < m_panels; ++q) {
          const int i0 = ic + q * MR;
          const float* asrc = trans_a ? a + (int64_t)pc * lda + i0 : a + (int64_t)i0 * lda + pc;
          pack_a_panel<MR>(kc, std::min(MR, m - i0), trans_a, asrc, lda, a_pack.data() + (size_t)q * kBlockK * MR);
        }
        for (int p = 0; p < n_panels; ++p) {
          const int j0 = jc + p * NR;
          const int nr = std::min(NR, n - j0);
          for (int q = 0; q < m_panels; ++q) {
            const int i0 = ic + q * MR;
            const int mr = std::min(MR, m - i0);
            std::memset(acc, 0, sizeof(acc));
            Micro::run(kc, a_pack.data() + (size_t)q * kBlockK * MR, b_pack.data() + (size_t)p * kBlockK * NR, acc);
            for (int i = 0; i < mr; ++i) {
              float* ci = c + (int64_t)(i0 + i) * ldc + j0;
              const float* ai = acc + i * NR;
              if (eff_beta == 0.0f)
                for (int j = 0; j < nr; ++j) ci[j] = alpha * ai[j];
              else
                for (int j = 0; j < nr; ++j) ci[j] = alpha * ai[j] + eff_beta * ci[j];
            }
          }
        }
      }
    }
  }
}

}  // namespace segvar::simd::detail
