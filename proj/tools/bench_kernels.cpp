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

// Micro-benchmark for the kernel tiers. Prints GFLOP/s per level so config
// step budgets can be sanity-checked against the host.

#include <chrono>
#include <cstdio>
#include <vector>

#include "segvar/core/rng.hpp"
#include "segvar/simd/simd.hpp"

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void bench_gemm(segvar::simd::Level level, int m, int n, int k) {
  segvar::simd::set_level(level);
  if (segvar::simd::active_level() != level) return;
  segvar::Rng rng(7);
  std::vector<float> a((size_t)m * k), b((size_t)k * n), c((size_t)m * n, 0.0f);
  for (auto& v : a) v = rng.uniform(-1.0f, 1.0f);
  for (auto& v : b) v = rng.uniform(-1.0f, 1.0f);
  const double flops = 2.0 * m * n * k;
  int reps = 1;
  double dt = 0.0;
  for (;;) {
    const double t0 = now_s();
    for (int r = 0; r < reps; ++r)
      segvar::simd::gemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, c.data(), n);
    dt = now_s() - t0;
    if (dt > 0.5 || reps > (1 << 20)) break;
    reps *= 2;
  }
  std::printf("gemm %-7s m=%-5d n=%-5d k=%-5d %8.2f GFLOP/s\n", segvar::simd::level_name(level), m,
              n, k, flops * reps / dt / 1e9);
}

void bench_softmax(segvar::simd::Level level, int rows, int cols) {
  segvar::simd::set_level(level);
  if (segvar::simd::active_level() != level) return;
  segvar::Rng rng(7);
  std::vector<float> x((size_t)rows * cols), y(x.size());
  for (auto& v : x) v = rng.uniform(-4.0f, 4.0f);
  int reps = 1;
  double dt = 0.0;
  for (;;) {
    const double t0 = now_s();
    for (int r = 0; r < reps; ++r)
      segvar::simd::softmax_rows(rows, cols, x.data(), y.data(), nullptr);
    dt = now_s() - t0;
    if (dt > 0.3 || reps > (1 << 20)) break;
    reps *= 2;
  }
  std::printf("softmax %-7s rows=%-5d cols=%-5d %8.2f Gelem/s\n", segvar::simd::level_name(level),
              rows, cols, (double)rows * cols * reps / dt / 1e9);
}

}  // namespace

int main() {
  using segvar::simd::Level;
  std::printf("best supported: %s\n", segvar::simd::level_name(segvar::simd::best_supported()));
  for (Level level : {Level::scalar, Level::avx2, Level::avx512}) {
    bench_gemm(level, 256, 256, 256);
    bench_gemm(level, 512, 512, 512);
    bench_gemm(level, 1024, 1024, 1024);
    bench_gemm(level, 64, 512, 128);
  }
  for (Level level : {Level::avx2, Level::avx512}) bench_softmax(level, 4096, 512);
  return 0;
}
