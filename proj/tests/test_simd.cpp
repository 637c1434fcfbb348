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

// Equivalence tests: every vector kernel tier must agree with the plain-loop
// scalar reference within float tolerances. On hosts without AVX2/AVX-512 the
// corresponding sections are skipped.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "segvar/core/rng.hpp"
#include "segvar/simd/simd.hpp"

using namespace segvar;
using simd::Level;

namespace {

bool has(Level level) { return (int)simd::best_supported() >= (int)level; }

std::vector<float> randn(Rng& rng, size_t n, float scale = 1.0f) {
  std::vector<float> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  REQUIRE(a.size() == b.size());
  float m = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

using GemmFn = void (*)(bool, bool, int, int, int, float, const float*, int, const float*, int,
                        float, float*, int);

void check_gemm_matches(GemmFn fn, const char* name) {
  Rng rng(42);
  const int shapes[][3] = {{1, 1, 1},   {3, 5, 7},    {6, 16, 8},    {13, 33, 65},
                           {64, 64, 64}, {100, 37, 200}, {150, 300, 17}, {257, 129, 80}};
  for (const auto& s : shapes) {
    const int m = s[0], n = s[1], k = s[2];
    for (const bool ta : {false, true}) {
      for (const bool tb : {false, true}) {
        const int lda = ta ? m + 2 : k + 3;
        const int ldb = tb ? k + 1 : n + 2;
        const int ldc = n + 4;
        auto a = randn(rng, (size_t)(ta ? k : m) * lda);
        auto b = randn(rng, (size_t)(tb ? n : k) * ldb);
        auto c0 = randn(rng, (size_t)m * ldc);
        auto c1 = c0;
        const float alpha = 1.3f, beta = -0.4f;
        simd::scalar::gemm(ta, tb, m, n, k, alpha, a.data(), lda, b.data(), ldb, beta, c0.data(), ldc);
        fn(ta, tb, m, n, k, alpha, a.data(), lda, b.data(), ldb, beta, c1.data(), ldc);
        float max_rel = 0.0f;
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            const float r = c0[(size_t)i * ldc + j];
            const float v = c1[(size_t)i * ldc + j];
            max_rel = std::max(max_rel, std::fabs(v - r) / (std::fabs(r) + 1.0f));
          }
        }
        INFO(name, " m=", m, " n=", n, " k=", k, " ta=", ta, " tb=", tb);
        CHECK(max_rel < 2e-5f);
      }
    }
  }
  // beta=0 must overwrite even when C starts with garbage (NaN).
  std::vector<float> a(4, 1.0f), b(4, 2.0f), c(4, std::numeric_limits<float>::quiet_NaN());
  fn(false, false, 2, 2, 2, 1.0f, a.data(), 2, b.data(), 2, 0.0f, c.data(), 2);
  for (float v : c) CHECK(v == 4.0f);
  // alpha=0 short-circuit scales C only.
  std::vector<float> c2{1.0f, 2.0f, 3.0f, 4.0f};
  fn(false, false, 2, 2, 2, 0.0f, a.data(), 2, b.data(), 2, 0.5f, c2.data(), 2);
  CHECK(c2[0] == 0.5f);
  CHECK(c2[3] == 2.0f);
}

}  // namespace

TEST_CASE("gemm avx2 matches scalar") {
  if (!has(Level::avx2)) return;
  check_gemm_matches(&simd::avx2::gemm, "avx2");
}

TEST_CASE("gemm avx512 matches scalar") {
  if (!has(Level::avx512)) return;
  check_gemm_matches(&simd::avx512::gemm, "avx512");
}

TEST_CASE("elementwise and reduction kernels match scalar") {
  if (!has(Level::avx2)) return;
  Rng rng(7);
  for (const int64_t n : {1, 7, 8, 63, 64, 1000, 4097}) {
    auto x = randn(rng, (size_t)n, 2.0f);
    auto y = randn(rng, (size_t)n, 2.0f);

    auto y0 = y, y1 = y;
    simd::scalar::axpby(n, 1.7f, x.data(), -0.3f, y0.data());
    simd::avx2::axpby(n, 1.7f, x.data(), -0.3f, y1.data());
    CHECK(max_abs_diff(y0, y1) < 1e-5f);

    const float rel = 1e-4f;
    CHECK(simd::avx2::reduce_sum(n, x.data()) ==
          doctest::Approx(simd::scalar::reduce_sum(n, x.data())).epsilon(rel));
    CHECK(simd::avx2::reduce_max(n, x.data()) == simd::scalar::reduce_max(n, x.data()));
    CHECK(simd::avx2::reduce_sumsq(n, x.data()) ==
          doctest::Approx(simd::scalar::reduce_sumsq(n, x.data())).epsilon(rel));
    CHECK(simd::avx2::reduce_abs_diff(n, x.data(), y.data()) ==
          doctest::Approx(simd::scalar::reduce_abs_diff(n, x.data(), y.data())).epsilon(rel));
    CHECK(simd::avx2::reduce_sq_diff(n, x.data(), y.data()) ==
          doctest::Approx(simd::scalar::reduce_sq_diff(n, x.data(), y.data())).epsilon(rel));
    CHECK(simd::avx2::dot(n, x.data(), y.data()) ==
          doctest::Approx(simd::scalar::dot(n, x.data(), y.data())).epsilon(rel).scale(1.0));
  }
}

TEST_CASE("silu forward/backward match scalar") {
  if (!has(Level::avx2)) return;
  Rng rng(9);
  const int64_t n = 2001;
  auto x = randn(rng, (size_t)n, 6.0f);
  x[0] = -40.0f;  // saturation edges
  x[1] = 40.0f;
  x[2] = 0.0f;
  std::vector<float> f0((size_t)n), f1((size_t)n);
  simd::scalar::silu(n, x.data(), f0.data());
  simd::avx2::silu(n, x.data(), f1.data());
  CHECK(max_abs_diff(f0, f1) < 1e-5f);

  auto dy = randn(rng, (size_t)n);
  auto dx0 = randn(rng, (size_t)n), dx1 = dx0;
  simd::scalar::silu_backward(n, x.data(), dy.data(), dx0.data());
  simd::avx2::silu_backward(n, x.data(), dy.data(), dx1.data());
  CHECK(max_abs_diff(dx0, dx1) < 1e-5f);
}

TEST_CASE("softmax rows match scalar and masked tail is exactly zero") {
  if (!has(Level::avx2)) return;
  Rng rng(11);
  const int rows = 17, cols = 67;
  auto x = randn(rng, (size_t)rows * cols, 3.0f);
  std::vector<int> prefix(rows);
  for (int r = 0; r < rows; ++r) prefix[(size_t)r] = 1 + (int)rng.uniform_int(cols);
  prefix[0] = cols;
  prefix[1] = 1;

  std::vector<float> y0(x.size()), y1(x.size());
  for (const int* p : {(const int*)nullptr, (const int*)prefix.data()}) {
    simd::scalar::softmax_rows(rows, cols, x.data(), y0.data(), p);
    simd::avx2::softmax_rows(rows, cols, x.data(), y1.data(), p);
    CHECK(max_abs_diff(y0, y1) < 2e-6f);
    for (int r = 0; r < rows; ++r) {
      const int valid = p ? p[r] : cols;
      float sum = 0.0f;
      for (int j = 0; j < cols; ++j) {
        if (j >= valid) {
          CHECK(y1[(size_t)r * cols + j] == 0.0f);  // exact
        }
        sum += y1[(size_t)r * cols + j];
      }
      CHECK(sum == doctest::Approx(1.0f).epsilon(1e-4));
    }
  }
}

TEST_CASE("cross entropy loss and gradient match scalar") {
  if (!has(Level::avx2)) return;
  Rng rng(13);
  const int rows = 23, cols = 131;
  auto logits = randn(rng, (size_t)rows * cols, 4.0f);
  std::vector<int> targets(rows);
  for (int r = 0; r < rows; ++r) targets[(size_t)r] = (int)rng.uniform_int(cols);
  targets[3] = -1;  // skipped row
  targets[9] = -1;

  std::vector<float> d0((size_t)rows * cols, 0.25f), d1 = d0;
  const float l0 = simd::scalar::cross_entropy_rows(rows, cols, logits.data(), targets.data(),
                                                    d0.data(), 0.5f);
  const float l1 = simd::avx2::cross_entropy_rows(rows, cols, logits.data(), targets.data(),
                                                  d1.data(), 0.5f);
  CHECK(l1 == doctest::Approx(l0).epsilon(1e-5));
  CHECK(max_abs_diff(d0, d1) < 1e-5f);
  // skipped rows leave gradient untouched
  for (int j = 0; j < cols; ++j) CHECK(d1[(size_t)3 * cols + j] == 0.25f);

  const float lnull = simd::avx2::cross_entropy_rows(rows, cols, logits.data(), targets.data(),
                                                     nullptr, 1.0f);
  CHECK(lnull == doctest::Approx(l0).epsilon(1e-5));
}

TEST_CASE("argmin rows match scalar exactly including ties") {
  if (!has(Level::avx2)) return;
  Rng rng(17);
  for (const int cols : {1, 5, 8, 9, 33, 512}) {
    const int rows = 19;
    auto s = randn(rng, (size_t)rows * cols);
    // plant exact duplicated minima to exercise lowest-index tie-breaking
    for (int r = 0; r < rows; ++r) {
      if (cols >= 9) {
        s[(size_t)r * cols + 2] = -100.0f;
        s[(size_t)r * cols + 8] = -100.0f;
        if (r % 2 == 0) s[(size_t)r * cols + cols - 1] = -100.0f;
      }
    }
    std::vector<int> o0(rows), o1(rows);
    simd::scalar::argmin_rows(rows, cols, s.data(), o0.data());
    simd::avx2::argmin_rows(rows, cols, s.data(), o1.data());
    for (int r = 0; r < rows; ++r) {
      INFO("cols=", cols, " row=", r);
      CHECK(o0[(size_t)r] == o1[(size_t)r]);
      if (cols >= 9) CHECK(o0[(size_t)r] == 2);
    }
  }
}

TEST_CASE("adamw step matches scalar") {
  if (!has(Level::avx2)) return;
  Rng rng(19);
  const int64_t n = 517;
  auto w = randn(rng, (size_t)n), g = randn(rng, (size_t)n);
  auto m = randn(rng, (size_t)n, 0.1f), v = randn(rng, (size_t)n, 0.01f);
  for (auto& x : v) x = std::fabs(x);
  auto w1 = w, m1 = m, v1 = v;
  const float lr = 1e-3f, b1 = 0.9f, b2 = 0.999f, eps = 1e-8f, wd = 0.05f;
  const float c1 = 1.0f - std::pow(b1, 7.0f), c2 = 1.0f - std::pow(b2, 7.0f);
  simd::scalar::adamw_step(n, w.data(), g.data(), m.data(), v.data(), lr, b1, b2, eps, wd, c1, c2);
  simd::avx2::adamw_step(n, w1.data(), g.data(), m1.data(), v1.data(), lr, b1, b2, eps, wd, c1, c2);
  CHECK(max_abs_diff(w, w1) < 1e-6f);
  CHECK(max_abs_diff(m, m1) < 1e-6f);
  CHECK(max_abs_diff(v, v1) < 1e-6f);
}

TEST_CASE("dispatch honors set_level and SEGVAR_SIMD clamp") {
  const Level best = simd::best_supported();
  simd::set_level(Level::scalar);
  CHECK(simd::active_level() == Level::scalar);
  simd::set_level(Level::avx512);  // clamped to best
  CHECK((int)simd::active_level() <= (int)best);
  CHECK(simd::active_level() == ((int)best >= (int)Level::avx512 ? Level::avx512 : best));
  simd::set_level(best);
  CHECK(std::string(simd::level_name(Level::scalar)) == "scalar");
  CHECK(std::string(simd::level_name(Level::avx2)) == "avx2");
  CHECK(std::string(simd::level_name(Level::avx512)) == "avx512");
}
