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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "segvar/core/error.hpp"
#include "segvar/core/hash.hpp"
#include "segvar/core/rng.hpp"
#include "segvar/core/serialize.hpp"
#include "segvar/core/tensor.hpp"

using namespace segvar;

TEST_CASE("tensor shape, numel, indexing") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(2) == 4);
  t.at(1, 2, 3) = 5.0f;
  CHECK(t.data[23] == 5.0f);
  t.reshape({6, 4});
  CHECK(t.dim(0) == 6);
  CHECK(t.at(5, 3) == 5.0f);
  CHECK_THROWS_AS(t.reshape({7, 4}), Error);
}

TEST_CASE("rng determinism and save/restore") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  auto st = a.save();
  std::vector<float> expect;
  for (int i = 0; i < 16; ++i) expect.push_back(a.normal());
  a.restore(st);
  for (int i = 0; i < 16; ++i) CHECK(a.normal() == expect[(size_t)i]);
  // distinct seeds diverge
  Rng c(124);
  CHECK(c.next_u64() != b.next_u64());
}

TEST_CASE("rng uniform and normal distribution sanity") {
  Rng r(7);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const float u = r.uniform();
    CHECK(u >= 0.0f);
    CHECK(u < 1.0f);
    sum += u;
    sumsq += (double)u * u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(sumsq / n - (sum / n) * (sum / n) == doctest::Approx(1.0 / 12.0).epsilon(0.02));

  sum = sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const float x = r.normal();
    sum += x;
    sumsq += (double)x * x;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02).scale(1.0));
  CHECK(sumsq / n == doctest::Approx(1.0).epsilon(0.02));

  for (int i = 0; i < 1000; ++i) {
    const int64_t v = r.uniform_int(17);
    CHECK(v >= 0);
    CHECK(v < 17);
  }
}

TEST_CASE("fnv1a64 known vectors") {
  // Published FNV-1a 64 test vectors.
  CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ULL);
  CHECK(hash_hex(0xaf63dc4c8601ec8cULL) == "af63dc4c8601ec8c");
  CHECK(hash_hex(0x1ULL) == "0000000000000001");
}

TEST_CASE("hash_file matches in-memory hash") {
  const auto path = std::filesystem::temp_directory_path() / "segvar_hash_test.bin";
  {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    REQUIRE(f != nullptr);
    const char payload[] = "foobar";
    std::fwrite(payload, 1, 6, f);
    std::fclose(f);
  }
  CHECK(hash_file(path.string()) == 0x85944171f73967e8ULL);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(hash_file(path.string()), Error);
}

TEST_CASE("binary serialization roundtrip") {
  const auto path = std::filesystem::temp_directory_path() / "segvar_ser_test.bin";
  Tensor t({2, 3});
  for (int i = 0; i < 6; ++i) t.data[(size_t)i] = 0.5f * (float)i - 1.0f;
  {
    BinWriter w(path.string());
    w.magic("SEGVARTS");
    w.u8(7);
    w.u32(0xdeadbeefu);
    w.u64(0x0123456789abcdefULL);
    w.f32(-2.5f);
    w.str("hello");
    w.tensor(t);
    w.close();
  }
  {
    BinReader r(path.string());
    r.expect_magic("SEGVARTS");
    CHECK(r.u8() == 7);
    CHECK(r.u32() == 0xdeadbeefu);
    CHECK(r.u64() == 0x0123456789abcdefULL);
    CHECK(r.f32() == -2.5f);
    CHECK(r.str() == "hello");
    Tensor u = r.tensor();
    CHECK(u.shape == t.shape);
    CHECK(u.data == t.data);
  }
  {
    BinReader r(path.string());
    CHECK_THROWS_AS(r.expect_magic("WRONGMAG"), Error);
  }
  std::filesystem::remove(path);
}

TEST_CASE("error kinds map to exit codes") {
  try {
    throw_validation("bad flag");
  } catch (const Error& e) {
    CHECK(e.kind() == Error::Kind::validation);
    CHECK(std::string(e.what()) == "bad flag");
  }
  try {
    throw_runtime("op failed");
  } catch (const Error& e) {
    CHECK(e.kind() == Error::Kind::runtime);
  }
  CHECK_THROWS_AS(check(false, "nope"), Error);
  CHECK_NOTHROW(check(true, "fine"));
}
