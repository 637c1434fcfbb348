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
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "segvar/core/error.hpp"
#include "segvar/core/tensor.hpp"

namespace segvar {

// Little-endian binary writer/reader for the on-disk containers. x86-only
// builds could write raw memory, but the formats are defined byte-wise so the
// helpers stay explicit.
class BinWriter {
public:
  explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw_io("cannot open for writing: " + path);
    path_ = path;
  }

  void magic(const char m[8]) { out_.write(m, 8); }
  void u8(uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), 1); }
  void u32(uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    out_.write(b, 4);
  }
  void u64(uint64_t v) {
    u32(static_cast<uint32_t>(v & 0xffffffffULL));
    u32(static_cast<uint32_t>(v >> 32));
  }
  void f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void bytes(const void* p, size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void f32_array(const float* p, size_t n) { bytes(p, n * 4); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) u64(static_cast<uint64_t>(d));
    f32_array(t.ptr(), static_cast<size_t>(t.numel()));
  }

  void close() {
    out_.close();
    if (!out_) throw_io("write failed: " + path_);
  }

private:
  std::ofstream out_;
  std::string path_;
};

class BinReader {
public:
  explicit BinReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw_io("cannot open for reading: " + path);
    path_ = path;
  }

  void expect_magic(const char m[8]) {
    char got[8];
    read(got, 8);
    if (std::memcmp(got, m, 8) != 0)
      throw_io("bad magic in " + path_ + " (expected " + std::string(m, 8) + ")");
  }
  uint8_t u8() {
    uint8_t v;
    read(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint8_t b[4];
    read(b, 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
  }
  uint64_t u64() {
    uint64_t lo = u32();
    uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() {
    uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  void bytes(void* p, size_t n) { read(p, n); }
  void f32_array(float* p, size_t n) { read(p, n * 4); }
  std::string str() {
    uint32_t n = u32();
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  Tensor tensor() {
    uint32_t nd = u32();
    std::vector<int64_t> shape(nd);
    for (auto& d : shape) d = static_cast<int64_t>(u64());
    Tensor t(shape);
    f32_array(t.ptr(), static_cast<size_t>(t.numel()));
    return t;
  }

private:
  void read(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) throw_io("truncated read: " + path_);
  }

  std::ifstream in_;
  std::string path_;
};

}  // namespace segvar
