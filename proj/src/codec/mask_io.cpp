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

#include "segvar/codec/mask_io.hpp"

#include "segvar/core/error.hpp"
#include "segvar/core/serialize.hpp"

namespace segvar::codec {

namespace {
constexpr char kMagic[8] = {'S', 'E', 'G', 'V', 'A', 'R', '0', '1'};
}

void write_mask_set(const std::string& path, const InstanceMaskSet& masks) {
  check(masks.height > 0 && masks.width > 0, "mask set needs positive dimensions");
  check(masks.masks.size() == masks.categories.size(), "mask/category count mismatch");
  BinWriter w(path);
  w.magic(kMagic);
  w.u32((uint32_t)masks.height);
  w.u32((uint32_t)masks.width);
  w.u32((uint32_t)masks.masks.size());
  for (int c : masks.categories) w.u32((uint32_t)c);
  const size_t npix = (size_t)masks.height * masks.width;
  std::vector<uint8_t> packed((npix + 7) / 8);
  for (const auto& m : masks.masks) {
    check(m.size() == npix, "mask shape mismatch");
    std::fill(packed.begin(), packed.end(), (uint8_t)0);
    for (size_t i = 0; i < npix; ++i)
      if (m[i]) packed[i >> 3] |= (uint8_t)(1u << (i & 7));
    w.bytes(packed.data(), packed.size());
  }
  w.close();
}

InstanceMaskSet read_mask_set(const std::string& path) {
  BinReader r(path);
  r.expect_magic(kMagic);
  InstanceMaskSet out;
  out.height = (int)r.u32();
  out.width = (int)r.u32();
  const uint32_t n = r.u32();
  check(out.height > 0 && out.width > 0, "mask set has empty dimensions");
  check(n <= 1u << 20, "unreasonable mask count");
  out.categories.resize(n);
  for (uint32_t i = 0; i < n; ++i) out.categories[i] = (int)r.u32();
  const size_t npix = (size_t)out.height * out.width;
  std::vector<uint8_t> packed((npix + 7) / 8);
  out.masks.assign(n, std::vector<uint8_t>(npix, 0));
  for (uint32_t i = 0; i < n; ++i) {
    r.bytes(packed.data(), packed.size());
    for (size_t p = 0; p < npix; ++p)
      out.masks[i][p] = (uint8_t)((packed[p >> 3] >> (p & 7)) & 1u);
  }
  return out;
}

}  // namespace segvar::codec
