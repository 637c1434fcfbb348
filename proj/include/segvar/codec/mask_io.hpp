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

#include <string>

#include "segvar/codec/colormap.hpp"

// Portable mask-set container, little-endian:
//   magic "SEGVAR01"
//   u32 height, u32 width, u32 N
//   N x u32 category ids
//   N x packed bitmask (row-major pixels, LSB-first within each byte,
//       each mask padded to a whole byte)

namespace segvar::codec {

void write_mask_set(const std::string& path, const InstanceMaskSet& masks);
InstanceMaskSet read_mask_set(const std::string& path);

}  // namespace segvar::codec
