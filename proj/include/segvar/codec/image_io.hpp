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
#include <string>
#include <vector>

namespace segvar::codec {

// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct ImageU8 {
  int height = 0, width = 0, channels = 0;
  std::vector<uint8_t> data;

  ImageU8() = default;
  ImageU8(int h, int w, int c)
      : height(h), width(w), channels(c), data((size_t)h * w * c, 0) {}
  uint8_t& at(int y, int x, int c) { return data[((size_t)y * width + x) * channels + c]; }
  uint8_t at(int y, int x, int c) const { return data[((size_t)y * width + x) * channels + c]; }
};

ImageU8 to_rgb(const ImageU8& img);  // gray -> replicated RGB; RGB passthrough

ImageU8 load_png(const std::string& path);  // 1 or 3 channels, 8-bit
void save_png(const std::string& path, const ImageU8& img);
ImageU8 load_jpeg(const std::string& path);  // always RGB
void save_jpeg(const std::string& path, const ImageU8& img, int quality = 95);

// Dispatch on extension (.png, .jpg, .jpeg, case-insensitive).
ImageU8 load_image(const std::string& path);

}  // namespace segvar::codec
