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

#include "segvar/codec/colormap.hpp"

#include <algorithm>
#include <cmath>

#include "segvar/core/error.hpp"

namespace segvar::codec {

Task task_from_string(const std::string& s) {
  if (s == "semantic") return Task::semantic;
  if (s == "instance") return Task::instance;
  if (s == "panoptic") return Task::panoptic;
  throw_validation("unknown task '" + s + "' (want semantic|instance|panoptic)");
}

const char* task_to_string(Task t) {
  switch (t) {
    case Task::semantic: return "semantic";
    case Task::instance: return "instance";
    case Task::panoptic: return "panoptic";
  }
  return "?";
}

Palette build_palette(const std::vector<int>& channel_values) {
  check(!channel_values.empty(), "palette needs at least one channel value");
  for (int v : channel_values) check(v >= 0 && v <= 255, "palette channel value out of [0,255]");
  for (size_t i = 1; i < channel_values.size(); ++i)
    check(channel_values[i] > channel_values[i - 1],
          "palette channel values must be strictly increasing");
  Palette p;
  p.channel_values = channel_values;
  for (int r : channel_values)
    for (int g : channel_values)
      for (int b : channel_values) {
        if (r == 0 && g == 0 && b == 0) continue;  // reserved background
        p.colors.push_back({(uint8_t)r, (uint8_t)g, (uint8_t)b});
      }
  return p;
}

Palette parse_palette_spec(const std::string& spec) {
  const size_t x = spec.find('x');
  check(x != std::string::npos && x > 0 && x + 1 < spec.size(),
        "palette spec must look like 6x51");
  int count = 0, step = 0;
  try {
    count = std::stoi(spec.substr(0, x));
    step = std::stoi(spec.substr(x + 1));
  } catch (const std::exception&) {
    throw_validation("palette spec must look like 6x51");
  }
  check(count >= 2 && step >= 1, "palette spec needs count >= 2 and step >= 1");
  std::vector<int> values;
  for (int i = 0; i < count; ++i) values.push_back(std::min(255, i * step));
  return build_palette(values);
}

GridColorMap build_grid_colormap(int a, Palette palette) {
  check(a >= 1, "grid side must be >= 1");
  check((int64_t)a * a <= (int64_t)palette.colors.size(),
        "grid capacity exceeded: a^2 > palette size");
  return GridColorMap{a, std::move(palette)};
}

std::pair<double, double> centroid(const uint8_t* mask, int height, int width) {
  int64_t n = 0;
  double sy = 0.0, sx = 0.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (mask[(size_t)y * width + x]) {
        sy += y;
        sx += x;
        ++n;
      }
  check(n > 0, "centroid of empty mask");
  return {sy / (double)n, sx / (double)n};
}

int centroid_cell(double row, double col, int a, int height, int width) {
  int cy = (int)std::floor(row * a / height);
  int cx = (int)std::floor(col * a / width);
  cy = std::clamp(cy, 0, a - 1);
  cx = std::clamp(cx, 0, a - 1);
  return cy * a + cx;
}

ImageU8 encode_colormap(const InstanceMaskSet& masks, const GridColorMap& grid) {
  const size_t n = masks.masks.size();
  check((int64_t)n <= (int64_t)grid.palette.colors.size(),
        "more instances than palette colors");
  ImageU8 out(masks.height, masks.width, 3);
  std::vector<uint8_t> used(grid.palette.colors.size(), 0);
  for (size_t i = 0; i < n; ++i) {
    const auto& m = masks.masks[i];
    check((int64_t)m.size() == (int64_t)masks.height * masks.width, "mask shape mismatch");
    const auto [cy, cx] = centroid(m.data(), masks.height, masks.width);
    int ci = centroid_cell(cy, cx, grid.a, masks.height, masks.width);
    if (used[(size_t)ci]) {
      // collision: take the lowest-index color not yet used in this image
      ci = 0;
      while (used[(size_t)ci]) ++ci;
    }
    used[(size_t)ci] = 1;
    const auto& col = grid.palette.colors[(size_t)ci];
    for (int y = 0; y < masks.height; ++y)
      for (int x = 0; x < masks.width; ++x)
        if (m[(size_t)y * masks.width + x]) {
          out.at(y, x, 0) = col[0];
          out.at(y, x, 1) = col[1];
          out.at(y, x, 2) = col[2];
        }
  }
  return out;
}

int nearest_palette_color(uint8_t r, uint8_t g, uint8_t b, const Palette& palette) {
  auto d2 = [&](int cr, int cg, int cb) {
    const int dr = (int)r - cr, dg = (int)g - cg, db = (int)b - cb;
    return dr * dr + dg * dg + db * db;
  };
  int best = -1;  // background; wins ties against any color
  int best_d = d2(0, 0, 0);
  for (size_t i = 0; i < palette.colors.size(); ++i) {
    const auto& c = palette.colors[i];
    const int d = d2(c[0], c[1], c[2]);
    if (d < best_d) {
      best_d = d;
      best = (int)i;
    }
  }
  return best;
}

InstanceMaskSet decode_colormap(const ImageU8& image, const GridColorMap& grid) {
  check(image.channels == 3, "decode expects an RGB image");
  check(image.height > 0 && image.width > 0, "decode expects a nonempty image");
  InstanceMaskSet out;
  out.height = image.height;
  out.width = image.width;
  std::vector<int> color_to_slot(grid.palette.colors.size(), -1);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const int ci = nearest_palette_color(image.at(y, x, 0), image.at(y, x, 1),
                                           image.at(y, x, 2), grid.palette);
      if (ci < 0) continue;
      int slot = color_to_slot[(size_t)ci];
      if (slot < 0) {  // first occurrence in scan order opens a new instance
        slot = (int)out.masks.size();
        color_to_slot[(size_t)ci] = slot;
        out.masks.emplace_back((size_t)image.height * image.width, 0);
        out.categories.push_back(0);
      }
      out.masks[(size_t)slot][(size_t)y * image.width + x] = 1;
    }
  return out;
}

ImageU8 encode_semantic_colormap(const std::vector<int>& categories, int height, int width,
                                 const Palette& palette) {
  check((int64_t)categories.size() == (int64_t)height * width, "semantic mask shape mismatch");
  ImageU8 out(height, width, 3);
  for (int64_t i = 0; i < (int64_t)categories.size(); ++i) {
    const int k = categories[(size_t)i];
    if (k == 0) continue;
    check(k > 0 && k <= (int)palette.colors.size(), "semantic category exceeds palette size");
    const auto& c = palette.colors[(size_t)k - 1];
    out.data[(size_t)i * 3 + 0] = c[0];
    out.data[(size_t)i * 3 + 1] = c[1];
    out.data[(size_t)i * 3 + 2] = c[2];
  }
  return out;
}

std::vector<int> decode_semantic_colormap(const ImageU8& image, const Palette& palette) {
  check(image.channels == 3, "decode expects an RGB image");
  std::vector<int> out((size_t)image.height * image.width, 0);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const int ci = nearest_palette_color(image.at(y, x, 0), image.at(y, x, 1),
                                           image.at(y, x, 2), palette);
      out[(size_t)y * image.width + x] = ci + 1;  // -1 background -> 0
    }
  return out;
}

}  // namespace segvar::codec
