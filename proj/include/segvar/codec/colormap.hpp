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

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segvar/codec/image_io.hpp"

// The spatial colormap codec: a deterministic, invertible mapping between
// instance mask sets and RGB colormap images. Colors come from a small
// palette enumerated over a few channel values; each instance is painted
// with the color of the grid cell its centroid falls into, which makes the
// color itself carry coarse position information.

namespace segvar::codec {

enum class Task { semantic, instance, panoptic };

Task task_from_string(const std::string& s);
const char* task_to_string(Task t);

struct Palette {
  std::vector<int> channel_values;           // strictly increasing, in [0,255]
  std::vector<std::array<uint8_t, 3>> colors;  // lexicographic, background excluded
};

// Lexicographic (r,g,b) enumeration over channel_values with (0,0,0)
// removed and reserved as background.
Palette build_palette(const std::vector<int>& channel_values);

// "6x51" -> {0,51,102,153,204,255}; "5x64" -> {0,64,128,192,255}
// (count values spaced by step, final value capped at 255).
Palette parse_palette_spec(const std::string& spec);

struct GridColorMap {
  int a = 0;  // cells per axis; cell i (row-major) maps to palette.colors[i]
  Palette palette;
};

GridColorMap build_grid_colormap(int a, Palette palette);

struct InstanceMaskSet {
  int height = 0, width = 0;
  std::vector<std::vector<uint8_t>> masks;  // N binary masks, row-major
  std::vector<int> categories;              // N labels in [1, K]; 0 = unknown
  Task task = Task::instance;
};

// Arithmetic mean of foreground pixel coordinates as (row, col).
std::pair<double, double> centroid(const uint8_t* mask, int height, int width);

// Cell of a centroid: floor(coord * a / extent), clamped to [0, a-1].
int centroid_cell(double row, double col, int a, int height, int width);

// Paint each instance with its centroid cell's color. An instance whose
// cell color is already taken (same-cell collision, or stolen by an earlier
// collider) receives the lowest-index palette color not yet used in this
// image; overlapping pixels go to the higher instance index (painted last).
ImageU8 encode_colormap(const InstanceMaskSet& masks, const GridColorMap& grid);

// Index into palette.colors of the nearest color by squared L2, or -1 for
// background (0,0,0). Ties break toward the lower palette index, with
// background beating any color.
int nearest_palette_color(uint8_t r, uint8_t g, uint8_t b, const Palette& palette);

// Inverse mapping: quantize every pixel to the palette, then collect one
// instance per distinct non-background color, ordered by first occurrence in
// row-major scan. No connected-component splitting. Categories are zeroed
// (recovered elsewhere).
InstanceMaskSet decode_colormap(const ImageU8& image, const GridColorMap& grid);

// Semantic variant: category k > 0 paints palette.colors[k-1]; inverse
// quantizes and maps the color index back to the category id.
ImageU8 encode_semantic_colormap(const std::vector<int>& categories, int height, int width,
                                 const Palette& palette);
std::vector<int> decode_semantic_colormap(const ImageU8& image, const Palette& palette);

}  // namespace segvar::codec
