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
#include <utility>
#include <vector>

#include "segvar/codec/colormap.hpp"
#include "segvar/codec/image_io.hpp"

// Small-subset COCO ingestion: standard annotation JSON with polygon,
// uncompressed (counts array) or compressed (counts string) RLE masks.
// Categories are remapped to a dense 1..K space; the mapping persists as
// JSON so ids survive across runs.

namespace segvar::train {

struct CocoSample {
  std::string file_name;
  codec::ImageU8 image;
  codec::InstanceMaskSet masks;  // dense categories
};

struct CocoDataset {
  std::vector<CocoSample> samples;
  std::vector<std::pair<int, int>> category_map;  // (coco id, dense id), coco id ascending
};

// Column-major runs alternating background/foreground, background first;
// the counts must sum to height*width.
std::vector<uint8_t> decode_rle_counts(const std::vector<int64_t>& counts, int height,
                                       int width);

// The compact char encoding: 5 value bits per char plus a continuation
// flag, ascii offset 48, sign extension on bit 0x10 of the last char, and
// counts from index 3 on stored as deltas against two entries back.
std::vector<int64_t> rle_counts_from_string(const std::string& s);

// Even-odd scanline fill at pixel centers; multiple rings are ORed.
std::vector<uint8_t> rasterize_polygons(const std::vector<std::vector<double>>& rings,
                                        int height, int width);

// Reads the first `limit` images in annotation-file order (all their
// annotations included); images must exist under image_dir.
CocoDataset ingest_coco_subset(const std::string& annotation_file, const std::string& image_dir,
                               int limit);

void save_category_map(const std::string& path, const std::vector<std::pair<int, int>>& map);
std::vector<std::pair<int, int>> load_category_map(const std::string& path);

}  // namespace segvar::train
