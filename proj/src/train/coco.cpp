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

#include "segvar/train/coco.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"
#include "segvar/core/error.hpp"

namespace segvar::train {

namespace {

using nlohmann::json;

json parse_json_file(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open " + path);
  json j = json::parse(f, nullptr, /*allow_exceptions=*/false);
  check(!j.is_discarded(), "malformed JSON in " + path);
  return j;
}

}  // namespace

std::vector<uint8_t> decode_rle_counts(const std::vector<int64_t>& counts, int height,
                                       int width) {
  check(height > 0 && width > 0, "RLE size must be positive");
  std::vector<uint8_t> mask((size_t)height * width, 0);
  int64_t at = 0;
  uint8_t value = 0;  // runs start with background
  for (int64_t run : counts) {
    check(run >= 0, "RLE run must be non-negative");
    check(at + run <= (int64_t)height * width, "RLE runs overflow the mask");
    if (value) {
      for (int64_t j = at; j < at + run; ++j) {
        // column-major pixel order
        const int64_t r = j % height, c = j / height;
        mask[(size_t)(r * width + c)] = 1;
      }
    }
    at += run;
    value ^= 1;
  }
  check(at == (int64_t)height * width, "RLE runs do not cover the mask");
  return mask;
}

std::vector<int64_t> rle_counts_from_string(const std::string& s) {
  std::vector<int64_t> counts;
  size_t p = 0;
  while (p < s.size()) {
    int64_t x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      check(p < s.size(), "truncated RLE string");
      const int c = (int)s[p] - 48;
      check(c >= 0 && c < 64, "RLE character out of range");
      x |= (int64_t)(c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= ~int64_t{0} << (5 * k);
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    counts.push_back(x);
  }
  return counts;
}

std::vector<uint8_t> rasterize_polygons(const std::vector<std::vector<double>>& rings,
                                        int height, int width) {
  std::vector<uint8_t> mask((size_t)height * width, 0);
  std::vector<double> xs;
  for (const auto& ring : rings) {
    check(ring.size() >= 6 && ring.size() % 2 == 0, "polygon needs at least three x,y pairs");
    const size_t nv = ring.size() / 2;
    for (int y = 0; y < height; ++y) {
      const double cy = y + 0.5;
      xs.clear();
      for (size_t i = 0; i < nv; ++i) {
        const double x1 = ring[2 * i], y1 = ring[2 * i + 1];
        const double x2 = ring[2 * ((i + 1) % nv)], y2 = ring[2 * ((i + 1) % nv) + 1];
        if ((y1 <= cy) != (y2 <= cy)) xs.push_back(x1 + (cy - y1) * (x2 - x1) / (y2 - y1));
      }
      std::sort(xs.begin(), xs.end());
      for (size_t i = 0; i + 1 < xs.size(); i += 2) {
        const int x_first = std::max(0, (int)std::ceil(xs[i] - 0.5));
        const int x_last = std::min(width - 1, (int)std::floor(xs[i + 1] - 0.5));
        for (int x = x_first; x <= x_last; ++x) mask[(size_t)(y * width + x)] = 1;
      }
    }
  }
  return mask;
}

CocoDataset ingest_coco_subset(const std::string& annotation_file, const std::string& image_dir,
                               int limit) {
  check(limit >= 0, "limit must be non-negative");
  const json j = parse_json_file(annotation_file);
  check(j.contains("images") && j.contains("annotations") && j.contains("categories"),
        "not a COCO annotation file: " + annotation_file);

  CocoDataset out;
  std::map<int, int> dense;
  for (const auto& cat : j.at("categories")) dense[cat.at("id").get<int>()] = 0;
  int next = 1;
  for (auto& [coco_id, dense_id] : dense) {
    dense_id = next++;
    out.category_map.emplace_back(coco_id, dense_id);
  }

  std::map<int64_t, std::vector<const json*>> by_image;
  for (const auto& ann : j.at("annotations"))
    by_image[ann.at("image_id").get<int64_t>()].push_back(&ann);

  int taken = 0;
  for (const auto& img : j.at("images")) {
    if (taken == limit) break;
    ++taken;
    CocoSample s;
    s.file_name = img.at("file_name").get<std::string>();
    const int h = img.at("height").get<int>();
    const int w = img.at("width").get<int>();
    const std::string path = image_dir + "/" + s.file_name;
    std::ifstream probe(path, std::ios::binary);
    check(probe.good(), "missing image file: " + path);
    probe.close();
    s.image = codec::load_image(path);
    check(s.image.height == h && s.image.width == w,
          "image dimensions disagree with the annotation: " + s.file_name);

    s.masks.height = h;
    s.masks.width = w;
    s.masks.task = codec::Task::instance;
    const auto it = by_image.find(img.at("id").get<int64_t>());
    if (it != by_image.end()) {
      for (const json* pann : it->second) {
        const json& ann = *pann;
        const int coco_cat = ann.at("category_id").get<int>();
        const auto cat_it = dense.find(coco_cat);
        check(cat_it != dense.end(), "annotation uses an unlisted category id");
        check(ann.contains("segmentation"), "annotation has no segmentation");
        const json& seg = ann.at("segmentation");
        std::vector<uint8_t> mask;
        if (seg.is_array()) {
          std::vector<std::vector<double>> rings;
          for (const auto& ring : seg) rings.push_back(ring.get<std::vector<double>>());
          mask = rasterize_polygons(rings, h, w);
        } else if (seg.is_object() && seg.contains("counts")) {
          const auto& size = seg.at("size");
          check(size.at(0).get<int>() == h && size.at(1).get<int>() == w,
                "RLE size disagrees with the image");
          const json& counts = seg.at("counts");
          if (counts.is_array()) {
            mask = decode_rle_counts(counts.get<std::vector<int64_t>>(), h, w);
          } else if (counts.is_string()) {
            mask = decode_rle_counts(rle_counts_from_string(counts.get<std::string>()), h, w);
          } else {
            check(false, "unsupported RLE counts type");
          }
        } else {
          check(false, "unsupported segmentation type");
        }
        s.masks.masks.push_back(std::move(mask));
        s.masks.categories.push_back(cat_it->second);
      }
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

void save_category_map(const std::string& path, const std::vector<std::pair<int, int>>& map) {
  json j = json::array();
  for (const auto& [coco_id, dense_id] : map) j.push_back({{"coco", coco_id}, {"dense", dense_id}});
  std::ofstream f(path);
  check(f.good(), "cannot write " + path);
  f << j.dump(2) << "\n";
}

std::vector<std::pair<int, int>> load_category_map(const std::string& path) {
  const json j = parse_json_file(path);
  check(j.is_array(), "category map must be a JSON array");
  std::vector<std::pair<int, int>> out;
  for (const auto& e : j) out.emplace_back(e.at("coco").get<int>(), e.at("dense").get<int>());
  return out;
}

}  // namespace segvar::train
