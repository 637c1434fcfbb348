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

#include "segvar/train/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "segvar/codec/image_io.hpp"
#include "segvar/codec/mask_io.hpp"
#include "segvar/core/error.hpp"

namespace segvar::train {

namespace {

using nlohmann::json;

constexpr int kMinVisible = 6;  // pixels an occluded instance must keep

// flat colors stay apart in L1 so shapes are never camouflaged
std::array<float, 3> draw_color(Rng& rng, const std::vector<std::array<float, 3>>& taken) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::array<float, 3> c{0.05f + 0.9f * rng.uniform(), 0.05f + 0.9f * rng.uniform(),
                           0.05f + 0.9f * rng.uniform()};
    bool ok = true;
    for (const auto& t : taken) {
      const float d = std::abs(c[0] - t[0]) + std::abs(c[1] - t[1]) + std::abs(c[2] - t[2]);
      if (d < 0.45f) {
        ok = false;
        break;
      }
    }
    if (ok) return c;
  }
  // the palette is crowded; give up on separation rather than loop forever
  return {0.05f + 0.9f * rng.uniform(), 0.05f + 0.9f * rng.uniform(),
          0.05f + 0.9f * rng.uniform()};
}

void paint_rectangle(Rng& rng, int H, int W, int id, std::vector<int>& owner) {
  const int min_side = std::max(4, H / 8);
  const int max_side = std::max(min_side + 1, H / 2);
  const int h = min_side + rng.uniform_int(max_side - min_side + 1);
  const int w = min_side + rng.uniform_int(max_side - min_side + 1);
  const int y0 = rng.uniform_int(H - h + 1);
  const int x0 = rng.uniform_int(W - w + 1);
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) owner[(size_t)(y * W + x)] = id;
}

void paint_ellipse(Rng& rng, int H, int W, int id, std::vector<int>& owner) {
  const int min_r = std::max(3, H / 10);
  const int max_r = std::max(min_r + 1, H / 4);
  const int ry = min_r + rng.uniform_int(max_r - min_r + 1);
  const int rx = min_r + rng.uniform_int(max_r - min_r + 1);
  const int cy = ry + rng.uniform_int(H - 2 * ry);
  const int cx = rx + rng.uniform_int(W - 2 * rx);
  for (int y = cy - ry; y <= cy + ry; ++y) {
    for (int x = cx - rx; x <= cx + rx; ++x) {
      const double u = (double)(x - cx) / rx, v = (double)(y - cy) / ry;
      if (u * u + v * v <= 1.0) owner[(size_t)(y * W + x)] = id;
    }
  }
}

void paint_triangle(Rng& rng, int H, int W, int id, std::vector<int>& owner) {
  const int min_side = std::max(6, H / 5);
  const int max_side = std::max(min_side + 1, H / 2);
  const int h = min_side + rng.uniform_int(max_side - min_side + 1);
  const int w = min_side + rng.uniform_int(max_side - min_side + 1);
  const int y0 = rng.uniform_int(H - h + 1);
  const int x0 = rng.uniform_int(W - w + 1);
  const int orient = rng.uniform_int(4);  // apex up, down, left, right
  if (orient < 2) {
    for (int r = 0; r < h; ++r) {
      // width grows linearly from the apex row to the full base
      const int grow = orient == 0 ? r : h - 1 - r;
      const int half = (int)std::lround(0.5 * w * grow / std::max(1, h - 1));
      const int cx = x0 + w / 2;
      for (int x = std::max(x0, cx - half); x <= std::min(x0 + w - 1, cx + half); ++x)
        owner[(size_t)((y0 + r) * W + x)] = id;
    }
  } else {
    for (int c = 0; c < w; ++c) {
      const int grow = orient == 2 ? c : w - 1 - c;
      const int half = (int)std::lround(0.5 * h * grow / std::max(1, w - 1));
      const int cy = y0 + h / 2;
      for (int y = std::max(y0, cy - half); y <= std::min(y0 + h - 1, cy + half); ++y)
        owner[(size_t)(y * W + (x0 + c))] = id;
    }
  }
}

}  // namespace

std::vector<SyntheticSample> generate_synthetic(const SyntheticConfig& cfg) {
  check(cfg.n >= 0, "sample count must be non-negative");
  check(cfg.height >= 16 && cfg.width >= 16, "synthetic images must be at least 16x16");
  check(cfg.height % 4 == 0 && cfg.width % 4 == 0,
        "synthetic dimensions must divide the tokenizer stride");
  check(cfg.max_instances >= 1, "max_instances must be positive");
  check(cfg.noise_std >= 0.0f, "noise_std must be non-negative");

  Rng rng(cfg.seed);
  const int H = cfg.height, W = cfg.width;
  std::vector<SyntheticSample> out;
  out.reserve((size_t)cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    const int count = 1 + rng.uniform_int(cfg.max_instances);
    std::vector<std::array<float, 3>> colors;
    colors.push_back(draw_color(rng, colors));  // background first
    std::vector<int> cats;
    std::vector<int> owner((size_t)(H * W), -1);
    for (int s = 0; s < count; ++s) {
      const int cat = 1 + rng.uniform_int(3);
      cats.push_back(cat);
      colors.push_back(draw_color(rng, colors));
      if (cat == kRectangle) paint_rectangle(rng, H, W, s, owner);
      if (cat == kEllipse) paint_ellipse(rng, H, W, s, owner);
      if (cat == kTriangle) paint_triangle(rng, H, W, s, owner);
    }

    SyntheticSample sample;
    sample.image = Tensor({H, W, 3});
    float* px = sample.image.ptr();
    for (int p = 0; p < H * W; ++p) {
      const auto& c = colors[(size_t)(owner[(size_t)p] + 1)];
      for (int ch = 0; ch < 3; ++ch) {
        float v = c[(size_t)ch] + cfg.noise_std * rng.normal();
        px[(int64_t)p * 3 + ch] = std::clamp(v, 0.0f, 1.0f);
      }
    }

    sample.masks.height = H;
    sample.masks.width = W;
    sample.masks.task = cfg.task;
    for (int s = 0; s < count; ++s) {
      std::vector<uint8_t> m((size_t)(H * W), 0);
      int area = 0;
      for (int p = 0; p < H * W; ++p) {
        if (owner[(size_t)p] == s) {
          m[(size_t)p] = 1;
          ++area;
        }
      }
      if (area < kMinVisible) continue;  // swallowed by later shapes
      sample.masks.masks.push_back(std::move(m));
      sample.masks.categories.push_back(cats[(size_t)s]);
    }
    if (cfg.task == codec::Task::panoptic) {
      std::vector<uint8_t> bg((size_t)(H * W), 0);
      for (int p = 0; p < H * W; ++p) bg[(size_t)p] = owner[(size_t)p] < 0 ? 1 : 0;
      sample.masks.masks.push_back(std::move(bg));
      sample.masks.categories.push_back(kStuff);
    }
    out.push_back(std::move(sample));
  }
  return out;
}

void save_dataset(const std::string& dir, const std::vector<SyntheticSample>& data,
                  const SyntheticConfig& cfg) {
  std::filesystem::create_directories(dir);
  char name[32];
  json index;
  index["n"] = data.size();
  index["height"] = cfg.height;
  index["width"] = cfg.width;
  index["task"] = codec::task_to_string(cfg.task);
  index["seed"] = cfg.seed;
  index["max_instances"] = cfg.max_instances;
  for (size_t i = 0; i < data.size(); ++i) {
    const SyntheticSample& s = data[i];
    codec::ImageU8 img((int)s.image.dim(0), (int)s.image.dim(1), 3);
    for (int64_t p = 0; p < s.image.numel(); ++p)
      img.data[(size_t)p] = (uint8_t)std::lround(255.0f * s.image.ptr()[p]);
    std::snprintf(name, sizeof(name), "img_%04zu.png", i);
    codec::save_png(dir + "/" + name, img);
    std::snprintf(name, sizeof(name), "msk_%04zu.svm", i);
    codec::write_mask_set(dir + "/" + name, s.masks);
  }
  std::ofstream f(dir + "/index.json");
  f << index.dump(2) << "\n";
}

std::vector<SyntheticSample> load_dataset(const std::string& dir) {
  std::ifstream f(dir + "/index.json");
  check(f.good(), "dataset index missing: " + dir + "/index.json");
  json index = json::parse(f);
  const size_t n = index.at("n").get<size_t>();
  std::vector<SyntheticSample> out;
  out.reserve(n);
  char name[32];
  for (size_t i = 0; i < n; ++i) {
    SyntheticSample s;
    std::snprintf(name, sizeof(name), "img_%04zu.png", i);
    const codec::ImageU8 img = codec::load_png(dir + "/" + name);
    check(img.channels == 3, "dataset images must be RGB");
    s.image = Tensor({img.height, img.width, 3});
    for (int64_t p = 0; p < s.image.numel(); ++p)
      s.image.ptr()[p] = (float)img.data[(size_t)p] / 255.0f;
    std::snprintf(name, sizeof(name), "msk_%04zu.svm", i);
    s.masks = codec::read_mask_set(dir + "/" + name);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace segvar::train
