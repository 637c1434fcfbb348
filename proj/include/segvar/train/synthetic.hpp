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

#include "segvar/codec/colormap.hpp"
#include "segvar/core/rng.hpp"
#include "segvar/core/tensor.hpp"

// Deterministic desk-scale dataset: flat-colored shapes over a flat
// background with mild Gaussian pixel noise. Masks are the exact painted
// pixels (painter order, so they are pairwise disjoint); the panoptic task
// adds the leftover background as a "stuff" instance.

namespace segvar::train {

// shape categories; panoptic appends the stuff background as kStuff
constexpr int kRectangle = 1;
constexpr int kEllipse = 2;
constexpr int kTriangle = 3;
constexpr int kStuff = 4;
constexpr int kNumCategories = 4;

struct SyntheticConfig {
  uint64_t seed = 0;
  int n = 64;
  int height = 32, width = 32;
  int max_instances = 4;
  codec::Task task = codec::Task::panoptic;
  float noise_std = 0.02f;
};

struct SyntheticSample {
  Tensor image;  // [height, width, 3] in [0,1]
  codec::InstanceMaskSet masks;
};

std::vector<SyntheticSample> generate_synthetic(const SyntheticConfig& cfg);

// Disk form: img_%04d.png + msk_%04d.svm + index.json in dir.
void save_dataset(const std::string& dir, const std::vector<SyntheticSample>& data,
                  const SyntheticConfig& cfg);
std::vector<SyntheticSample> load_dataset(const std::string& dir);

}  // namespace segvar::train
