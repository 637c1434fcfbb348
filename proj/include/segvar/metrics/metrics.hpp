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
#include <map>
#include <vector>

namespace segvar::metrics {

constexpr int kIgnoreLabel = 255;

struct Segment {
  std::vector<uint8_t> mask;  // height*width binary, row-major
  int category = 0;
  float score = 0.0f;  // used by AP only
};

// Mean IoU over the categories present in either mask (so the metric is
// symmetric); pixels labeled 255 on either side are ignored. Labels are in
// [0, K]; 0 participates like any other category when present. Optionally
// fills a per-category IoU table.
double miou(const std::vector<int>& pred, const std::vector<int>& gt, int K,
            std::map<int, double>* per_class = nullptr);

struct PqClassStat {
  double iou_sum = 0.0;
  int tp = 0, fp = 0, fn = 0;
  double pq() const {
    const double d = tp + 0.5 * fp + 0.5 * fn;
    return d > 0.0 ? iou_sum / d : 0.0;
  }
  double sq() const { return tp > 0 ? iou_sum / tp : 0.0; }
  double rq() const {
    const double d = tp + 0.5 * fp + 0.5 * fn;
    return d > 0.0 ? tp / d : 0.0;
  }
};

struct PqResult {
  double pq = 0.0, sq = 0.0, rq = 0.0;  // class-averaged headline numbers
  int tp = 0, fp = 0, fn = 0;           // aggregate counts
  std::map<int, PqClassStat> per_class;
};

// Segments matched iff same category and IoU > 0.5 (which makes matching
// unique). Segments must be pairwise disjoint within each side.
PqResult panoptic_quality(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                          int height, int width);

struct ApResult {
  double ap = 0.0;
  std::vector<double> per_threshold;
  std::map<int, double> per_class;  // averaged over thresholds
};

std::vector<double> default_ap_thresholds();  // 0.50:0.05:0.95

// COCO-style mask AP: greedy matching in descending score order per IoU
// threshold, 101-point interpolated precision-recall, averaged over
// thresholds and over categories that have ground truth.
ApResult mask_ap(const std::vector<Segment>& pred, const std::vector<Segment>& gt, int height,
                 int width, const std::vector<double>& thresholds = default_ap_thresholds());

// Brute-force reference oracle: unoptimized re-implementations maintained
// independently of the fast path, guarded to grids <= 32x32 and <= 8
// segments per side.
double oracle_miou(const std::vector<int>& pred, const std::vector<int>& gt, int K);
double oracle_pq(const std::vector<Segment>& pred, const std::vector<Segment>& gt, int height,
                 int width);
double oracle_ap(const std::vector<Segment>& pred, const std::vector<Segment>& gt, int height,
                 int width);

}  // namespace segvar::metrics
