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

// Brute-force metric oracle. Deliberately naive and kept independent of
// metrics.cpp: every quantity is recomputed from first principles with plain
// loops so the fast path can be checked against it.

#include <algorithm>
#include <vector>

#include "segvar/core/error.hpp"
#include "segvar/metrics/metrics.hpp"

namespace segvar::metrics {

namespace {

constexpr int64_t kMaxPixels = 32 * 32;
constexpr size_t kMaxSegments = 8;

void guard_segments(const std::vector<Segment>& a, const std::vector<Segment>& b, int64_t npix) {
  check(npix <= kMaxPixels, "oracle size guard: grid larger than 32x32");
  check(a.size() <= kMaxSegments && b.size() <= kMaxSegments,
        "oracle size guard: more than 8 segments");
}

double naive_iou(const Segment& a, const Segment& b) {
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.mask.size(); ++i) {
    if (a.mask[i] && b.mask[i]) ++inter;
    if (a.mask[i] || b.mask[i]) ++uni;
  }
  return uni > 0 ? (double)inter / (double)uni : 0.0;
}

}  // namespace

double oracle_miou(const std::vector<int>& pred, const std::vector<int>& gt, int K) {
  check(pred.size() == gt.size(), "oracle miou: shape mismatch");
  check((int64_t)pred.size() <= kMaxPixels, "oracle size guard: grid larger than 32x32");
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k <= K; ++k) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == kIgnoreLabel || gt[i] == kIgnoreLabel) continue;
      const bool inp = pred[i] == k, ing = gt[i] == k;
      if (inp && ing) ++inter;
      if (inp || ing) ++uni;
    }
    if (uni == 0) continue;
    sum += (double)inter / (double)uni;
    ++present;
  }
  return present > 0 ? sum / present : 0.0;
}

double oracle_pq(const std::vector<Segment>& pred, const std::vector<Segment>& gt, int height,
                 int width) {
  const int64_t npix = (int64_t)height * width;
  guard_segments(pred, gt, npix);
  for (const auto& s : pred) check((int64_t)s.mask.size() == npix, "segment shape mismatch");
  for (const auto& s : gt) check((int64_t)s.mask.size() == npix, "segment shape mismatch");
  for (size_t a = 0; a < pred.size(); ++a)
    for (size_t b = a + 1; b < pred.size(); ++b)
      for (size_t i = 0; i < (size_t)npix; ++i)
        check(!(pred[a].mask[i] && pred[b].mask[i]), "pred segments overlap");
  for (size_t a = 0; a < gt.size(); ++a)
    for (size_t b = a + 1; b < gt.size(); ++b)
      for (size_t i = 0; i < (size_t)npix; ++i)
        check(!(gt[a].mask[i] && gt[b].mask[i]), "gt segments overlap");

  std::vector<int> pred_match(pred.size(), -1), gt_match(gt.size(), -1);
  std::vector<double> match_iou(pred.size(), 0.0);
  for (size_t p = 0; p < pred.size(); ++p)
    for (size_t g = 0; g < gt.size(); ++g) {
      if (pred[p].category != gt[g].category) continue;
      const double iou = naive_iou(pred[p], gt[g]);
      if (iou > 0.5) {
        check(pred_match[p] < 0 && gt_match[g] < 0, "oracle PQ matching not unique");
        pred_match[p] = (int)g;
        gt_match[g] = (int)p;
        match_iou[p] = iou;
      }
    }

  std::vector<int> cats;
  for (const auto& s : pred) cats.push_back(s.category);
  for (const auto& s : gt) cats.push_back(s.category);
  std::sort(cats.begin(), cats.end());
  cats.erase(std::unique(cats.begin(), cats.end()), cats.end());

  double sum = 0.0;
  for (int c : cats) {
    double iou_sum = 0.0;
    int tp = 0, fp = 0, fn = 0;
    for (size_t p = 0; p < pred.size(); ++p) {
      if (pred[p].category != c) continue;
      if (pred_match[p] >= 0) {
        ++tp;
        iou_sum += match_iou[p];
      } else {
        ++fp;
      }
    }
    for (size_t g = 0; g < gt.size(); ++g)
      if (gt[g].category == c && gt_match[g] < 0) ++fn;
    const double denom = tp + 0.5 * fp + 0.5 * fn;
    sum += denom > 0.0 ? iou_sum / denom : 0.0;
  }
  return cats.empty() ? 0.0 : sum / (double)cats.size();
}

double oracle_ap(const std::vector<Segment>& pred, const std::vector<Segment>& gt, int height,
                 int width) {
  const int64_t npix = (int64_t)height * width;
  guard_segments(pred, gt, npix);

  std::vector<int> cats;
  for (const auto& s : gt) cats.push_back(s.category);
  std::sort(cats.begin(), cats.end());
  cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
  if (cats.empty()) return 0.0;

  double total = 0.0;
  for (int c : cats) {
    std::vector<size_t> gis, pis;
    for (size_t g = 0; g < gt.size(); ++g)
      if (gt[g].category == c) gis.push_back(g);
    for (size_t p = 0; p < pred.size(); ++p)
      if (pred[p].category == c) pis.push_back(p);
    std::stable_sort(pis.begin(), pis.end(),
                     [&](size_t a, size_t b) { return pred[a].score > pred[b].score; });

    double cat_sum = 0.0;
    for (int ti = 0; ti < 10; ++ti) {
      const double thr = 0.5 + 0.05 * ti;
      std::vector<int8_t> used(gis.size(), 0), tp(pis.size(), 0);
      for (size_t i = 0; i < pis.size(); ++i) {
        int best = -1;
        double best_iou = thr;
        for (size_t j = 0; j < gis.size(); ++j) {
          if (used[j]) continue;
          const double iou = naive_iou(pred[pis[i]], gt[gis[j]]);
          if (iou >= best_iou) {
            best_iou = iou;
            best = (int)j;
          }
        }
        if (best >= 0) {
          used[(size_t)best] = 1;
          tp[i] = 1;
        }
      }
      // 101-point interpolation straight from the definition:
      // p_interp(r) = max precision over all points with recall >= r
      double ap = 0.0;
      for (int r = 0; r <= 100; ++r) {
        const double rv = r / 100.0;
        double best_p = 0.0;
        int cum = 0;
        for (size_t i = 0; i < pis.size(); ++i) {
          cum += tp[i];
          const double recall = (double)cum / (double)gis.size();
          const double precision = (double)cum / (double)(i + 1);
          if (recall >= rv) best_p = std::max(best_p, precision);
        }
        ap += best_p;
      }
      cat_sum += ap / 101.0;
    }
    total += cat_sum / 10.0;
  }
  return total / (double)cats.size();
}

}  // namespace segvar::metrics
