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

#include "segvar/metrics/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "segvar/core/error.hpp"

namespace segvar::metrics {

double miou(const std::vector<int>& pred, const std::vector<int>& gt, int K,
            std::map<int, double>* per_class) {
  check(pred.size() == gt.size(), "miou: shape mismatch");
  std::vector<int64_t> inter((size_t)K + 1, 0), pcnt((size_t)K + 1, 0), gcnt((size_t)K + 1, 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p == kIgnoreLabel || g == kIgnoreLabel) continue;
    check(p >= 0 && p <= K && g >= 0 && g <= K, "miou: label out of [0,K]");
    ++pcnt[(size_t)p];
    ++gcnt[(size_t)g];
    if (p == g) ++inter[(size_t)p];
  }
  if (per_class) per_class->clear();
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k <= K; ++k) {
    const int64_t u = pcnt[(size_t)k] + gcnt[(size_t)k] - inter[(size_t)k];
    if (u == 0) continue;  // absent from both sides
    const double iou = (double)inter[(size_t)k] / (double)u;
    if (per_class) (*per_class)[k] = iou;
    sum += iou;
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

namespace {

// Disjointness check plus a pixel->segment label map (-1 = none).
std::vector<int> label_map(const std::vector<Segment>& segs, int64_t npix, const char* side) {
  std::vector<int> owner(npix, -1);
  for (size_t s = 0; s < segs.size(); ++s) {
    check((int64_t)segs[s].mask.size() == npix, "segment shape mismatch");
    for (int64_t i = 0; i < npix; ++i)
      if (segs[s].mask[(size_t)i]) {
        check(owner[(size_t)i] < 0, std::string(side) + " segments overlap");
        owner[(size_t)i] = (int)s;
      }
  }
  return owner;
}

int64_t mask_area(const Segment& s) {
  return std::count(s.mask.begin(), s.mask.end(), (uint8_t)1);
}

double pair_iou(const Segment& a, const Segment& b) {
  int64_t inter = 0;
  for (size_t i = 0; i < a.mask.size(); ++i) inter += (a.mask[i] & b.mask[i]);
  if (inter == 0) return 0.0;
  return (double)inter / (double)(mask_area(a) + mask_area(b) - inter);
}

}  // namespace

PqResult panoptic_quality(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                          int height, int width) {
  const int64_t npix = (int64_t)height * width;
  const std::vector<int> powner = label_map(pred, npix, "pred");
  const std::vector<int> gowner = label_map(gt, npix, "gt");

  // single pass over the joint label map yields all intersections
  std::unordered_map<int64_t, int64_t> inter;
  for (int64_t i = 0; i < npix; ++i) {
    const int p = powner[(size_t)i], g = gowner[(size_t)i];
    if (p >= 0 && g >= 0) ++inter[(int64_t)p * (int64_t)(gt.size() + 1) + g];
  }

  PqResult r;
  std::vector<int8_t> pred_matched(pred.size(), 0), gt_matched(gt.size(), 0);
  for (const auto& [key, in] : inter) {
    const int p = (int)(key / (int64_t)(gt.size() + 1));
    const int g = (int)(key % (int64_t)(gt.size() + 1));
    if (pred[(size_t)p].category != gt[(size_t)g].category) continue;
    const double iou =
        (double)in / (double)(mask_area(pred[(size_t)p]) + mask_area(gt[(size_t)g]) - in);
    if (iou > 0.5) {
      // IoU > 0.5 makes matches unique; a double match indicates a bug
      check(!pred_matched[(size_t)p] && !gt_matched[(size_t)g], "PQ matching not unique");
      pred_matched[(size_t)p] = gt_matched[(size_t)g] = 1;
      auto& cs = r.per_class[pred[(size_t)p].category];
      ++cs.tp;
      cs.iou_sum += iou;
    }
  }
  for (size_t p = 0; p < pred.size(); ++p)
    if (!pred_matched[p]) ++r.per_class[pred[p].category].fp;
  for (size_t g = 0; g < gt.size(); ++g)
    if (!gt_matched[g]) ++r.per_class[gt[g].category].fn;

  int n = 0;
  for (const auto& [cat, cs] : r.per_class) {
    (void)cat;
    r.tp += cs.tp;
    r.fp += cs.fp;
    r.fn += cs.fn;
    r.pq += cs.pq();
    r.sq += cs.sq();
    r.rq += cs.rq();
    ++n;
  }
  if (n > 0) {
    r.pq /= n;
    r.sq /= n;
    r.rq /= n;
  }
  return r;
}

std::vector<double> default_ap_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

namespace {

// 101-point interpolated AP from per-prediction TP flags (score-sorted).
double ap_from_flags(const std::vector<int8_t>& tp_flags, int n_gt) {
  std::vector<double> precision, recall;
  int tp = 0;
  for (size_t i = 0; i < tp_flags.size(); ++i) {
    tp += tp_flags[i];
    precision.push_back((double)tp / (double)(i + 1));
    recall.push_back((double)tp / (double)n_gt);
  }
  // precision envelope: non-increasing from the right
  for (int i = (int)precision.size() - 2; i >= 0; --i)
    precision[(size_t)i] = std::max(precision[(size_t)i], precision[(size_t)i + 1]);
  double sum = 0.0;
  size_t j = 0;
  for (int r = 0; r <= 100; ++r) {
    const double rv = r / 100.0;
    while (j < recall.size() && recall[j] < rv) ++j;
    if (j < recall.size()) sum += precision[j];
  }
  return sum / 101.0;
}

}  // namespace

ApResult mask_ap(const std::vector<Segment>& pred, const std::vector<Segment>& gt, int height,
                 int width, const std::vector<double>& thresholds) {
  const int64_t npix = (int64_t)height * width;
  for (const auto& s : pred) check((int64_t)s.mask.size() == npix, "segment shape mismatch");
  for (const auto& s : gt) check((int64_t)s.mask.size() == npix, "segment shape mismatch");

  std::map<int, std::vector<int>> gt_by_cat, pred_by_cat;
  for (size_t i = 0; i < gt.size(); ++i) gt_by_cat[gt[i].category].push_back((int)i);
  for (size_t i = 0; i < pred.size(); ++i) pred_by_cat[pred[i].category].push_back((int)i);

  ApResult res;
  res.per_threshold.assign(thresholds.size(), 0.0);
  if (gt_by_cat.empty()) return res;

  for (const auto& [cat, gis] : gt_by_cat) {
    std::vector<int> pis;  // this category's predictions, descending score
    if (auto it = pred_by_cat.find(cat); it != pred_by_cat.end()) pis = it->second;
    std::stable_sort(pis.begin(), pis.end(), [&](int a, int b) {
      return pred[(size_t)a].score > pred[(size_t)b].score;
    });
    std::vector<std::vector<double>> iou(pis.size(), std::vector<double>(gis.size(), 0.0));
    for (size_t i = 0; i < pis.size(); ++i)
      for (size_t j = 0; j < gis.size(); ++j)
        iou[i][j] = pair_iou(pred[(size_t)pis[i]], gt[(size_t)gis[j]]);

    double cat_sum = 0.0;
    for (size_t t = 0; t < thresholds.size(); ++t) {
      std::vector<int8_t> gt_used(gis.size(), 0), tp_flags(pis.size(), 0);
      for (size_t i = 0; i < pis.size(); ++i) {
        int best = -1;
        double best_iou = thresholds[t];  // require iou >= threshold
        for (size_t j = 0; j < gis.size(); ++j)
          if (!gt_used[j] && iou[i][j] >= best_iou) {
            best_iou = iou[i][j];
            best = (int)j;
          }
        if (best >= 0) {
          gt_used[(size_t)best] = 1;
          tp_flags[i] = 1;
        }
      }
      const double ap_t = ap_from_flags(tp_flags, (int)gis.size());
      cat_sum += ap_t;
      res.per_threshold[t] += ap_t;
    }
    res.per_class[cat] = cat_sum / (double)thresholds.size();
  }
  const double ncat = (double)gt_by_cat.size();
  for (auto& v : res.per_threshold) v /= ncat;
  res.ap = std::accumulate(res.per_threshold.begin(), res.per_threshold.end(), 0.0) /
           (double)thresholds.size();
  return res;
}

}  // namespace segvar::metrics
