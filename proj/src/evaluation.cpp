#include "dod/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dod {

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

double average_precision(std::vector<ScoredPrediction> preds) {
  for (const auto& p : preds)
    if (!std::isfinite(p.score)) throw UndefinedMetricError("average_precision: non-finite score");
  std::stable_sort(preds.begin(), preds.end(),
                   [](const ScoredPrediction& a, const ScoredPrediction& b) { return a.score > b.score; });
  int64_t num_pos = 0;
  for (const auto& p : preds) num_pos += p.is_positive ? 1 : 0;
  if (num_pos == 0) throw UndefinedMetricError("average_precision: no positives present");
  double ap = 0.0;
  int64_t tp = 0;
  for (size_t r = 0; r < preds.size(); ++r) {
    if (preds[r].is_positive) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(r + 1);
    }
  }
  return ap / static_cast<double>(num_pos);
}

double detection_ap(const std::vector<Detection>& dets, const std::vector<GtObject>& gt,
                    double iou_thresh, int cls) {
  int64_t num_gt = 0;
  for (const auto& g : gt)
    if (g.cls == cls) ++num_gt;
  if (num_gt == 0)
    throw UndefinedMetricError("detection_ap: no ground truth of class " + std::to_string(cls));

  std::vector<size_t> order;
  for (size_t i = 0; i < dets.size(); ++i)
    if (dets[i].cls == cls) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });

  std::vector<bool> matched(gt.size(), false);
  std::vector<ScoredPrediction> labels;
  labels.reserve(order.size());
  for (size_t oi : order) {
    const Detection& d = dets[oi];
    double best = iou_thresh;
    int best_gt = -1;
    for (size_t gi = 0; gi < gt.size(); ++gi) {
      if (gt[gi].cls != cls || gt[gi].image_id != d.image_id || matched[gi]) continue;
      const double v = iou(d.box, gt[gi].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(gi);
      }
    }
    bool tp = best_gt >= 0;
    if (tp) matched[static_cast<size_t>(best_gt)] = true;
    labels.push_back({d.score, tp});
  }

  // recall-normalized: divide by total gt, not matched count
  double ap = 0.0;
  int64_t tp = 0;
  for (size_t r = 0; r < labels.size(); ++r) {
    if (labels[r].is_positive) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(r + 1);
    }
  }
  return ap / static_cast<double>(num_gt);
}

double detection_map(const std::vector<Detection>& dets, const std::vector<GtObject>& gt,
                     double iou_thresh, const std::vector<int>& classes) {
  double total = 0.0;
  int n = 0;
  for (int cls : classes) {
    bool has_gt = std::any_of(gt.begin(), gt.end(), [&](const GtObject& g) { return g.cls == cls; });
    if (!has_gt) continue;
    total += detection_ap(dets, gt, iou_thresh, cls);
    ++n;
  }
  if (n == 0) throw UndefinedMetricError("detection_map: no ground truth in any class");
  return total / n;
}

std::vector<double> late_fusion(const std::vector<std::vector<double>>& score_sets,
                                const std::vector<double>& weights) {
  if (score_sets.empty()) throw DimensionError("late_fusion: no score sets");
  if (weights.size() != score_sets.size())
    throw DimensionError("late_fusion: weight count != task count");
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(wsum - 1.0) > 1e-9) throw DimensionError("late_fusion: weights must sum to 1");
  const size_t n = score_sets.front().size();
  for (const auto& s : score_sets)
    if (s.size() != n) throw DimensionError("late_fusion: score list length mismatch");

  std::vector<double> fused(n, 0.0);
  for (size_t t = 0; t < score_sets.size(); ++t) {
    const auto& s = score_sets[t];
    const double lo = *std::min_element(s.begin(), s.end());
    const double hi = *std::max_element(s.begin(), s.end());
    const double range = hi - lo;
    for (size_t i = 0; i < n; ++i) {
      // degenerate (constant) task contributes its constant
      const double norm = range > 0.0 ? (s[i] - lo) / range : s[i];
      fused[i] += weights[t] * norm;
    }
  }
  return fused;
}

}  // namespace dod
