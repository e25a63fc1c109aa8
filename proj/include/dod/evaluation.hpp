#pragma once

#include <string>
#include <vector>

#include "dod/detection_layers.hpp"

namespace dod {

struct ScoredPrediction {
  double score = 0.0;
  bool is_positive = false;
};

struct Detection {
  int image_id = 0;
  Box box;
  int cls = 0;
  double score = 0.0;
};

struct GtObject {
  int image_id = 0;
  Box box;
  int cls = 0;
};

// Thrown when a metric is undefined (no positives / no ground truth).
struct UndefinedMetricError : std::runtime_error {
  explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

double iou(const Box& a, const Box& b);

// All-points AP over score-ranked predictions (stable ties).
double average_precision(std::vector<ScoredPrediction> preds);

// Greedy matching in descending score; TP if IoU > thresh with an unmatched
// same-class gt box; duplicates count as FP.
double detection_ap(const std::vector<Detection>& dets, const std::vector<GtObject>& gt,
                    double iou_thresh, int cls);

// Macro average over the class ids in `classes` (skipping none).
double detection_map(const std::vector<Detection>& dets, const std::vector<GtObject>& gt,
                     double iou_thresh, const std::vector<int>& classes);

// Weighted average of min-max-normalized per-task score lists.
std::vector<double> late_fusion(const std::vector<std::vector<double>>& score_sets,
                                const std::vector<double>& weights);

}  // namespace dod
