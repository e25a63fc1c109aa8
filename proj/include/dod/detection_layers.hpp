#pragma once

#include <atomic>
#include <vector>

#include "dod/autodiff.hpp"

namespace dod {

// Axis-aligned rectangle in pixel coordinates, half-open-ish real box with
// x0 < x1, y0 < y1.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  Box() = default;
  Box(double x0_, double y0_, double x1_, double y1_);

  // Construction clipped to [0,w) x [0,h) image bounds.
  static Box clipped(double x0, double y0, double x1, double y1, double w, double h);

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  Box scaled(double s) const { return Box(x0 * s, y0 * s, x1 * s, y1 * s); }

  bool operator==(const Box&) const = default;
};

// N same-shape feature maps with per-RoI foreground scores and source boxes.
struct RoiBatch {
  std::vector<Value> maps;
  std::vector<double> scores;
  std::vector<Box> source_boxes;

  size_t size() const { return maps.size(); }
  void validate() const;
};

// Counts RoIs that collapsed below one feature-map cell and were clamped.
std::atomic<uint64_t>& roi_pool_degenerate_count();

// Max-pools `roi` (already in feature-map coordinates) into an out_h x out_w
// grid; sub-window boundaries by floor/ceil of proportional splits; empty
// sub-windows yield 0. Backward routes to argmax positions.
Value roi_pool(const Value& feature_map, const Box& roi, int out_h, int out_w);

// Elementwise max over the batch's maps (batch of N -> batch of one). The
// backward pass deposits zero gradient into every input map.
Value batch_pool(const RoiBatch& batch);

// Channels stacked in argument order; backward splits gradient by channel
// range.
Value channel_concat(const std::vector<Value>& maps);

// Top-k by score, ties broken by lower original index, output in descending
// score order. Returns min(k, N) entries.
RoiBatch roi_sampler(const RoiBatch& batch, int k);

}  // namespace dod
