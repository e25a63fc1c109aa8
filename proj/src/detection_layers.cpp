#include "dod/detection_layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dod {

Box::Box(double x0_, double y0_, double x1_, double y1_) : x0(x0_), y0(y0_), x1(x1_), y1(y1_) {
  if (!(x0 < x1) || !(y0 < y1))
    throw DimensionError("Box: requires x0 < x1 and y0 < y1");
}

Box Box::clipped(double x0, double y0, double x1, double y1, double w, double h) {
  x0 = std::clamp(x0, 0.0, w);
  x1 = std::clamp(x1, 0.0, w);
  y0 = std::clamp(y0, 0.0, h);
  y1 = std::clamp(y1, 0.0, h);
  return Box(x0, y0, x1, y1);
}

void RoiBatch::validate() const {
  if (maps.empty()) throw DimensionError("RoiBatch: empty batch");
  if (scores.size() != maps.size() || source_boxes.size() != maps.size())
    throw DimensionError("RoiBatch: list length mismatch");
  for (const Value& m : maps)
    if (!m.val().same_shape(maps.front().val()))
      throw DimensionError("RoiBatch: map shape disagreement " + shape_str(m.shape()) + " vs " +
                           shape_str(maps.front().shape()));
}

std::atomic<uint64_t>& roi_pool_degenerate_count() {
  static std::atomic<uint64_t> count{0};
  return count;
}

Value roi_pool(const Value& feature_map, const Box& roi, int out_h, int out_w) {
  const Tensor& in = feature_map.val();
  if (in.rank() != 3) throw DimensionError("roi_pool: feature map must be [C,H,W]");
  const int c = in.shape[0], h = in.shape[1], w = in.shape[2];

  double rx0 = std::clamp(roi.x0, 0.0, static_cast<double>(w));
  double ry0 = std::clamp(roi.y0, 0.0, static_cast<double>(h));
  double rx1 = std::clamp(roi.x1, 0.0, static_cast<double>(w));
  double ry1 = std::clamp(roi.y1, 0.0, static_cast<double>(h));
  if (rx1 - rx0 < 1.0 || ry1 - ry0 < 1.0) {
    // collapsed below one cell: clamp to a single cell
    roi_pool_degenerate_count()++;
    const int cx = std::min(w - 1, static_cast<int>(std::floor((rx0 + rx1) / 2.0)));
    const int cy = std::min(h - 1, static_cast<int>(std::floor((ry0 + ry1) / 2.0)));
    rx0 = cx;
    rx1 = cx + 1;
    ry0 = cy;
    ry1 = cy + 1;
  }

  const double rw = rx1 - rx0, rh = ry1 - ry0;
  Tensor out({c, out_h, out_w});
  std::vector<int32_t> argmax(static_cast<size_t>(c) * out_h * out_w, -1);

  for (int oy = 0; oy < out_h; ++oy) {
    int y_begin = static_cast<int>(std::floor(ry0 + rh * oy / out_h));
    int y_end = static_cast<int>(std::ceil(ry0 + rh * (oy + 1) / out_h));
    y_begin = std::clamp(y_begin, 0, h);
    y_end = std::clamp(y_end, 0, h);
    for (int ox = 0; ox < out_w; ++ox) {
      int x_begin = static_cast<int>(std::floor(rx0 + rw * ox / out_w));
      int x_end = static_cast<int>(std::ceil(rx0 + rw * (ox + 1) / out_w));
      x_begin = std::clamp(x_begin, 0, w);
      x_end = std::clamp(x_end, 0, w);
      const bool empty = (y_begin >= y_end) || (x_begin >= x_end);
      for (int ch = 0; ch < c; ++ch) {
        const double* plane = in.data.data() + static_cast<int64_t>(ch) * h * w;
        const size_t oi = (static_cast<size_t>(ch) * out_h + oy) * out_w + ox;
        if (empty) {
          out.data[oi] = 0.0;
          continue;
        }
        double best = -1e300;
        int besti = -1;
        for (int y = y_begin; y < y_end; ++y)
          for (int x = x_begin; x < x_end; ++x) {
            const int idx = y * w + x;
            if (plane[idx] > best) {
              best = plane[idx];
              besti = idx;
            }
          }
        out.data[oi] = best;
        argmax[oi] = besti;
      }
    }
  }

  const int plane_sz = h * w, oplane = out_h * out_w;
  return Value::make_op(std::move(out), {feature_map},
                        [feature_map, argmax = std::move(argmax), plane_sz, oplane, c](detail::Node& node) {
                          if (!feature_map.requires_grad()) return;
                          Tensor& gi = feature_map.node()->ensure_grad();
                          for (int ch = 0; ch < c; ++ch) {
                            double* gplane = gi.data.data() + static_cast<int64_t>(ch) * plane_sz;
                            for (int i = 0; i < oplane; ++i) {
                              const int32_t a = argmax[static_cast<size_t>(ch) * oplane + i];
                              if (a >= 0) gplane[a] += node.grad.data[static_cast<size_t>(ch) * oplane + i];
                            }
                          }
                        });
}

Value batch_pool(const RoiBatch& batch) {
  batch.validate();
  Tensor out = batch.maps.front().val();
  for (size_t l = 1; l < batch.maps.size(); ++l) {
    const Tensor& m = batch.maps[l].val();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::max(out.data[i], m.data[i]);
  }
  // Gradient is blocked: the result is a detached constant, so backward
  // deposits exactly zero into every input map.
  return Value::constant(std::move(out));
}

Value channel_concat(const std::vector<Value>& maps) {
  if (maps.empty()) throw DimensionError("channel_concat: empty list");
  const Tensor& first = maps.front().val();
  if (first.rank() != 3) throw DimensionError("channel_concat: maps must be [C,H,W]");
  const int h = first.shape[1], w = first.shape[2];
  int ctotal = 0;
  for (const Value& m : maps) {
    if (m.val().rank() != 3 || m.val().shape[1] != h || m.val().shape[2] != w)
      throw DimensionError("channel_concat: spatial mismatch " + shape_str(m.shape()) + " vs " +
                           shape_str(first.shape));
    ctotal += m.val().shape[0];
  }
  Tensor out({ctotal, h, w});
  size_t off = 0;
  for (const Value& m : maps) {
    const auto& d = m.val().data;
    std::copy(d.begin(), d.end(), out.data.begin() + off);
    off += d.size();
  }
  return Value::make_op(std::move(out), maps, [maps](detail::Node& node) {
    size_t off = 0;
    for (const Value& m : maps) {
      const size_t n = m.val().data.size();
      if (m.requires_grad()) {
        Tensor& gi = m.node()->ensure_grad();
        for (size_t i = 0; i < n; ++i) gi.data[i] += node.grad.data[off + i];
      }
      off += n;
    }
  });
}

RoiBatch roi_sampler(const RoiBatch& batch, int k) {
  batch.validate();
  if (k < 1) throw DimensionError("roi_sampler: k must be >= 1");
  std::vector<size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return batch.scores[a] > batch.scores[b]; });
  const size_t n = std::min(static_cast<size_t>(k), batch.size());
  RoiBatch out;
  for (size_t i = 0; i < n; ++i) {
    out.maps.push_back(batch.maps[idx[i]]);
    out.scores.push_back(batch.scores[idx[i]]);
    out.source_boxes.push_back(batch.source_boxes[idx[i]]);
  }
  return out;
}

}  // namespace dod
