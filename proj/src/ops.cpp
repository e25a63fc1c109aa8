#include "dod/ops.hpp"

#include <algorithm>
#include <cmath>

#include "dod/gemm.hpp"

namespace dod {

namespace {

// col is [C_in*kH*kW, H'*W']
void im2col(const Tensor& in, int kh, int kw, int stride, int pad, int oh, int ow, double* col) {
  const int ci = in.shape[0], h = in.shape[1], w = in.shape[2];
  const int n = oh * ow;
  int64_t row = 0;
  for (int c = 0; c < ci; ++c) {
    const double* plane = in.data.data() + static_cast<int64_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        double* dst = col + row * n;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(dst + y * ow, dst + (y + 1) * ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<int64_t>(iy) * w;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * stride - pad + kx;
            dst[y * ow + x] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int ci, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, double* out) {
  const int n = oh * ow;
  int64_t row = 0;
  for (int c = 0; c < ci; ++c) {
    double* plane = out + static_cast<int64_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const double* src = col + row * n;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = plane + static_cast<int64_t>(iy) * w;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[y * ow + x];
          }
        }
      }
    }
  }
}

}  // namespace

Value conv2d(const Value& input, const Value& weight, const Value& bias, int stride, int pad) {
  const Tensor& in = input.val();
  const Tensor& w = weight.val();
  const Tensor& b = bias.val();
  if (in.rank() != 3) throw DimensionError("conv2d: input must be [C,H,W], got " + shape_str(in.shape));
  if (w.rank() != 4) throw DimensionError("conv2d: weight must be [Co,Ci,kH,kW], got " + shape_str(w.shape));
  if (w.shape[1] != in.shape[0])
    throw DimensionError("conv2d: input channels " + std::to_string(in.shape[0]) +
                         " != weight in-channels " + std::to_string(w.shape[1]));
  if (b.rank() != 1 || b.shape[0] != w.shape[0])
    throw DimensionError("conv2d: bias shape " + shape_str(b.shape) + " != out channels " +
                         std::to_string(w.shape[0]));
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  const int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  const int h = in.shape[1], wd = in.shape[2];
  if (kh > h + 2 * pad || kw > wd + 2 * pad)
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + shape_str(in.shape));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  const int kdim = in.shape[0] * kh * kw;
  const int n = oh * ow;

  std::vector<double> col(static_cast<size_t>(kdim) * n);
  im2col(in, kh, kw, stride, pad, oh, ow, col.data());

  Tensor out({co, oh, ow});
  for (int c = 0; c < co; ++c)
    std::fill(out.data.begin() + static_cast<int64_t>(c) * n,
              out.data.begin() + static_cast<int64_t>(c + 1) * n, b.data[c]);
  gemm_nn(co, n, kdim, w.data.data(), col.data(), out.data.data());

  return Value::make_op(
      std::move(out), {input, weight, bias},
      [input, weight, bias, col = std::move(col), stride, pad, oh, ow](detail::Node& node) mutable {
        const Tensor& gout = node.grad;
        const Tensor& wv = weight.val();
        const int co_ = wv.shape[0], ci_ = wv.shape[1], kh_ = wv.shape[2], kw_ = wv.shape[3];
        const int kdim_ = ci_ * kh_ * kw_;
        const int n_ = oh * ow;
        if (bias.requires_grad()) {
          Tensor& gb = bias.node()->ensure_grad();
          for (int c = 0; c < co_; ++c) {
            double s = 0.0;
            const double* g = gout.data.data() + static_cast<int64_t>(c) * n_;
            for (int i = 0; i < n_; ++i) s += g[i];
            gb.data[c] += s;
          }
        }
        if (weight.requires_grad()) {
          Tensor& gw = weight.node()->ensure_grad();
          gemm_nt(co_, kdim_, n_, gout.data.data(), col.data(), gw.data.data());
        }
        if (input.requires_grad()) {
          std::vector<double> gcol(static_cast<size_t>(kdim_) * n_, 0.0);
          gemm_tn(kdim_, n_, co_, wv.data.data(), gout.data.data(), gcol.data());
          Tensor& gi = input.node()->ensure_grad();
          col2im_add(gcol.data(), ci_, input.val().shape[1], input.val().shape[2], kh_, kw_,
                     stride, pad, oh, ow, gi.data.data());
        }
      });
}

Value fully_connected(const Value& input, const Value& weight, const Value& bias) {
  const Tensor& in = input.val();
  const Tensor& w = weight.val();
  const Tensor& b = bias.val();
  if (in.rank() != 1) throw DimensionError("fully_connected: input must be 1-d, got " + shape_str(in.shape));
  if (w.rank() != 2 || w.shape[1] != in.shape[0])
    throw DimensionError("fully_connected: weight " + shape_str(w.shape) +
                         " incompatible with input " + shape_str(in.shape));
  if (b.rank() != 1 || b.shape[0] != w.shape[0])
    throw DimensionError("fully_connected: bias " + shape_str(b.shape) + " != rows " +
                         std::to_string(w.shape[0]));
  const int k = w.shape[0], d = w.shape[1];
  Tensor out({k});
  for (int i = 0; i < k; ++i) {
    const double* row = w.data.data() + static_cast<int64_t>(i) * d;
    double s = b.data[i];
    for (int j = 0; j < d; ++j) s += row[j] * in.data[j];
    out.data[i] = s;
  }
  return Value::make_op(std::move(out), {input, weight, bias},
                        [input, weight, bias](detail::Node& node) {
                          const Tensor& g = node.grad;
                          const Tensor& w_ = weight.val();
                          const int k_ = w_.shape[0], d_ = w_.shape[1];
                          if (bias.requires_grad()) {
                            Tensor& gb = bias.node()->ensure_grad();
                            for (int i = 0; i < k_; ++i) gb.data[i] += g.data[i];
                          }
                          if (weight.requires_grad()) {
                            Tensor& gw = weight.node()->ensure_grad();
                            const Tensor& in_ = input.val();
                            for (int i = 0; i < k_; ++i)
                              for (int j = 0; j < d_; ++j)
                                gw.data[static_cast<int64_t>(i) * d_ + j] += g.data[i] * in_.data[j];
                          }
                          if (input.requires_grad()) {
                            Tensor& gi = input.node()->ensure_grad();
                            for (int i = 0; i < k_; ++i)
                              for (int j = 0; j < d_; ++j)
                                gi.data[j] += g.data[i] * w_.data[static_cast<int64_t>(i) * d_ + j];
                          }
                        });
}

Value relu(const Value& input) {
  Tensor out = input.val();
  for (double& v : out.data) v = std::max(0.0, v);
  return Value::make_op(std::move(out), {input}, [input](detail::Node& node) {
    if (!input.requires_grad()) return;
    Tensor& gi = input.node()->ensure_grad();
    const Tensor& in = input.val();
    for (size_t i = 0; i < in.data.size(); ++i)
      if (in.data[i] > 0.0) gi.data[i] += node.grad.data[i];
  });
}

Value max_pool2d(const Value& input, int k, int stride) {
  const Tensor& in = input.val();
  if (in.rank() != 3) throw DimensionError("max_pool2d: input must be [C,H,W]");
  const int c = in.shape[0], h = in.shape[1], w = in.shape[2];
  if (k > h || k > w)
    throw DimensionError("max_pool2d: window " + std::to_string(k) + " larger than input " +
                         shape_str(in.shape));
  const int oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  Tensor out({c, oh, ow});
  std::vector<int32_t> argmax(static_cast<size_t>(c) * oh * ow);
  size_t oi = 0;
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = in.data.data() + static_cast<int64_t>(ch) * h * w;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x, ++oi) {
        double best = -1e300;
        int besti = -1;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int idx = (y * stride + ky) * w + (x * stride + kx);
            if (plane[idx] > best) {
              best = plane[idx];
              besti = idx;
            }
          }
        out.data[oi] = best;
        argmax[oi] = besti;
      }
  }
  const int plane_sz = h * w, oplane = oh * ow;
  return Value::make_op(std::move(out), {input},
                        [input, argmax = std::move(argmax), plane_sz, oplane, c](detail::Node& node) {
                          if (!input.requires_grad()) return;
                          Tensor& gi = input.node()->ensure_grad();
                          for (int ch = 0; ch < c; ++ch) {
                            double* gplane = gi.data.data() + static_cast<int64_t>(ch) * plane_sz;
                            for (int i = 0; i < oplane; ++i)
                              gplane[argmax[static_cast<size_t>(ch) * oplane + i]] +=
                                  node.grad.data[static_cast<size_t>(ch) * oplane + i];
                          }
                        });
}

Value global_avg_pool(const Value& input) {
  const Tensor& in = input.val();
  if (in.rank() != 3) throw DimensionError("global_avg_pool: input must be [C,H,W]");
  const int c = in.shape[0], n = in.shape[1] * in.shape[2];
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = in.data.data() + static_cast<int64_t>(ch) * n;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += plane[i];
    out.data[ch] = s / n;
  }
  return Value::make_op(std::move(out), {input}, [input, c, n](detail::Node& node) {
    if (!input.requires_grad()) return;
    Tensor& gi = input.node()->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const double g = node.grad.data[ch] / n;
      double* plane = gi.data.data() + static_cast<int64_t>(ch) * n;
      for (int i = 0; i < n; ++i) plane[i] += g;
    }
  });
}

Value sum(const Value& input) {
  double s = 0.0;
  for (double v : input.val().data) s += v;
  return Value::make_op(Tensor::scalar(s), {input}, [input](detail::Node& node) {
    if (!input.requires_grad()) return;
    Tensor& gi = input.node()->ensure_grad();
    const double g = node.grad.data[0];
    for (double& v : gi.data) v += g;
  });
}

Value add(const Value& a, const Value& b) {
  if (!a.val().same_shape(b.val()))
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor out = a.val();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.val().data[i];
  return Value::make_op(std::move(out), {a, b}, [a, b](detail::Node& node) {
    for (const Value& in : {a, b}) {
      if (!in.requires_grad()) continue;
      Tensor& gi = in.node()->ensure_grad();
      for (size_t i = 0; i < gi.data.size(); ++i) gi.data[i] += node.grad.data[i];
    }
  });
}

Value scale(const Value& a, double s) {
  Tensor out = a.val();
  for (double& v : out.data) v *= s;
  return Value::make_op(std::move(out), {a}, [a, s](detail::Node& node) {
    if (!a.requires_grad()) return;
    Tensor& gi = a.node()->ensure_grad();
    for (size_t i = 0; i < gi.data.size(); ++i) gi.data[i] += s * node.grad.data[i];
  });
}

Value mean_of(const std::vector<Value>& scalars) {
  if (scalars.empty()) throw DimensionError("mean_of: empty list");
  double s = 0.0;
  for (const Value& v : scalars) {
    if (v.val().numel() != 1) throw DimensionError("mean_of: non-scalar element");
    s += v.val().data[0];
  }
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return Value::make_op(Tensor::scalar(s * inv), std::vector<Value>(scalars),
                        [scalars, inv](detail::Node& node) {
                          const double g = node.grad.data[0] * inv;
                          for (const Value& v : scalars)
                            if (v.requires_grad()) v.node()->ensure_grad().data[0] += g;
                        });
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1) throw DimensionError("softmax: input must be 1-d");
  Tensor out = logits;
  const double m = *std::max_element(out.data.begin(), out.data.end());
  double z = 0.0;
  for (double& v : out.data) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : out.data) v /= z;
  return out;
}

Value softmax_cross_entropy(const Value& logits, int label) {
  const Tensor& lg = logits.val();
  if (lg.rank() != 1) throw DimensionError("softmax_cross_entropy: logits must be 1-d");
  if (label < 0 || label >= lg.shape[0])
    throw DimensionError("softmax_cross_entropy: label " + std::to_string(label) +
                         " out of range for " + std::to_string(lg.shape[0]) + " classes");
  const double m = *std::max_element(lg.data.begin(), lg.data.end());
  double z = 0.0;
  for (double v : lg.data) z += std::exp(v - m);
  const double loss = std::log(z) - (lg.data[static_cast<size_t>(label)] - m);
  return Value::make_op(Tensor::scalar(loss), {logits}, [logits, label](detail::Node& node) {
    if (!logits.requires_grad()) return;
    Tensor p = softmax(logits.val());
    p.data[static_cast<size_t>(label)] -= 1.0;
    Tensor& gi = logits.node()->ensure_grad();
    const double g = node.grad.data[0];
    for (size_t i = 0; i < p.data.size(); ++i) gi.data[i] += g * p.data[i];
  });
}

}  // namespace dod
