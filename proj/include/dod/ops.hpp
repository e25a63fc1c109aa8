#pragma once

#include "dod/autodiff.hpp"

namespace dod {

// input [C_in,H,W], weight [C_out,C_in,kH,kW], bias [C_out] -> [C_out,H',W']
Value conv2d(const Value& input, const Value& weight, const Value& bias, int stride = 1,
             int pad = 0);

// input [D], weight [K,D], bias [K] -> [K]
Value fully_connected(const Value& input, const Value& weight, const Value& bias);

Value relu(const Value& input);

// input [C,H,W] -> [C,H',W'], windowed max; ties route gradient to the first
// (row-major) argmax.
Value max_pool2d(const Value& input, int k, int stride);

// input [C,H,W] -> [C], per-channel mean
Value global_avg_pool(const Value& input);

// Scalar reductions / arithmetic used for loss composition and grad checks.
Value sum(const Value& input);
Value add(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value mean_of(const std::vector<Value>& scalars);

// loss = -log softmax(logits)[label]; gradient = softmax(logits) - onehot.
Value softmax_cross_entropy(const Value& logits, int label);

// Plain softmax over a 1-d tensor (no graph participation).
Tensor softmax(const Tensor& logits);

}  // namespace dod
