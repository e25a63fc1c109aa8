#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dod/autodiff.hpp"

namespace dod {

// Builds a scalar from leaf values (compose non-scalar ops with sum).
using ScalarFn = std::function<Value(const std::vector<Value>&)>;

// Central-difference check of every element of every input against the
// autodiff gradient. Returns max over elements of |a-n| / max(1e-8, |a|+|n|).
// Throws if any intermediate is non-finite, naming `op_name`.
double grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps,
                  const std::string& op_name = "op");

}  // namespace dod
