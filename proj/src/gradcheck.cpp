#include "dod/gradcheck.hpp"

#include <cmath>

namespace dod {

namespace {

double eval_scalar(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                   const std::string& op_name) {
  NoGradGuard ng;
  std::vector<Value> vals;
  vals.reserve(inputs.size());
  for (const Tensor& t : inputs) vals.emplace_back(t, false);
  Value out = fn(vals);
  const double v = out.val().data.at(0);
  if (!std::isfinite(v))
    throw std::runtime_error("grad_check: non-finite output in " + op_name);
  return v;
}

}  // namespace

double grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps,
                  const std::string& op_name) {
  // analytic pass
  std::vector<Value> vals;
  vals.reserve(inputs.size());
  for (const Tensor& t : inputs) vals.emplace_back(t, true);
  Value out = fn(vals);
  if (out.val().numel() != 1)
    throw std::runtime_error("grad_check: function must be scalar-valued (" + op_name + ")");
  if (!out.val().all_finite())
    throw std::runtime_error("grad_check: non-finite forward value in " + op_name);
  out.backward();

  double max_err = 0.0;
  std::vector<Tensor> work = inputs;
  for (size_t i = 0; i < work.size(); ++i) {
    const Tensor analytic = vals[i].grad();
    for (size_t j = 0; j < work[i].data.size(); ++j) {
      const double orig = work[i].data[j];
      work[i].data[j] = orig + eps;
      const double fp = eval_scalar(fn, work, op_name);
      work[i].data[j] = orig - eps;
      const double fm = eval_scalar(fn, work, op_name);
      work[i].data[j] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic.data[j];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace dod
