#include "dod/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dod {

Value& ParamGroup::find(const std::string& pname) {
  for (auto& [n, v] : params)
    if (n == pname) return v;
  throw std::runtime_error("no parameter '" + pname + "' in group '" + name + "'");
}

const Value& ParamGroup::find(const std::string& pname) const {
  for (const auto& [n, v] : params)
    if (n == pname) return v;
  throw std::runtime_error("no parameter '" + pname + "' in group '" + name + "'");
}

void ParamGroup::add(const std::string& pname, Value v) {
  for (const auto& [n, unused] : params)
    if (n == pname) throw std::runtime_error("duplicate parameter '" + pname + "' in group '" + name + "'");
  params.emplace_back(pname, std::move(v));
}

double lr_schedule(double base_lr, int64_t iter, int64_t step_size, double gamma) {
  if (iter < 0) throw std::invalid_argument("lr_schedule: negative iteration");
  return base_lr * std::pow(gamma, static_cast<double>(iter / step_size));
}

void SgdOptimizer::step(std::vector<ParamGroup*>& groups, double lr) {
  for (ParamGroup* g : groups) {
    if (!g->trainable) continue;
    for (auto& [name, p] : g->params) {
      detail::Node* node = p.node();
      Tensor& param = node->value;
      const Tensor grad = p.grad();
      if (!grad.same_shape(param))
        throw DimensionError("sgd_step: grad shape " + shape_str(grad.shape) +
                             " != param shape " + shape_str(param.shape) + " for " + g->name +
                             "." + name);
      auto it = velocity_.find(node);
      if (it == velocity_.end()) it = velocity_.emplace(node, Tensor::zeros(param.shape)).first;
      Tensor& v = it->second;
      for (size_t i = 0; i < param.data.size(); ++i) {
        v.data[i] = momentum_ * v.data[i] + grad.data[i] + weight_decay_ * param.data[i];
        param.data[i] -= lr * v.data[i];
      }
    }
  }
}

void SgdOptimizer::zero_grad(std::vector<ParamGroup*>& groups) {
  for (ParamGroup* g : groups)
    for (auto& [name, p] : g->params) p.zero_grad();
}

}  // namespace dod
