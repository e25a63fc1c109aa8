#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dod/autodiff.hpp"

namespace dod {

// Named, ordered parameter collection. A parameter belongs to exactly one
// group; groups with trainable=false are never touched by the optimizer.
struct ParamGroup {
  std::string name;
  std::vector<std::pair<std::string, Value>> params;
  bool trainable = true;

  ParamGroup() = default;
  explicit ParamGroup(std::string n) : name(std::move(n)) {}

  Value& find(const std::string& pname);
  const Value& find(const std::string& pname) const;
  void add(const std::string& pname, Value v);
};

// lr = base_lr * gamma^floor(iter / step_size)
double lr_schedule(double base_lr, int64_t iter, int64_t step_size, double gamma);

// SGD with momentum and weight decay:
//   v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<ParamGroup*>& groups, double lr);
  static void zero_grad(std::vector<ParamGroup*>& groups);

 private:
  double momentum_, weight_decay_;
  std::map<const detail::Node*, Tensor> velocity_;
};

}  // namespace dod
