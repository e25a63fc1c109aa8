#include "dod/autodiff.hpp"

#include <unordered_set>

namespace dod {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Value::Value(Tensor t, bool requires_grad) {
  n_ = std::make_shared<detail::Node>();
  n_->value = std::move(t);
  n_->requires_grad = requires_grad && grad_enabled();
}

Tensor Value::grad() const {
  if (n_->has_grad) return n_->grad;
  return Tensor::zeros(n_->value.shape);
}

void Value::zero_grad() {
  if (n_->has_grad) std::fill(n_->grad.data.begin(), n_->grad.data.end(), 0.0);
}

Value Value::make_op(Tensor out, std::vector<Value> inputs,
                     std::function<void(detail::Node&)> backward_fn) {
  Value v;
  v.n_ = std::make_shared<detail::Node>();
  v.n_->value = std::move(out);
  if (grad_enabled()) {
    bool any = false;
    for (const Value& in : inputs)
      if (in.requires_grad()) any = true;
    if (any && backward_fn) {
      v.n_->requires_grad = true;
      v.n_->backward_fn = std::move(backward_fn);
      for (Value& in : inputs) v.n_->inputs.push_back(in.n_);
    }
  }
  return v;
}

void Value::backward() const {
  if (!n_ || !n_->requires_grad)
    throw std::runtime_error("backward() on a value that does not require grad");
  if (n_->value.numel() != 1)
    throw std::runtime_error("backward() requires a scalar value, got shape " +
                             shape_str(n_->value.shape));

  // iterative post-order topological sort
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(n_.get(), 0);
  visited.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      detail::Node* child = node->inputs[idx++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  n_->ensure_grad().data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && node->has_grad) node->backward_fn(*node);
  }
}

}  // namespace dod
