#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dod/tensor.hpp"

namespace dod {

class Value;

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad, accumulates into inputs' grads.
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (!has_grad) {
      grad = Tensor::zeros(value.shape);
      has_grad = true;
    }
    return grad;
  }
};

}  // namespace detail

// Thread-local switch: when disabled, ops produce detached results and
// record no backward closures.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Shared handle to a node in the computation graph. Copying a Value aliases
// the underlying tensor.
class Value {
 public:
  Value() = default;
  explicit Value(Tensor t, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor& val() const { return n_->value; }
  Tensor& val() { return n_->value; }
  const Shape& shape() const { return n_->value.shape; }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  // Zero tensor if backward never reached this node.
  Tensor grad() const;
  void zero_grad();

  // Runs reverse-mode accumulation from this scalar node.
  void backward() const;

  detail::Node* node() const { return n_.get(); }

  // Builds an op node. `backward_fn` may be empty for non-differentiable or
  // gradient-blocking ops.
  static Value make_op(Tensor out, std::vector<Value> inputs,
                       std::function<void(detail::Node&)> backward_fn);

  // Detached leaf wrapper (used by gradient-blocking layers).
  static Value constant(Tensor t) { return Value(std::move(t), false); }

 private:
  std::shared_ptr<detail::Node> n_;
};

}  // namespace dod
