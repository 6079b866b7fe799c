#pragma once

// Reverse-mode automatic differentiation over NCHW tensors.
//
// Graphs are built dynamically: each op returns a Var holding its value and, when
// gradients are enabled and an input requires them, a closure that propagates the
// output gradient to its parents. Intermediates are reference counted, so forward
// passes under NoGradGuard release activations as soon as they go out of scope.

#include <functional>
#include <memory>
#include <vector>

#include "cyclestain/core/tensor.hpp"

namespace cyclestain::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer shaped like value, zero-initialised on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Value of a single-element tensor.
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
/// Leaf that accumulates a gradient during backward().
Var parameter(Tensor value);

/// Backpropagate from a single-element root. Leaf gradients accumulate; call on a
/// fresh graph per step.
void backward(const Var& root);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;  // zero padding on every side
};

/// weight: [out, in, k, k]; bias (optional, may be an undefined Var): [1, out, 1, 1].
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt);
Var reflect_pad(const Var& x, int pad);
Var upsample_nearest2x(const Var& x);
/// 2x2 box average with stride 2; odd trailing rows/columns are dropped.
Var avg_pool2x2(const Var& x);
/// Per-sample, per-channel normalisation without affine parameters.
Var instance_norm(const Var& x, double eps = 1e-5);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);
Var hardtanh(const Var& x);

Var add(const Var& a, const Var& b);
Var scale(const Var& x, double k);
Var concat_channels(const Var& a, const Var& b);

Var sum(const Var& x);
Var mean(const Var& x);
/// mean(|a - b|) over all elements.
Var mean_abs_diff(const Var& a, const Var& b);
/// sum((x - target)^2) over all elements.
Var sum_sq_dev(const Var& x, double target);

}  // namespace cyclestain::ad
