#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fer/tensor.hpp"

namespace fer::autograd {

struct Node;

// Reads self.grad and accumulates into the gradients of self.inputs.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  std::string op;  // empty for leaves
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool is_leaf() const { return op.empty(); }
};

/// Zero-initialised gradient buffer of input i, or nullptr when that input
/// does not take part in differentiation.
std::vector<double>* input_grad(Node& self, std::size_t i);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

/// Wraps a freshly computed op result. The backward rule is recorded only
/// when gradients are enabled and some input requires them. Data is rounded
/// to the active precision mode.
Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

/// Ordered record of the operations reachable from a root, restricted to
/// nodes that require gradients. Every node appears once, after its inputs.
class Tape {
 public:
  static Tape record(const Tensor& root);

  const std::vector<Node*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node*> nodes_;
};

}  // namespace fer::autograd
