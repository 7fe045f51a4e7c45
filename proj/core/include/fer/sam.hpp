#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fer/tensor.hpp"

namespace fer {

/// base_lr * 0.1^floor(epoch / 10).
double lr_schedule(int epoch, double base_lr);

struct OptimizerState {
  double base_lr = 1e-3;
  double momentum = 0.9;
  double rho = 0.05;
  int epoch = 0;
  bool sam_enabled = true;
  /// One buffer per parameter, sized lazily on the first step.
  std::vector<std::vector<double>> velocity;

  double lr() const { return lr_schedule(epoch, base_lr); }
  /// Throws ConfigError unless momentum is in [0, 1), rho >= 0 and base_lr > 0.
  void validate() const;
};

/// v = momentum * v + g; w -= lr * v, using each parameter's accumulated grad.
/// Throws ContractError naming the first parameter without a gradient.
void sgd_momentum_step(std::span<const NamedTensor> params, OptimizerState& state);

struct Perturbation {
  std::vector<std::vector<double>> eps;
  double grad_norm = 0.0;
  bool skipped = false;  // zero gradient: eps is all zeros
};

/// eps = rho * g / ||g||, the norm taken over all parameters jointly.
Perturbation sam_ascent(std::span<const NamedTensor> params, double rho);

struct StepResult {
  double loss = 0.0;  // loss at the unperturbed weights
  int passes = 0;     // forward+backward evaluations of the closure
  bool ascent_skipped = false;
};

/// One optimizer update. loss_fn must run a forward pass over the current
/// batch and return a scalar loss; it is called once for plain SGD and twice
/// with SAM (at w, then at w + eps), and the descent is applied at w.
StepResult sam_step(std::span<const NamedTensor> params, const std::function<Tensor()>& loss_fn,
                    OptimizerState& state);

}  // namespace fer
