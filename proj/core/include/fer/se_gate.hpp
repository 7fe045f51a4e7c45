#pragma once

#include "fer/rng.hpp"
#include "fer/tensor.hpp"

namespace fer {

/// Excitation half of a squeeze-and-excitation block. The pooled feature
/// vector is gated as z * sigmoid(W2 relu(W1 z + b1) + b2). There is no
/// squeeze stage.
struct SeParams {
  Tensor fc1_weight;  // [C, C / r]
  Tensor fc1_bias;    // [C / r]
  Tensor fc2_weight;  // [C / r, C]
  Tensor fc2_bias;    // [C]
};

/// Weights truncated-normal (sigma 0.02), biases zero. channels % reduction must be 0.
SeParams init_se_params(std::size_t channels, std::size_t reduction, CounterRng& rng);

/// Per-channel gate values in (0, 1) for z[..., C].
Tensor excitation_gate(const Tensor& z, const SeParams& params);

/// z * excitation_gate(z).
Tensor excite(const Tensor& z, const SeParams& params);

}  // namespace fer
