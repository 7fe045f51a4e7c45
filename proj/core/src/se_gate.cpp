#include "fer/se_gate.hpp"

#include <string>
#include <vector>

#include "fer/errors.hpp"
#include "fer/ops.hpp"
#include "init.hpp"

namespace fer {

SeParams init_se_params(std::size_t channels, std::size_t reduction, CounterRng& rng) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("se reduction " + std::to_string(reduction) + " does not divide " + std::to_string(channels) +
                      " channels");
  }
  const std::size_t hidden = channels / reduction;
  SeParams p;
  p.fc1_weight = detail::trunc_normal({channels, hidden}, rng);
  p.fc1_bias = Tensor::zeros({hidden}, true);
  p.fc2_weight = detail::trunc_normal({hidden, channels}, rng);
  p.fc2_bias = Tensor::zeros({channels}, true);
  return p;
}

Tensor excitation_gate(const Tensor& z, const SeParams& params) {
  return sigmoid(linear(relu(linear(z, params.fc1_weight, params.fc1_bias)), params.fc2_weight, params.fc2_bias));
}

Tensor excite(const Tensor& z, const SeParams& params) { return mul(excitation_gate(z, params), z); }

}  // namespace fer
