#pragma once

#include <vector>

#include "fer/rng.hpp"
#include "fer/tensor.hpp"

namespace fer::detail {

// Truncated normal (sigma 0.02, cut at 2 sigma) parameter leaf.
inline Tensor trunc_normal(Shape shape, CounterRng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.truncated_normal(0.02);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace fer::detail
