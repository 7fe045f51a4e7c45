#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "fer/tensor.hpp"

namespace fer {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // near-zero partials from turning round-off into huge ratios.
  double floor = 1e-3;
};

struct GradCheckEntry {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  GradCheckEntry worst;
  std::vector<double> max_rel_error_per_input;

  std::string summary() const;
};

/// Compares reverse-mode gradients of the scalar f() against central
/// differences (f(x+h) - f(x-h)) / 2h for every element of every input.
/// Inputs must be leaves with requires_grad; requires Precision::f64.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace fer
