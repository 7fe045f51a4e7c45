#include "fer/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fer/autograd.hpp"
#include "fer/errors.hpp"

namespace fer {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error << " over " << checked
     << " coordinates; worst input " << worst.input << "[" << worst.index << "] analytic=" << worst.analytic
     << " numeric=" << worst.numeric;
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  if (precision_mode() != Precision::f64) throw ContractError("grad_check requires 64-bit precision mode");
  for (auto& t : inputs) {
    if (!t.is_leaf() || !t.requires_grad()) throw ContractError("grad_check inputs must be leaves requiring grad");
    t.clear_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
    t.clear_grad();
  }

  GradCheckReport report;
  report.max_rel_error_per_input.assign(inputs.size(), 0.0);
  autograd::NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = f().item();
      values[i] = saved - options.step;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      report.max_rel_error_per_input[k] = std::max(report.max_rel_error_per_input[k], rel);
      if (report.checked == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = {k, i, a, numeric, rel};
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace fer
