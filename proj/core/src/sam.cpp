#include "fer/sam.hpp"

#include <algorithm>
#include <cmath>
#include <ranges>
#include <string>

#include "fer/errors.hpp"
#include "fer/log.hpp"

namespace fer {

double lr_schedule(int epoch, double base_lr) {
  if (epoch < 0) throw ContractError("negative epoch " + std::to_string(epoch));
  return base_lr * std::pow(0.1, epoch / 10);
}

void OptimizerState::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1), got " + std::to_string(momentum));
  if (!(rho >= 0.0)) throw ConfigError("rho must be >= 0, got " + std::to_string(rho));
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0, got " + std::to_string(base_lr));
}

void sgd_momentum_step(std::span<const NamedTensor> params, OptimizerState& state) {
  state.validate();
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw ContractError("no gradient for parameter " + p.name);
  }
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.tensor.numel(), 0.0);
  }
  const double lr = state.lr();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = state.velocity[i];
    if (v.size() != params[i].tensor.numel()) throw ContractError("velocity size mismatch for " + params[i].name);
    const auto g = params[i].tensor.grad();
    Tensor t = params[i].tensor;
    auto w = t.mutable_data();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = round_to_mode(state.momentum * v[j] + g[j]);
      w[j] = round_to_mode(w[j] - lr * v[j]);
    }
  }
}

Perturbation sam_ascent(std::span<const NamedTensor> params, double rho) {
  Perturbation out;
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw ContractError("no gradient for parameter " + p.name);
    for (double g : p.tensor.grad()) sq += g * g;
  }
  out.grad_norm = std::sqrt(sq);
  out.skipped = !(out.grad_norm > 0.0);
  const double factor = out.skipped ? 0.0 : rho / out.grad_norm;
  for (const auto& p : params) {
    auto& e = out.eps.emplace_back(p.tensor.numel(), 0.0);
    const auto g = p.tensor.grad();
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = factor * g[j];
  }
  if (out.skipped && rho > 0.0) log_warning("SAM ascent skipped: gradient norm is zero");
  return out;
}

namespace {

double run_pass(std::span<const NamedTensor> params, const std::function<Tensor()>& loss_fn) {
  for (Tensor t : params | std::views::transform(&NamedTensor::tensor)) t.clear_grad();
  Tensor loss = loss_fn();
  loss.backward();
  return loss.item();
}

}  // namespace

StepResult sam_step(std::span<const NamedTensor> params, const std::function<Tensor()>& loss_fn,
                    OptimizerState& state) {
  StepResult result;
  result.loss = run_pass(params, loss_fn);
  result.passes = 1;
  if (state.sam_enabled) {
    auto pert = sam_ascent(params, state.rho);
    result.ascent_skipped = pert.skipped;
    std::vector<std::vector<double>> saved;
    saved.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i].tensor;
      auto w = t.mutable_data();
      saved.emplace_back(w.begin(), w.end());
      for (std::size_t j = 0; j < w.size(); ++j) w[j] = round_to_mode(w[j] + pert.eps[i][j]);
    }
    run_pass(params, loss_fn);
    ++result.passes;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i].tensor;
      auto w = t.mutable_data();
      std::copy(saved[i].begin(), saved[i].end(), w.begin());
    }
  }
  sgd_momentum_step(params, state);
  return result;
}

}  // namespace fer
