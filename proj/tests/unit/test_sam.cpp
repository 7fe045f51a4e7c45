#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "fer/errors.hpp"
#include "fer/log.hpp"
#include "fer/ops.hpp"
#include "fer/sam.hpp"
#include "test_support.hpp"

using namespace fer;
using fer::testing::random_tensor;

namespace {

// L(w) = 0.5 * sum over params of |w|^2
Tensor half_sq(const std::vector<NamedTensor>& params) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& p : params) total = add(total, scale(sum_all(mul(p.tensor, p.tensor)), 0.5));
  return total;
}

std::vector<NamedTensor> leaves(std::vector<std::vector<double>> values) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t n = values[i].size();
    out.push_back({"p" + std::to_string(i), Tensor::from_data({n}, std::move(values[i]), true)});
  }
  return out;
}

struct TinyProblem {
  std::vector<NamedTensor> params;
  Tensor x;
  std::vector<int> y;

  explicit TinyProblem(std::uint64_t seed) {
    CounterRng rng(seed);
    params = {{"w1", random_tensor({5, 8}, rng, -0.5, 0.5)},
              {"b1", random_tensor({8}, rng, -0.1, 0.1)},
              {"w2", random_tensor({8, 3}, rng, -0.5, 0.5)}};
    x = random_tensor({6, 5}, rng, -1, 1, false);
    y = {0, 1, 2, 2, 1, 0};
  }
  Tensor loss() const {
    return cross_entropy(linear(gelu(linear(x, params[0].tensor, params[1].tensor)), params[2].tensor, Tensor()), y);
  }
};

}  // namespace

TEST_CASE("lr_schedule steps by 0.1 every ten epochs") {
  CHECK(lr_schedule(0, 1e-3) == 1e-3);
  CHECK(lr_schedule(9, 1e-3) == 1e-3);
  CHECK(lr_schedule(10, 1e-3) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_schedule(25, 1e-3) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK_THROWS_AS(lr_schedule(-1, 1e-3), ContractError);
}

TEST_CASE("sgd momentum hand arithmetic") {
  auto p = leaves({{0.0}});
  OptimizerState st;
  st.base_lr = 0.1;
  st.momentum = 0.9;
  auto unit_grad = [&] {
    p[0].tensor.clear_grad();
    sum_all(p[0].tensor).backward();
  };
  unit_grad();
  sgd_momentum_step(p, st);
  CHECK(p[0].tensor.data()[0] == doctest::Approx(-0.1).epsilon(1e-15));
  unit_grad();
  sgd_momentum_step(p, st);
  CHECK(st.velocity[0][0] == doctest::Approx(1.9).epsilon(1e-15));
  CHECK(p[0].tensor.data()[0] == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("zero momentum is vanilla SGD") {
  CounterRng rng(50);
  auto p = leaves({{0.3, -1.2, 2.0}});
  OptimizerState st;
  st.base_lr = 0.05;
  st.momentum = 0.0;
  for (int step = 0; step < 5; ++step) {
    std::vector<double> before(p[0].tensor.data().begin(), p[0].tensor.data().end());
    p[0].tensor.clear_grad();
    fer::testing::probe(p[0].tensor, 60 + step).backward();
    std::vector<double> g(p[0].tensor.grad().begin(), p[0].tensor.grad().end());
    sgd_momentum_step(p, st);
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[0].tensor.data()[i] == before[i] - 0.05 * g[i]);
  }
}

TEST_CASE("momentum descent on a quadratic decays monotonically") {
  // Heavy-ball on 0.5 w^2 has real positive modes only for lr <= (1 - sqrt(mu))^2.
  auto p = leaves({{1.0}});
  OptimizerState st;
  st.base_lr = 0.002;
  st.momentum = 0.9;
  st.sam_enabled = false;
  double prev = 1.0, w_ref = 1.0, v_ref = 0.0;
  for (int step = 0; step < 3000; ++step) {
    sam_step(p, [&] { return half_sq(p); }, st);
    v_ref = 0.9 * v_ref + w_ref;
    w_ref -= 0.002 * v_ref;
    const double w = p[0].tensor.data()[0];
    REQUIRE(w == w_ref);
    REQUIRE(w < prev);
    REQUIRE(w > 0.0);
    prev = w;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("missing gradient names the parameter") {
  auto p = leaves({{1.0}, {2.0}});
  sum_all(p[0].tensor).backward();
  OptimizerState st;
  try {
    sgd_momentum_step(p, st);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("p1") != std::string::npos);
  }
}

TEST_CASE("invalid hyperparameters") {
  OptimizerState st;
  st.momentum = 1.0;
  CHECK_THROWS_AS(st.validate(), ConfigError);
  st.momentum = 0.9;
  st.rho = -0.1;
  CHECK_THROWS_AS(st.validate(), ConfigError);
}

TEST_CASE("sam_ascent") {
  SUBCASE("g = [3, 4]") {
    auto p = leaves({{1.5, 2.0}});
    half_sq(p).backward();  // grad = w
    auto pert = sam_ascent(p, 0.05);
    CHECK(pert.eps[0][0] == doctest::Approx(0.03).epsilon(1e-14));
    CHECK(pert.eps[0][1] == doctest::Approx(0.04).epsilon(1e-14));
    CHECK(pert.grad_norm == doctest::Approx(2.5).epsilon(1e-15));
  }
  SUBCASE("norm is global across tensors") {
    auto p = leaves({{3.0}, {4.0}});
    half_sq(p).backward();
    auto pert = sam_ascent(p, 0.05);
    CHECK(pert.eps[0][0] == doctest::Approx(0.03).epsilon(1e-14));
    CHECK(pert.eps[1][0] == doctest::Approx(0.04).epsilon(1e-14));
  }
  SUBCASE("zero gradient skips with a warning") {
    auto p = leaves({{0.0, 0.0}});
    half_sq(p).backward();
    std::vector<std::string> seen;
    auto old = set_log_sink([&](LogLevel, std::string_view m) { seen.emplace_back(m); });
    auto pert = sam_ascent(p, 0.05);
    set_log_sink(old);
    CHECK(pert.skipped);
    CHECK(pert.eps[0] == std::vector<double>{0.0, 0.0});
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].find("zero") != std::string::npos);
  }
  SUBCASE("radius is exact for random gradients") {
    CounterRng rng(51);
    for (int trial = 0; trial < 50; ++trial) {
      TinyProblem prob(1000 + trial);
      prob.loss().backward();
      const double rho = rng.uniform(0.001, 2.0);
      auto pert = sam_ascent(prob.params, rho);
      double sq = 0.0;
      for (const auto& e : pert.eps) {
        for (double v : e) sq += v * v;
      }
      CHECK(std::abs(std::sqrt(sq) - rho) <= 1e-12);
    }
  }
  SUBCASE("ascent does not decrease a positive definite quadratic") {
    CounterRng rng(52);
    const std::size_t n = 4;
    for (int trial = 0; trial < 20; ++trial) {
      // A = M^T M + I
      auto m = random_tensor({n, n}, rng, -1, 1, false);
      std::vector<double> eye(n * n, 0.0);
      for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
      Tensor a = add(matmul(transpose(m, 0, 1), m), Tensor::from_data({n, n}, eye));
      auto w = random_tensor({n, 1}, rng, -1, 1);
      auto quad = [&](const Tensor& v) { return scale(sum_all(mul(v, matmul(a, v))), 0.5); };
      std::vector<NamedTensor> p{{"w", w}};
      Tensor base = quad(w);
      base.backward();
      auto pert = sam_ascent(p, 0.1);
      Tensor moved = Tensor::from_data({n, 1}, std::vector<double>(w.data().begin(), w.data().end()));
      for (std::size_t i = 0; i < n; ++i) moved.mutable_data()[i] += pert.eps[0][i];
      CHECK(quad(moved).item() >= base.item());
    }
  }
}

TEST_CASE("sam_step closed-form one-dimensional update") {
  auto p = leaves({{1.0}});
  OptimizerState st;
  st.base_lr = 0.1;
  st.momentum = 0.0;
  st.rho = 0.05;
  auto r = sam_step(p, [&] { return half_sq(p); }, st);
  CHECK(r.passes == 2);
  CHECK(r.loss == 0.5);
  CHECK(p[0].tensor.data()[0] == doctest::Approx(0.895).epsilon(1e-15));
}

TEST_CASE("pass counting") {
  TinyProblem prob(53);
  int calls = 0;
  OptimizerState st;
  auto r = sam_step(prob.params, [&] { ++calls; return prob.loss(); }, st);
  CHECK(r.passes == 2);
  CHECK(calls == 2);
  st.sam_enabled = false;
  calls = 0;
  r = sam_step(prob.params, [&] { ++calls; return prob.loss(); }, st);
  CHECK(r.passes == 1);
  CHECK(calls == 1);
}

TEST_CASE("descent is applied at the unperturbed weights") {
  TinyProblem prob(54);
  OptimizerState st;
  st.base_lr = 0.2;
  st.rho = 0.3;
  // Two warm-up steps.
  for (int i = 0; i < 2; ++i) sam_step(prob.params, [&] { return prob.loss(); }, st);
  std::vector<std::vector<double>> w0, v0;
  for (const auto& p : prob.params) w0.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  v0 = st.velocity;

  // Reference g2 computed by hand at w + eps.
  TinyProblem ref(54);
  for (std::size_t i = 0; i < ref.params.size(); ++i) {
    std::copy(w0[i].begin(), w0[i].end(), ref.params[i].tensor.mutable_data().begin());
  }
  ref.loss().backward();
  auto pert = sam_ascent(ref.params, st.rho);
  for (std::size_t i = 0; i < ref.params.size(); ++i) {
    auto w = ref.params[i].tensor.mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] += pert.eps[i][j];
    ref.params[i].tensor.clear_grad();
  }
  ref.loss().backward();

  sam_step(prob.params, [&] { return prob.loss(); }, st);
  const double lr = st.lr();
  for (std::size_t i = 0; i < prob.params.size(); ++i) {
    const auto g2 = ref.params[i].tensor.grad();
    for (std::size_t j = 0; j < w0[i].size(); ++j) {
      const double want = w0[i][j] - lr * (st.momentum * v0[i][j] + g2[j]);
      CHECK(prob.params[i].tensor.data()[j] == want);
    }
  }
}

TEST_CASE("rho = 0 reproduces plain SGD momentum bitwise over 100 steps") {
  TinyProblem a(55), b(55), c(55);
  OptimizerState sa, sb, sc;
  sa.rho = 0.0;
  sb.sam_enabled = false;
  sc.rho = 0.0;
  sa.base_lr = sb.base_lr = sc.base_lr = 0.05;
  bool same = true;
  for (int step = 0; step < 100; ++step) {
    sa.epoch = sb.epoch = sc.epoch = step / 10;
    sam_step(a.params, [&] { return a.loss(); }, sa);
    sam_step(b.params, [&] { return b.loss(); }, sb);
    // Hand-rolled base update for comparison.
    for (auto& p : c.params) p.tensor.clear_grad();
    c.loss().backward();
    sgd_momentum_step(c.params, sc);
    for (std::size_t i = 0; i < a.params.size(); ++i) {
      for (std::size_t j = 0; j < a.params[i].tensor.numel(); ++j) {
        same = same && a.params[i].tensor.data()[j] == b.params[i].tensor.data()[j] &&
               b.params[i].tensor.data()[j] == c.params[i].tensor.data()[j];
      }
    }
  }
  CHECK(same);
}

TEST_CASE("SAM on half squared norm matches the closed form over 50 steps") {
  auto p = leaves({{0.8, -0.3, 1.7}, {-2.0, 0.4}});
  std::vector<double> ref{0.8, -0.3, 1.7, -2.0, 0.4};
  OptimizerState st;
  st.base_lr = 0.05;
  st.momentum = 0.0;
  st.rho = 0.05;
  double worst = 0.0;
  for (int step = 0; step < 50; ++step) {
    sam_step(p, [&] { return half_sq(p); }, st);
    double norm = 0.0;
    for (double v : ref) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : ref) v = v * (1 - st.base_lr) - st.base_lr * st.rho * v / norm;
    std::size_t k = 0;
    for (const auto& t : p) {
      for (double v : t.tensor.data()) worst = std::max(worst, std::abs(v - ref[k++]));
    }
  }
  CHECK(worst <= 1e-12);
}
