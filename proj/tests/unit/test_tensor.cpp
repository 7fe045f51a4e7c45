#include <cmath>
#include <numeric>
#include <unordered_set>

#include "doctest.h"
#include "fer/autograd.hpp"
#include "fer/errors.hpp"
#include "fer/grad_check.hpp"
#include "fer/ops.hpp"
#include "test_support.hpp"

using namespace fer;
using fer::testing::probe;
using fer::testing::random_tensor;

namespace {

GradCheckOptions tol(double t) {
  GradCheckOptions o;
  o.tolerance = t;
  return o;
}

void check_close(std::span<const double> got, std::initializer_list<double> want, double eps = 1e-12) {
  REQUIRE(got.size() == want.size());
  std::size_t i = 0;
  for (double w : want) CHECK(got[i++] == doctest::Approx(w).epsilon(eps));
}

}  // namespace

TEST_CASE("tensor construction validates shape") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
  auto t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    CounterRng rng(1);
    auto m = random_tensor({3, 3}, rng);
    auto eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto out = matmul(eye, m);
    for (std::size_t i = 0; i < 9; ++i) CHECK(out.data()[i] == m.data()[i]);
  }
  SUBCASE("hand arithmetic") {
    auto out = matmul(Tensor::from_data({2, 2}, {1, 2, 3, 4}), Tensor::from_data({2, 1}, {1, 1}));
    CHECK(out.shape() == Shape{2, 1});
    check_close(out.data(), {3, 7});
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2, 3]") != std::string::npos);
      CHECK(msg.find("[4, 2]") != std::string::npos);
    }
  }
  SUBCASE("gradient vs central differences") {
    CounterRng rng(2);
    auto a = random_tensor({4, 5}, rng);
    auto b = random_tensor({5, 3}, rng);
    auto r = grad_check([&] { return probe(matmul(a, b)); }, {a, b}, tol(1e-6));
    CHECK_MESSAGE(r.passed, r.summary());
  }
  SUBCASE("broadcast batch gradient") {
    CounterRng rng(3);
    auto a = random_tensor({2, 3, 4, 5}, rng);
    auto b = random_tensor({3, 5, 2}, rng);
    auto out = matmul(a, b);
    CHECK(out.shape() == Shape{2, 3, 4, 2});
    auto r = grad_check([&] { return probe(matmul(a, b)); }, {a, b}, tol(1e-6));
    CHECK_MESSAGE(r.passed, r.summary());
  }
}

TEST_CASE("softmax") {
  check_close(softmax(Tensor::from_data({3}, {0, 0, 0}), 0).data(), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  auto big = softmax(Tensor::from_data({2}, {1000, 0}), 0);
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] >= 0.0);
  CHECK(big.data()[1] < 1e-300);
  CHECK(std::isfinite(big.data()[1]));

  CounterRng rng(4);
  auto x = random_tensor({7}, rng, -5, 5);
  auto y = softmax(x, 0);
  const double total = std::accumulate(y.data().begin(), y.data().end(), 0.0);
  CHECK(std::abs(total - 1.0) < 1e-12);
  auto r = grad_check([&] { return probe(softmax(x, 0)); }, {x}, tol(1e-6));
  CHECK_MESSAGE(r.passed, r.summary());

  auto x3 = random_tensor({2, 4, 3}, rng, -3, 3);
  auto r3 = grad_check([&] { return probe(softmax(x3, 1)); }, {x3}, tol(1e-6));
  CHECK_MESSAGE(r3.passed, r3.summary());
}

TEST_CASE("softmax rows are a distribution for arbitrary finite inputs") {
  CounterRng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng.below(6);
    const std::size_t cols = 1 + rng.below(9);
    const double spread = std::pow(10.0, rng.uniform(-2, 3));
    auto y = softmax(random_tensor({rows, cols}, rng, -spread, spread, false), -1);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        CHECK(y.data()[i * cols + j] >= 0.0);
        s += y.data()[i * cols + j];
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layer_norm") {
  auto ones = Tensor::full({4}, 1.0);
  auto zeros = Tensor::zeros({4});
  auto out = layer_norm(Tensor::full({4}, 3.5), ones, zeros);
  for (double v : out.data()) CHECK(v == 0.0);

  auto std2 = layer_norm(Tensor::from_data({2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-14);
  check_close(std2.data(), {-1, 1}, 1e-12);

  CounterRng rng(6);
  auto x = random_tensor({3, 5}, rng, -2, 2);
  auto g = random_tensor({5}, rng, 0.5, 1.5);
  auto b = random_tensor({5}, rng);
  auto r = grad_check([&] { return probe(layer_norm(x, g, b)); }, {x, g, b}, tol(1e-5));
  CHECK_MESSAGE(r.passed, r.summary());
  CHECK_THROWS_AS(layer_norm(x, Tensor::zeros({4}), b), DimensionError);
}

TEST_CASE("activations") {
  CHECK(gelu(Tensor::scalar(0)).item() == 0.0);
  CHECK(relu(Tensor::scalar(-2)).item() == 0.0);
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(std::abs(gelu(Tensor::scalar(10)).item() - 10.0) < 1e-6);
  CHECK(sigmoid(Tensor::scalar(-800)).item() >= 0.0);

  CounterRng rng(7);
  // Keep relu probes at least 0.1 away from its kink.
  std::vector<double> v(12);
  for (auto& e : v) e = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 3.0);
  auto x = Tensor::from_data({12}, v, true);
  for (auto fn : {&gelu, &relu, &sigmoid}) {
    auto r = grad_check([&] { return probe((*fn)(x)); }, {x}, tol(1e-6));
    CHECK_MESSAGE(r.passed, r.summary());
  }
}

TEST_CASE("linear") {
  auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto same = linear(x, eye, Tensor::zeros({3}));
  for (std::size_t i = 0; i < 6; ++i) CHECK(same.data()[i] == x.data()[i]);

  auto hand = linear(Tensor::from_data({2}, {1, 1}), Tensor::from_data({2, 1}, {1, 2}), Tensor::from_data({1}, {3}));
  check_close(hand.data(), {6});

  CHECK_THROWS_AS(linear(x, Tensor::zeros({4, 2}), Tensor()), DimensionError);

  CounterRng rng(8);
  auto xi = random_tensor({2, 3, 4}, rng);
  auto w = random_tensor({4, 5}, rng);
  auto b = random_tensor({5}, rng);
  auto r = grad_check([&] { return probe(linear(xi, w, b)); }, {xi, w, b}, tol(1e-6));
  CHECK_MESSAGE(r.passed, r.summary());
}

TEST_CASE("cross_entropy") {
  const std::vector<int> t{3};
  CHECK(cross_entropy(Tensor::zeros({1, 7}), t).item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  CHECK(std::abs(cross_entropy(Tensor::zeros({1, 7}), t).item() - 1.945910) < 1e-6);

  std::vector<double> dominant(7, 0.0);
  dominant[3] = 200.0;
  CHECK(cross_entropy(Tensor::from_data({1, 7}, dominant), t).item() < 1e-80);

  const std::vector<int> bad{7};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 7}), bad), LabelError);

  CounterRng rng(9);
  auto logits = random_tensor({4, 7}, rng, -3, 3);
  const std::vector<int> targets{0, 6, 2, 2};
  auto r = grad_check([&] { return cross_entropy(logits, targets); }, {logits}, tol(1e-6));
  CHECK_MESSAGE(r.passed, r.summary());
}

TEST_CASE("structural ops") {
  CounterRng rng(10);
  SUBCASE("roll inverse") {
    auto x = random_tensor({2, 5, 4, 3}, rng, -1, 1, false);
    auto back = cyclic_roll(cyclic_roll(x, {-2, 3}, {1, 2}), {2, -3}, {1, 2});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
    auto r1 = cyclic_roll(Tensor::from_data({4}, {1, 2, 3, 4}), {1}, {0});
    check_close(r1.data(), {4, 1, 2, 3});
  }
  SUBCASE("concat") {
    auto c = concat({Tensor::from_data({2, 2}, {1, 2, 3, 4}), Tensor::from_data({2, 2}, {5, 6, 7, 8})}, 1);
    CHECK(c.shape() == Shape{2, 4});
    check_close(c.data(), {1, 2, 5, 6, 3, 4, 7, 8});
    CHECK_THROWS_AS(concat({Tensor::zeros({2, 2}), Tensor::zeros({3, 3})}, 1), DimensionError);
  }
  SUBCASE("slice and reductions") {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    check_close(slice(x, 1, 1, 3).data(), {2, 3, 5, 6});
    check_close(sum(x, 0).data(), {5, 7, 9});
    check_close(mean(x, 1).data(), {2, 5});
    CHECK(sum_all(x).item() == 21);
    CHECK_THROWS_AS(slice(x, 1, 2, 4), DimensionError);
    CHECK_THROWS_AS(sum(x, 2), DimensionError);
    CHECK_THROWS_AS(reshape(x, {4, 2}), DimensionError);
  }
  SUBCASE("permute") {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto t = transpose(x, 0, 1);
    CHECK(t.shape() == Shape{3, 2});
    check_close(t.data(), {1, 4, 2, 5, 3, 6});
    CHECK_THROWS_AS(permute(x, {0, 0}), DimensionError);
  }
  SUBCASE("gradients") {
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 2, 4}, rng);
    auto opts = tol(1e-6);
    std::vector<std::function<Tensor()>> fns{
        [&] { return probe(reshape(a, {4, 6})); },
        [&] { return probe(permute(a, {2, 0, 1})); },
        [&] { return probe(concat({a, b}, 1)); },
        [&] { return probe(slice(a, 2, 1, 3)); },
        [&] { return probe(sum(a, 1)); },
        [&] { return probe(mean(a, 2)); },
        [&] { return probe(cyclic_roll(a, {1, -1}, {1, 2})); },
        [&] { return probe(add(a, slice(b, 1, 0, 1))); },
        [&] { return probe(mul(a, slice(b, 1, 1, 2))); },
        [&] { return probe(sub(a, slice(b, 1, 1, 2))); },
        [&] {
          const std::vector<std::size_t> idx{2, 0, 2, 1};
          return probe(gather_rows(reshape(a, {6, 4}), idx));
        },
    };
    for (const auto& fn : fns) {
      auto r = grad_check(fn, {a, b}, opts);
      CHECK_MESSAGE(r.passed, r.summary());
    }
  }
  SUBCASE("structural ops conserve values") {
    for (int trial = 0; trial < 20; ++trial) {
      Shape s{1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(4)};
      auto x = random_tensor(s, rng, -10, 10, false);
      const double total = sum_all(x).item();
      std::vector<double> sorted_in(x.data().begin(), x.data().end());
      std::sort(sorted_in.begin(), sorted_in.end());
      auto p = permute(x, {2, 0, 1});
      auto r = cyclic_roll(x, {static_cast<int>(rng.below(7)) - 3, 2}, {0, 2});
      for (const auto& y : {p, r, reshape(x, {x.numel()})}) {
        std::vector<double> sorted_out(y.data().begin(), y.data().end());
        std::sort(sorted_out.begin(), sorted_out.end());
        CHECK(sorted_out == sorted_in);
        CHECK(sum_all(y).item() == doctest::Approx(total).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    auto x = Tensor::from_data({3}, {1, 2, 3}, true);
    sum_all(x).backward();
    check_close(x.grad(), {1, 1, 1});
  }
  SUBCASE("fan-out accumulates") {
    auto x = Tensor::from_data({2}, {0.5, -1.5}, true);
    sum_all(add(x, x)).backward();
    check_close(x.grad(), {2, 2});
  }
  SUBCASE("k additive consumers give k times the single-use gradient") {
    CounterRng rng(11);
    auto x = random_tensor({3, 4}, rng);
    auto f = [&](const Tensor& v) { return mul(sigmoid(v), v); };
    probe(f(x)).backward();
    std::vector<double> single(x.grad().begin(), x.grad().end());
    for (int k = 2; k <= 5; ++k) {
      x.clear_grad();
      Tensor acc = f(x);
      for (int i = 1; i < k; ++i) acc = add(acc, f(x));
      probe(acc).backward();
      for (std::size_t i = 0; i < single.size(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(k * single[i]).epsilon(1e-14));
      }
    }
  }
  SUBCASE("grads persist across calls until cleared") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    sum_all(x).backward();
    sum_all(x).backward();
    check_close(x.grad(), {2, 2});
    x.zero_grad();
    check_close(x.grad(), {0, 0});
  }
  SUBCASE("non-scalar loss is rejected") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    CHECK_THROWS_AS(scale(x, 2.0).backward(), ContractError);
  }
  SUBCASE("no-grad mode records nothing") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    autograd::NoGradGuard guard;
    CHECK_FALSE(scale(x, 2.0).requires_grad());
  }
}

TEST_CASE("tape is topological and visits nodes once") {
  CounterRng rng(12);
  auto x = random_tensor({2, 3}, rng);
  auto w = random_tensor({3, 3}, rng);
  auto h = linear(x, w, Tensor());
  auto y = add(h, gelu(h));
  auto loss = sum_all(mul(y, y));
  const auto tape = autograd::Tape::record(loss);
  std::unordered_set<const autograd::Node*> seen;
  for (const auto* node : tape.nodes()) {
    for (const auto& in : node->inputs) {
      if (in->requires_grad) CHECK(seen.count(in.get()) == 1);
    }
    CHECK(seen.insert(node).second);
  }
  CHECK(tape.nodes().back() == loss.node());
}

TEST_CASE("grad_check flags a corrupted backward rule") {
  CounterRng rng(13);
  auto x = random_tensor({5}, rng);
  auto doubled_wrong = [](const Tensor& in) {
    std::vector<double> out(in.data().begin(), in.data().end());
    for (auto& v : out) v *= 3.0;
    return autograd::make_result("triple_bad", in.shape(), std::move(out), {in}, [](autograd::Node& self) {
      auto* g = autograd::input_grad(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += 2.0 * self.grad[i];
    });
  };
  auto r = grad_check([&] { return probe(doubled_wrong(x)); }, {x}, tol(1e-6));
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 0.1);
}

TEST_CASE("grad_check requires 64-bit mode") {
  auto x = Tensor::from_data({1}, {1.0}, true);
  PrecisionScope f32(Precision::f32);
  CHECK_THROWS_AS(grad_check([&] { return sum_all(x); }, {x}), ContractError);
}

TEST_CASE("32-bit mode rounds op results") {
  PrecisionScope f32(Precision::f32);
  auto x = Tensor::from_data({1}, {0.1});
  CHECK(x.item() == static_cast<double>(0.1f));
  auto y = scale(x, 1.0 / 3.0);
  CHECK(y.item() == static_cast<double>(static_cast<float>(static_cast<double>(0.1f) / 3.0)));
}
