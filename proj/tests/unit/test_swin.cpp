#include <cmath>
#include <set>

#include "doctest.h"
#include "fer/errors.hpp"
#include "fer/grad_check.hpp"
#include "fer/ops.hpp"
#include "fer/swin.hpp"
#include "swin_oracle.hpp"
#include "test_support.hpp"

using namespace fer;
using fer::testing::random_tensor;

namespace {

AttentionParams random_attention(std::size_t d, std::size_t heads, std::size_t w, CounterRng& rng) {
  AttentionParams p;
  p.qkv = {random_tensor({d, 3 * d}, rng, -0.5, 0.5), random_tensor({3 * d}, rng, -0.2, 0.2)};
  p.proj = {random_tensor({d, d}, rng, -0.5, 0.5), random_tensor({d}, rng, -0.2, 0.2)};
  p.rel_bias_table = random_tensor({(2 * w - 1) * (2 * w - 1), heads}, rng, -0.5, 0.5);
  return p;
}

BlockParams random_block(std::size_t d, std::size_t heads, std::size_t w, std::size_t ratio, CounterRng& rng) {
  BlockParams b;
  b.norm1 = {random_tensor({d}, rng, 0.5, 1.5), random_tensor({d}, rng, -0.2, 0.2)};
  b.attn = random_attention(d, heads, w, rng);
  b.norm2 = {random_tensor({d}, rng, 0.5, 1.5), random_tensor({d}, rng, -0.2, 0.2)};
  b.fc1 = {random_tensor({d, ratio * d}, rng, -0.5, 0.5), random_tensor({ratio * d}, rng, -0.2, 0.2)};
  b.fc2 = {random_tensor({ratio * d, d}, rng, -0.5, 0.5), random_tensor({d}, rng, -0.2, 0.2)};
  return b;
}

std::vector<Tensor> block_leaves(const BlockParams& b) {
  return {b.norm1.gain, b.norm1.bias, b.attn.qkv.weight, b.attn.qkv.bias, b.attn.proj.weight,
          b.attn.proj.bias, b.attn.rel_bias_table, b.norm2.gain, b.norm2.bias, b.fc1.weight,
          b.fc1.bias, b.fc2.weight, b.fc2.bias};
}

SwinConfig toy() { return SwinConfig{}; }

}  // namespace

TEST_CASE("config geometry and validation") {
  auto c = toy();
  CHECK_NOTHROW(c.validate());
  CHECK(c.grid(0) == 16);
  CHECK(c.grid(3) == 2);
  CHECK(c.window(0) == 4);
  CHECK(c.window(3) == 2);
  CHECK(c.shift(0) == 2);
  CHECK(c.shift(2) == 0);  // window 4 covers the 4x4 grid
  CHECK(c.shift(3) == 0);
  CHECK(c.final_dim() == 192);
  // Regular first, then shifted, alternating.
  CHECK(c.block_shift(0, 0) == 0);
  CHECK(c.block_shift(0, 1) == 2);
  CHECK(c.block_shift(0, 2) == 0);
  CHECK(c.block_shift(0, 3) == 2);

  auto bad = toy();
  bad.image_size = 48;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = toy();
  bad.num_heads[1] = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = toy();
  bad.depths[2] = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = toy();
  bad.window_size = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = toy();
  bad.se_reduction = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.use_se = false;
  CHECK_NOTHROW(bad.validate());
  bad = toy();
  bad.num_classes = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("parameter shapes") {
  SwinModel model(toy(), 1);
  const auto& p = model.params();
  CHECK(p.patch_embed.weight.shape() == Shape{48, 24});
  const auto& blk = p.stages[0].blocks[0];
  CHECK(blk.attn.qkv.weight.shape() == Shape{24, 72});
  CHECK(blk.attn.rel_bias_table.shape() == Shape{49, 2});
  CHECK(p.stages[3].blocks[0].attn.rel_bias_table.shape() == Shape{9, 8});  // clamped window 2
  CHECK(p.stages[0].merge->reduction.shape() == Shape{96, 48});
  CHECK_FALSE(p.stages[3].merge.has_value());
  CHECK(p.head.weight.shape() == Shape{192, 7});
  std::set<std::string> names;
  for (const auto& nt : model.parameters()) {
    CHECK(names.insert(nt.name).second);
    CHECK(nt.tensor.requires_grad());
  }
  CHECK(names.count("se.fc1.weight") == 1);
  // Init rules: zero biases and bias tables, unit gains, small projections.
  for (double v : blk.attn.rel_bias_table.data()) CHECK(v == 0.0);
  for (double v : blk.norm1.gain.data()) CHECK(v == 1.0);
  for (double v : blk.attn.qkv.bias.data()) CHECK(v == 0.0);
  for (double v : blk.attn.qkv.weight.data()) CHECK(std::abs(v) <= 0.04);
}

TEST_CASE("patch_embed") {
  CounterRng rng(20);
  SUBCASE("224 image gives 3136 tokens") {
    auto img = random_tensor({224, 224, 3}, rng, -1, 1, false);
    LinearParams lp{random_tensor({48, 2}, rng, -1, 1, false), Tensor::zeros({2})};
    CHECK(patch_embed(img, lp, 4).shape() == Shape{3136, 2});
  }
  SUBCASE("32 image gives 64 tokens of a 48-long patch") {
    auto img = random_tensor({32, 32, 3}, rng, -1, 1, false);
    LinearParams lp{random_tensor({48, 5}, rng, -1, 1, false), Tensor::zeros({5})};
    CHECK(patch_embed(img, lp, 4).shape() == Shape{64, 5});
  }
  SUBCASE("identity projection exposes raw top-left patch") {
    auto img = random_tensor({8, 8, 3}, rng, -1, 1, false);
    std::vector<double> eye(48 * 48, 0.0);
    for (std::size_t i = 0; i < 48; ++i) eye[i * 48 + i] = 1.0;
    LinearParams lp{Tensor::from_data({48, 48}, eye), Tensor::zeros({48})};
    auto tok = patch_embed(img, lp, 4);
    CHECK(tok.shape() == Shape{4, 48});
    std::size_t k = 0;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) CHECK(tok.at({0, k++}) == img.at({r, c, ch}));
      }
    }
  }
  SUBCASE("indivisible image is a config error") {
    LinearParams lp{Tensor::zeros({48, 2}), Tensor::zeros({2})};
    CHECK_THROWS_AS(patch_embed(Tensor::zeros({10, 8, 3}), lp, 4), ConfigError);
  }
}

TEST_CASE("window partition and reverse") {
  CounterRng rng(21);
  CHECK(window_partition(Tensor::zeros({1, 8, 8, 3}), 8, 8, 4).shape() == Shape{4, 16, 3});
  CHECK(window_partition(Tensor::zeros({56 * 56, 2}), 56, 56, 7).shape() == Shape{64, 49, 2});
  CHECK_THROWS_AS(window_partition(Tensor::zeros({1, 8, 8, 3}), 8, 8, 3), ConfigError);

  // First window holds the top-left w x w block in row-major order.
  auto x = random_tensor({1, 4, 4, 1}, rng, -1, 1, false);
  auto win = window_partition(x, 4, 4, 2);
  CHECK(win.at({0, 0, 0}) == x.at({0, 0, 0, 0}));
  CHECK(win.at({0, 1, 0}) == x.at({0, 0, 1, 0}));
  CHECK(win.at({0, 2, 0}) == x.at({0, 1, 0, 0}));
  CHECK(win.at({1, 0, 0}) == x.at({0, 0, 2, 0}));

  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t w = 1 + rng.below(4);
    const std::size_t gh = w * (1 + rng.below(4));
    const std::size_t gw = w * (1 + rng.below(4));
    const std::size_t b = 1 + rng.below(3);
    const std::size_t d = 1 + rng.below(4);
    auto t = random_tensor({b, gh, gw, d}, rng, -1, 1, false);
    auto back = window_reverse(window_partition(t, gh, gw, w), gh, gw, w);
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back.data()[i] == t.data()[i]);
  }
}

TEST_CASE("build_shift_mask") {
  auto zero = build_shift_mask(8, 8, 4, 0);
  CHECK(zero.shape() == Shape{4, 16, 16});
  for (double v : zero.data()) CHECK(v == 0.0);

  // Brute-force region map: a shifted-grid cell belongs to the region of its
  // unshifted source, which is "wrapped" along an axis when it came from the
  // first `shift` rows/cols.
  const std::size_t g = 8, w = 4, s = 2, n = w * w;
  auto mask = build_shift_mask(g, g, w, s);
  const auto md = mask.data();
  for (std::size_t wi = 0; wi < 2; ++wi) {
    for (std::size_t wj = 0; wj < 2; ++wj) {
      const std::size_t win = wi * 2 + wj;
      std::vector<int> label(n);
      std::set<int> distinct;
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t r = wi * w + t / w;
        const std::size_t c = wj * w + t % w;
        const bool wrap_r = r + s >= g;
        const bool wrap_c = c + s >= g;
        label[t] = 2 * wrap_r + wrap_c;
        distinct.insert(label[t]);
      }
      if (win == 3) CHECK(distinct.size() == 4);  // corner window
      if (win == 0) CHECK(distinct.size() == 1);
      if (win == 1 || win == 2) CHECK(distinct.size() == 2);
      for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t k = 0; k < n; ++k) {
          const double got = md[(win * n + q) * n + k];
          CHECK(got == (label[q] == label[k] ? 0.0 : kMaskedLogit));
          CHECK(got == md[(win * n + k) * n + q]);
        }
        CHECK(md[(win * n + q) * n + q] == 0.0);
      }
    }
  }
}

TEST_CASE("window_attention convexity and uniform cases") {
  CounterRng rng(22);
  const std::size_t d = 4, w = 2, n = 4;
  auto x = random_tensor({3, n, d}, rng, -1, 1, false);

  SUBCASE("equal V rows give that row") {
    auto p = random_attention(d, 2, w, rng);
    auto wq = p.qkv.weight.mutable_data();
    auto bq = p.qkv.bias.mutable_data();
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t o = 2 * d; o < 3 * d; ++o) wq[i * 3 * d + o] = 0.0;
    }
    for (std::size_t o = 0; o < d; ++o) bq[2 * d + o] = 0.25 * static_cast<double>(o) - 0.3;
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    p.proj = {Tensor::from_data({d, d}, eye), Tensor::zeros({d})};
    auto out = window_attention(x, p, Tensor(), 2, w);
    for (std::size_t r = 0; r < 3 * n; ++r) {
      for (std::size_t o = 0; o < d; ++o) CHECK(out.data()[r * d + o] == doctest::Approx(bq[2 * d + o]).epsilon(1e-12));
    }
  }
  SUBCASE("zero Q and K give the mean of V") {
    std::vector<double> wqkv(d * 3 * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) wqkv[i * 3 * d + 2 * d + i] = 1.0;
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    AttentionParams p{{Tensor::from_data({d, 3 * d}, wqkv), Tensor::zeros({3 * d})},
                      {Tensor::from_data({d, d}, eye), Tensor::zeros({d})},
                      Tensor::zeros({9, 1})};
    auto out = window_attention(x, p, Tensor(), 1, w);
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t o = 0; o < d; ++o) {
        double avg = 0.0;
        for (std::size_t t = 0; t < n; ++t) avg += x.at({b, t, o}) / n;
        for (std::size_t t = 0; t < n; ++t) CHECK(out.at({b, t, o}) == doctest::Approx(avg).epsilon(1e-12));
      }
    }
  }
  SUBCASE("probability rows sum to one") {
    auto p = random_attention(d, 2, w, rng);
    Tensor probs;
    auto mask = build_shift_mask(4, 4, 2, 1);
    window_attention(random_tensor({8, n, d}, rng, -3, 3, false), p, mask, 2, w, {}, &probs);
    CHECK(probs.shape() == Shape{8, 2, n, n});
    for (std::size_t r = 0; r < probs.numel() / n; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += probs.data()[r * n + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("shifted window attention equals brute-force per-region attention") {
  CounterRng rng(23);
  struct Case {
    std::size_t grid, w, shift, d, heads, batch;
  };
  for (const auto& c : {Case{8, 4, 2, 6, 2, 1}, Case{16, 4, 2, 4, 1, 2}, Case{8, 4, 1, 6, 3, 1}, Case{12, 4, 2, 4, 2, 1}}) {
    auto p = random_attention(c.d, c.heads, c.w, rng);
    auto x = random_tensor({c.batch, c.grid, c.grid, c.d}, rng, -2, 2, false);
    BlockGeometry geo{c.w, c.shift, c.heads, build_shift_mask(c.grid, c.grid, c.w, c.shift)};
    auto got = windowed_self_attention(x, p, geo);
    const std::size_t per = c.grid * c.grid * c.d;
    double worst = 0.0;
    for (std::size_t b = 0; b < c.batch; ++b) {
      std::vector<double> img(x.data().begin() + b * per, x.data().begin() + (b + 1) * per);
      auto want = fer::testing::brute_force_shifted_attention(img, c.grid, c.grid, c.d, p, c.heads, c.w, c.shift);
      for (std::size_t i = 0; i < per; ++i) worst = std::max(worst, std::abs(got.data()[b * per + i] - want[i]));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("swin_block") {
  CounterRng rng(24);
  const std::size_t d = 4, heads = 2, w = 2, g = 4;
  auto x = random_tensor({1, g, g, d}, rng, -1, 1, false);

  SUBCASE("all-zero parameters are the identity") {
    BlockParams zero;
    zero.norm1 = {Tensor::zeros({d}), Tensor::zeros({d})};
    zero.norm2 = zero.norm1;
    zero.attn = {{Tensor::zeros({d, 3 * d}), Tensor::zeros({3 * d})}, {Tensor::zeros({d, d}), Tensor::zeros({d})},
                 Tensor::zeros({9, heads})};
    zero.fc1 = {Tensor::zeros({d, 4 * d}), Tensor::zeros({4 * d})};
    zero.fc2 = {Tensor::zeros({4 * d, d}), Tensor::zeros({d})};
    for (std::size_t shift : {0u, 1u}) {
      BlockGeometry geo{w, shift, heads, shift ? build_shift_mask(g, g, w, shift) : Tensor()};
      auto out = swin_block(x, zero, geo);
      for (std::size_t i = 0; i < x.numel(); ++i) CHECK(out.data()[i] == x.data()[i]);
    }
  }
  SUBCASE("zero shift with zero mask matches the regular block exactly") {
    auto p = random_block(d, heads, w, 2, rng);
    auto regular = swin_block(x, p, BlockGeometry{w, 0, heads, Tensor()});
    auto masked = swin_block(x, p, BlockGeometry{w, 0, heads, build_shift_mask(g, g, w, 0)});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(masked.data()[i] == regular.data()[i]);
  }
  SUBCASE("gradient check, regular and shifted") {
    auto p = random_block(d, heads, w, 2, rng);
    auto xi = random_tensor({2, g, g, d}, rng, -1, 1);
    for (std::size_t shift : {0u, 1u}) {
      BlockGeometry geo{w, shift, heads, shift ? build_shift_mask(g, g, w, shift) : Tensor()};
      auto leaves = block_leaves(p);
      leaves.push_back(xi);
      GradCheckOptions opts;
      opts.tolerance = 1e-4;
      auto r = grad_check([&] { return fer::testing::probe(swin_block(xi, p, geo)); }, leaves, opts);
      CHECK_MESSAGE(r.passed, r.summary());
    }
  }
}

TEST_CASE("patch_merge") {
  CounterRng rng(25);
  const std::size_t d = 3;
  auto x = random_tensor({1, 8, 8, d}, rng, -1, 1, false);
  MergeParams m{{Tensor::full({4 * d}, 1.0), Tensor::zeros({4 * d})}, random_tensor({4 * d, 2 * d}, rng, -1, 1, false)};
  CHECK(patch_merge(x, m).shape() == Shape{1, 4, 4, 2 * d});

  // Identity-style reduction: output equals first half of the normalised concat.
  std::vector<double> eye(4 * d * 2 * d, 0.0);
  for (std::size_t i = 0; i < 2 * d; ++i) eye[i * 2 * d + i] = 1.0;
  m.reduction = Tensor::from_data({4 * d, 2 * d}, eye);
  auto out = patch_merge(x, m);
  for (std::size_t gi = 0; gi < 4; ++gi) {
    for (std::size_t gj = 0; gj < 4; ++gj) {
      std::vector<double> cat;
      const std::size_t offsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
      for (auto& o : offsets) {
        for (std::size_t c = 0; c < d; ++c) cat.push_back(x.at({0, 2 * gi + o[0], 2 * gj + o[1], c}));
      }
      double mu = 0.0, var = 0.0;
      for (double v : cat) mu += v / cat.size();
      for (double v : cat) var += (v - mu) * (v - mu) / cat.size();
      for (std::size_t c = 0; c < 2 * d; ++c) {
        CHECK(out.at({0, gi, gj, c}) == doctest::Approx((cat[c] - mu) / std::sqrt(var + 1e-5)).epsilon(1e-12));
      }
    }
  }
  CHECK_THROWS_AS(patch_merge(Tensor::zeros({1, 3, 4, d}), m), ConfigError);
}

TEST_CASE("forward shape trace and determinism") {
  SwinModel model(toy(), 7);
  CounterRng rng(26);
  auto img = random_tensor({64, 64, 3}, rng, -1, 1, false);
  auto r = model.forward(img);
  const std::size_t grids[] = {16, 8, 4, 2};
  const std::size_t dims[] = {24, 48, 96, 192};
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(r.stages[s].grid == grids[s]);
    CHECK(r.stages[s].dim == dims[s]);
    CHECK(r.stages[s].tokens == grids[s] * grids[s]);
  }
  CHECK(r.pooled.shape() == Shape{192});
  CHECK(r.logits.shape() == Shape{7});
  auto again = model.forward(img);
  for (std::size_t i = 0; i < 7; ++i) CHECK(again.logits.data()[i] == r.logits.data()[i]);

  // Batched forward agrees with per-image forward.
  auto batch = random_tensor({2, 64, 64, 3}, rng, -1, 1, false);
  auto rb = model.forward(batch);
  CHECK(rb.logits.shape() == Shape{2, 7});
  auto second = model.forward(reshape(slice(batch, 0, 1, 2), {64, 64, 3}));
  for (std::size_t i = 0; i < 7; ++i) CHECK(rb.logits.at({1, i}) == doctest::Approx(second.logits.data()[i]).epsilon(1e-12));

  CHECK_THROWS_AS(model.forward(Tensor::zeros({32, 32, 3})), ConfigError);
}

TEST_CASE("use_se toggle only removes the gate") {
  auto with = toy();
  auto without = toy();
  without.use_se = false;
  SwinModel a(with, 3);
  SwinModel b(without, 3);
  CHECK(a.parameters().size() == b.parameters().size() + 4);
  for (const auto& nt : b.parameters()) CHECK(nt.name.rfind("se.", 0) != 0);
  CHECK_THROWS_AS(SwinModel(without, a.params()), ConfigError);
}

TEST_CASE("end-to-end loss gradient matches finite differences") {
  SwinConfig c;
  c.image_size = 32;
  c.embed_dim = 4;
  c.depths = {2, 2, 1, 1};
  c.num_heads = {1, 2, 2, 4};
  c.window_size = 2;
  c.mlp_ratio = 1;
  c.se_reduction = 4;
  SwinModel model(c, 11);
  CounterRng rng(27);
  // Perturb every parameter away from its init.
  for (auto& nt : model.parameters()) {
    for (auto& v : nt.tensor.mutable_data()) v += rng.uniform(-0.3, 0.3);
  }
  auto images = random_tensor({2, 32, 32, 3}, rng, -1, 1, false);
  const std::vector<int> targets{1, 5};
  std::vector<Tensor> leaves;
  for (const auto& nt : model.parameters()) leaves.push_back(nt.tensor);
  GradCheckOptions opts;
  opts.tolerance = 1e-4;
  auto r = grad_check([&] { return cross_entropy(model.forward(images).logits, targets); }, leaves, opts);
  CHECK_MESSAGE(r.passed, r.summary());
}
