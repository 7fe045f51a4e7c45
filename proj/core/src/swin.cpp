#include "fer/swin.hpp"

#include <algorithm>
#include <cmath>

#include "fer/errors.hpp"
#include "fer/ops.hpp"
#include "init.hpp"

namespace fer {

namespace {

std::string cfg_error(const std::string& what) { return "invalid model config: " + what; }

LinearParams make_linear(std::size_t in, std::size_t out, bool bias, CounterRng& rng) {
  LinearParams p;
  p.weight = detail::trunc_normal({in, out}, rng);
  if (bias) p.bias = Tensor::zeros({out}, true);
  return p;
}

NormParams make_norm(std::size_t dim) {
  return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

void push_linear(std::vector<NamedTensor>& out, const std::string& prefix, const LinearParams& p) {
  out.push_back({prefix + ".weight", p.weight});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias});
}

void push_norm(std::vector<NamedTensor>& out, const std::string& prefix, const NormParams& p) {
  out.push_back({prefix + ".gain", p.gain});
  out.push_back({prefix + ".bias", p.bias});
}

Tensor apply_dropout(const Tensor& x, const ForwardOptions& options) {
  if (!options.training || options.drop_rate <= 0.0) return x;
  if (options.dropout_rng == nullptr) throw ContractError("dropout during training needs an rng");
  return dropout(x, options.drop_rate, *options.dropout_rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// SwinConfig

int SwinConfig::window(int stage) const { return std::min(window_size, grid(stage)); }

int SwinConfig::shift(int stage) const {
  const int w = window(stage);
  return w < grid(stage) ? w / 2 : 0;
}

int SwinConfig::block_shift(int stage, int block) const { return block % 2 == 1 ? shift(stage) : 0; }

void SwinConfig::validate() const {
  if (in_channels != 3) throw ConfigError(cfg_error("in_channels must be 3"));
  if (patch_size < 1) throw ConfigError(cfg_error("patch_size must be positive"));
  if (image_size < 1 || image_size % (patch_size * 8) != 0) {
    throw ConfigError(cfg_error("image_size " + std::to_string(image_size) + " is not divisible by patch_size * 8 = " +
                                std::to_string(patch_size * 8)));
  }
  if (embed_dim < 1) throw ConfigError(cfg_error("embed_dim must be positive"));
  if (window_size < 1) throw ConfigError(cfg_error("window_size must be positive"));
  if (mlp_ratio < 1) throw ConfigError(cfg_error("mlp_ratio must be positive"));
  if (num_classes != 7 && num_classes != 8) throw ConfigError(cfg_error("num_classes must be 7 or 8"));
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ConfigError(cfg_error("drop_rate must lie in [0, 1)"));
  for (int s = 0; s < kNumStages; ++s) {
    const auto tag = "stage " + std::to_string(s + 1);
    if (depths[s] < 1) throw ConfigError(cfg_error(tag + " depth must be >= 1"));
    if (num_heads[s] < 1 || dim(s) % num_heads[s] != 0) {
      throw ConfigError(cfg_error(tag + " dim " + std::to_string(dim(s)) + " is not divisible by " +
                                  std::to_string(num_heads[s]) + " heads"));
    }
    if (grid(s) % window(s) != 0) {
      throw ConfigError(cfg_error(tag + " grid " + std::to_string(grid(s)) + " is not divisible by window " +
                                  std::to_string(window(s))));
    }
  }
  if (use_se && (se_reduction < 1 || final_dim() % se_reduction != 0)) {
    throw ConfigError(cfg_error("se_reduction must divide final dim " + std::to_string(final_dim())));
  }
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<NamedTensor> SwinParameters::named() const {
  std::vector<NamedTensor> out;
  push_linear(out, "patch_embed", patch_embed);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto sp = "stages." + std::to_string(s);
    for (std::size_t b = 0; b < stages[s].blocks.size(); ++b) {
      const auto& blk = stages[s].blocks[b];
      const auto bp = sp + ".blocks." + std::to_string(b);
      push_norm(out, bp + ".norm1", blk.norm1);
      push_linear(out, bp + ".attn.qkv", blk.attn.qkv);
      push_linear(out, bp + ".attn.proj", blk.attn.proj);
      out.push_back({bp + ".attn.rel_bias_table", blk.attn.rel_bias_table});
      push_norm(out, bp + ".norm2", blk.norm2);
      push_linear(out, bp + ".mlp.fc1", blk.fc1);
      push_linear(out, bp + ".mlp.fc2", blk.fc2);
    }
    if (stages[s].merge) {
      push_norm(out, sp + ".merge.norm", stages[s].merge->norm);
      out.push_back({sp + ".merge.reduction", stages[s].merge->reduction});
    }
  }
  push_norm(out, "norm", norm);
  if (se) {
    out.push_back({"se.fc1.weight", se->fc1_weight});
    out.push_back({"se.fc1.bias", se->fc1_bias});
    out.push_back({"se.fc2.weight", se->fc2_weight});
    out.push_back({"se.fc2.bias", se->fc2_bias});
  }
  push_linear(out, "head", head);
  return out;
}

SwinParameters init_swin_parameters(const SwinConfig& config, CounterRng& rng) {
  config.validate();
  SwinParameters p;
  const auto patch_len = static_cast<std::size_t>(config.patch_size * config.patch_size * config.in_channels);
  p.patch_embed = make_linear(patch_len, static_cast<std::size_t>(config.embed_dim), true, rng);
  for (int s = 0; s < kNumStages; ++s) {
    const auto dim = static_cast<std::size_t>(config.dim(s));
    const auto w = static_cast<std::size_t>(config.window(s));
    const auto heads = static_cast<std::size_t>(config.num_heads[s]);
    const auto hidden = dim * static_cast<std::size_t>(config.mlp_ratio);
    auto& stage = p.stages[static_cast<std::size_t>(s)];
    for (int b = 0; b < config.depths[s]; ++b) {
      BlockParams blk;
      blk.norm1 = make_norm(dim);
      blk.attn.qkv = make_linear(dim, 3 * dim, true, rng);
      blk.attn.proj = make_linear(dim, dim, true, rng);
      blk.attn.rel_bias_table = Tensor::zeros({(2 * w - 1) * (2 * w - 1), heads}, true);
      blk.norm2 = make_norm(dim);
      blk.fc1 = make_linear(dim, hidden, true, rng);
      blk.fc2 = make_linear(hidden, dim, true, rng);
      stage.blocks.push_back(std::move(blk));
    }
    if (s + 1 < kNumStages) {
      MergeParams m;
      m.norm = make_norm(4 * dim);
      m.reduction = detail::trunc_normal({4 * dim, 2 * dim}, rng);
      stage.merge = std::move(m);
    }
  }
  const auto final_dim = static_cast<std::size_t>(config.final_dim());
  p.norm = make_norm(final_dim);
  if (config.use_se) p.se = init_se_params(final_dim, static_cast<std::size_t>(config.se_reduction), rng);
  p.head = make_linear(final_dim, static_cast<std::size_t>(config.num_classes), true, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Building blocks

Tensor patch_embed(const Tensor& images, const LinearParams& params, int patch_size) {
  const bool single = images.dim() == 3;
  if (!single && images.dim() != 4) {
    throw DimensionError("patch_embed: expected [B, H, W, C] or [H, W, C], got " + shape_str(images.shape()));
  }
  const Tensor x = single ? reshape(images, {1, images.size(0), images.size(1), images.size(2)}) : images;
  const std::size_t b = x.size(0);
  const std::size_t h = x.size(1);
  const std::size_t w = x.size(2);
  const std::size_t c = x.size(3);
  const auto p = static_cast<std::size_t>(patch_size);
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ConfigError("patch_embed: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t gh = h / p;
  const std::size_t gw = w / p;
  auto patches = permute(reshape(x, {b, gh, p, gw, p, c}), {0, 1, 3, 2, 4, 5});
  auto tokens = linear(reshape(patches, {b, gh, gw, p * p * c}), params.weight, params.bias);
  if (single) return reshape(tokens, {gh * gw, tokens.size(-1)});
  return tokens;
}

Tensor window_partition(const Tensor& x, std::size_t grid_h, std::size_t grid_w, std::size_t window) {
  if (window == 0 || grid_h % window != 0 || grid_w % window != 0) {
    throw ConfigError("window_partition: window " + std::to_string(window) + " does not divide grid " +
                      std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  const std::size_t d = x.size(-1);
  if (x.numel() % (grid_h * grid_w * d) != 0) {
    throw DimensionError("window_partition: " + shape_str(x.shape()) + " does not hold a " + std::to_string(grid_h) +
                         "x" + std::to_string(grid_w) + " grid");
  }
  const std::size_t b = x.numel() / (grid_h * grid_w * d);
  const std::size_t nh = grid_h / window;
  const std::size_t nw = grid_w / window;
  auto t = reshape(x, {b, nh, window, nw, window, d});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {b * nh * nw, window * window, d});
}

Tensor window_reverse(const Tensor& windows, std::size_t grid_h, std::size_t grid_w, std::size_t window) {
  if (window == 0 || grid_h % window != 0 || grid_w % window != 0) {
    throw ConfigError("window_reverse: window " + std::to_string(window) + " does not divide grid " +
                      std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  const std::size_t nh = grid_h / window;
  const std::size_t nw = grid_w / window;
  const std::size_t d = windows.size(-1);
  const std::size_t b = windows.numel() / (grid_h * grid_w * d);
  auto t = reshape(windows, {b, nh, nw, window, window, d});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {b, grid_h, grid_w, d});
}

Tensor build_shift_mask(std::size_t grid_h, std::size_t grid_w, std::size_t window, std::size_t shift) {
  if (window == 0 || grid_h % window != 0 || grid_w % window != 0) {
    throw ConfigError("build_shift_mask: window does not divide grid");
  }
  if (shift >= window) throw ConfigError("build_shift_mask: shift must be smaller than the window");
  const std::size_t nh = grid_h / window;
  const std::size_t nw = grid_w / window;
  const std::size_t n = window * window;
  std::vector<double> mask(nh * nw * n * n, 0.0);
  if (shift == 0) return Tensor::from_data({nh * nw, n, n}, std::move(mask));

  // Rows (and columns) of the shifted grid fall into three bands: untouched,
  // the tail of the last pre-shift window, and the wrapped-around head.
  auto band = [&](std::size_t i, std::size_t extent) -> std::size_t {
    if (i < extent - window) return 0;
    if (i < extent - shift) return 1;
    return 2;
  };
  std::vector<std::size_t> label(n);
  for (std::size_t wi = 0; wi < nh; ++wi) {
    for (std::size_t wj = 0; wj < nw; ++wj) {
      for (std::size_t t = 0; t < n; ++t) {
        label[t] = 3 * band(wi * window + t / window, grid_h) + band(wj * window + t % window, grid_w);
      }
      double* m = mask.data() + (wi * nw + wj) * n * n;
      for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t k = 0; k < n; ++k) m[q * n + k] = label[q] == label[k] ? 0.0 : kMaskedLogit;
      }
    }
  }
  return Tensor::from_data({nh * nw, n, n}, std::move(mask));
}

std::vector<std::size_t> relative_position_index(std::size_t window) {
  const std::size_t n = window * window;
  const std::size_t side = 2 * window - 1;
  std::vector<std::size_t> index(n * n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t dr = q / window + window - 1 - k / window;
      const std::size_t dc = q % window + window - 1 - k % window;
      index[q * n + k] = dr * side + dc;
    }
  }
  return index;
}

Tensor window_attention(const Tensor& x, const AttentionParams& params, const Tensor& mask, std::size_t heads,
                        std::size_t window, const ForwardOptions& options, Tensor* probs) {
  if (x.dim() != 3) throw DimensionError("window_attention: expected [B*nW, N, D], got " + shape_str(x.shape()));
  const std::size_t bw = x.size(0);
  const std::size_t n = x.size(1);
  const std::size_t d = x.size(2);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("window_attention: dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (n != window * window) throw DimensionError("window_attention: token count does not match window");
  const std::size_t hd = d / heads;

  auto qkv = linear(x, params.qkv.weight, params.qkv.bias);
  qkv = permute(reshape(qkv, {bw, n, 3, heads, hd}), {2, 0, 3, 1, 4});  // [3, Bw, h, N, hd]
  const Shape part{bw, heads, n, hd};
  auto q = scale(reshape(slice(qkv, 0, 0, 1), part), 1.0 / std::sqrt(static_cast<double>(hd)));
  auto k = reshape(slice(qkv, 0, 1, 2), part);
  auto v = reshape(slice(qkv, 0, 2, 3), part);

  auto logits = matmul(q, transpose(k, -2, -1));  // [Bw, h, N, N]
  const auto index = relative_position_index(window);
  auto bias = permute(reshape(gather_rows(params.rel_bias_table, index), {n, n, heads}), {2, 0, 1});
  logits = add(logits, bias);
  if (mask.defined()) {
    const std::size_t nw = mask.size(0);
    if (bw % nw != 0) throw DimensionError("window_attention: mask window count does not divide batch");
    logits = reshape(logits, {bw / nw, nw, heads, n, n});
    logits = add(logits, reshape(mask, {nw, 1, n, n}));
    logits = reshape(logits, {bw, heads, n, n});
  }
  auto attn = softmax(logits, -1);
  if (probs != nullptr) *probs = attn;
  auto out = matmul(attn, v);  // [Bw, h, N, hd]
  out = reshape(permute(out, {0, 2, 1, 3}), {bw, n, d});
  out = linear(out, params.proj.weight, params.proj.bias);
  return apply_dropout(out, options);
}

Tensor windowed_self_attention(const Tensor& x, const AttentionParams& params, const BlockGeometry& geometry,
                               const ForwardOptions& options) {
  if (x.dim() != 4) throw DimensionError("windowed_self_attention: expected [B, Hg, Wg, D], got " + shape_str(x.shape()));
  const std::size_t gh = x.size(1);
  const std::size_t gw = x.size(2);
  const std::size_t w = geometry.window;
  const int s = static_cast<int>(geometry.shift);
  if (s > 0 && !geometry.mask.defined()) throw ContractError("shifted window attention needs a mask");

  auto h = s > 0 ? cyclic_roll(x, {-s, -s}, {1, 2}) : x;
  auto windows = window_partition(h, gh, gw, w);
  auto attended = window_attention(windows, params, geometry.mask, geometry.heads, w, options);
  h = window_reverse(attended, gh, gw, w);
  return s > 0 ? cyclic_roll(h, {s, s}, {1, 2}) : h;
}

Tensor swin_block(const Tensor& x, const BlockParams& params, const BlockGeometry& geometry,
                  const ForwardOptions& options) {
  auto h = windowed_self_attention(layer_norm(x, params.norm1.gain, params.norm1.bias), params.attn, geometry, options);
  auto x1 = add(x, h);
  auto m = layer_norm(x1, params.norm2.gain, params.norm2.bias);
  m = apply_dropout(gelu(linear(m, params.fc1.weight, params.fc1.bias)), options);
  m = apply_dropout(linear(m, params.fc2.weight, params.fc2.bias), options);
  return add(x1, m);
}

Tensor patch_merge(const Tensor& x, const MergeParams& params) {
  if (x.dim() != 4) throw DimensionError("patch_merge: expected [B, Hg, Wg, D], got " + shape_str(x.shape()));
  const std::size_t b = x.size(0);
  const std::size_t gh = x.size(1);
  const std::size_t gw = x.size(2);
  const std::size_t d = x.size(3);
  if (gh % 2 != 0 || gw % 2 != 0) {
    throw ConfigError("patch_merge: grid " + std::to_string(gh) + "x" + std::to_string(gw) + " is not even");
  }
  // [B, Hg/2, r, Wg/2, c, D] -> [B, Hg/2, Wg/2, c, r, D] so the row offset varies fastest.
  auto t = permute(reshape(x, {b, gh / 2, 2, gw / 2, 2, d}), {0, 1, 3, 4, 2, 5});
  t = reshape(t, {b, gh / 2, gw / 2, 4 * d});
  t = layer_norm(t, params.norm.gain, params.norm.bias);
  return linear(t, params.reduction, Tensor());
}

// ---------------------------------------------------------------------------
// SwinModel

SwinModel::SwinModel(SwinConfig config, std::uint64_t seed) : config_(std::move(config)) {
  CounterRng rng(seed);
  params_ = init_swin_parameters(config_, rng);
  build_masks();
}

SwinModel::SwinModel(SwinConfig config, SwinParameters params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (config_.use_se != params_.se.has_value()) {
    throw ConfigError("model parameters disagree with use_se = " + std::string(config_.use_se ? "true" : "false"));
  }
  build_masks();
}

void SwinModel::build_masks() {
  for (int s = 0; s < kNumStages; ++s) {
    const auto g = static_cast<std::size_t>(config_.grid(s));
    const auto shift = static_cast<std::size_t>(config_.shift(s));
    if (shift > 0) masks_[static_cast<std::size_t>(s)] = build_shift_mask(g, g, static_cast<std::size_t>(config_.window(s)), shift);
  }
}

ForwardResult SwinModel::forward(const Tensor& images, const ForwardOptions& options) const {
  const bool single = images.dim() == 3;
  const Tensor batch = single ? reshape(images, {1, images.size(0), images.size(1), images.size(2)}) : images;
  if (batch.dim() != 4 || batch.size(1) != static_cast<std::size_t>(config_.image_size) ||
      batch.size(2) != static_cast<std::size_t>(config_.image_size) ||
      batch.size(3) != static_cast<std::size_t>(config_.in_channels)) {
    throw ConfigError("forward: image shape " + shape_str(images.shape()) + " does not match configured size " +
                      std::to_string(config_.image_size));
  }
  ForwardOptions opts = options;
  opts.drop_rate = options.training ? config_.drop_rate : 0.0;

  ForwardResult result;
  auto x = patch_embed(batch, params_.patch_embed, config_.patch_size);
  for (int s = 0; s < kNumStages; ++s) {
    const auto si = static_cast<std::size_t>(s);
    const auto& stage = params_.stages[si];
    BlockGeometry geo;
    geo.window = static_cast<std::size_t>(config_.window(s));
    geo.heads = static_cast<std::size_t>(config_.num_heads[si]);
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      geo.shift = static_cast<std::size_t>(config_.block_shift(s, static_cast<int>(b)));
      geo.mask = geo.shift > 0 ? masks_[si] : Tensor();
      x = swin_block(x, stage.blocks[b], geo, opts);
    }
    result.stages[si] = {x.size(1), x.size(3), x.size(1) * x.size(2)};
    if (stage.merge) x = patch_merge(x, *stage.merge);
  }
  x = layer_norm(x, params_.norm.gain, params_.norm.bias);
  const std::size_t b = x.size(0);
  const std::size_t tokens = x.size(1) * x.size(2);
  const std::size_t cf = x.size(3);
  auto pooled = mean(reshape(x, {b, tokens, cf}), 1);
  auto features = params_.se ? excite(pooled, *params_.se) : pooled;
  auto logits = linear(features, params_.head.weight, params_.head.bias);
  if (single) {
    result.logits = reshape(logits, {logits.size(1)});
    result.pooled = reshape(pooled, {cf});
  } else {
    result.logits = logits;
    result.pooled = pooled;
  }
  return result;
}

}  // namespace fer
