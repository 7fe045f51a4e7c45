#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fer/rng.hpp"
#include "fer/se_gate.hpp"
#include "fer/tensor.hpp"

namespace fer {

inline constexpr int kNumStages = 4;

/// Architecture hyperparameters of the hierarchical window-attention model.
struct SwinConfig {
  int image_size = 64;
  int patch_size = 4;
  int in_channels = 3;
  int embed_dim = 24;
  std::array<int, kNumStages> depths{1, 1, 2, 1};
  std::array<int, kNumStages> num_heads{2, 4, 6, 8};
  int window_size = 4;
  int mlp_ratio = 4;
  int num_classes = 7;
  int se_reduction = 4;
  bool use_se = true;
  double drop_rate = 0.0;

  /// Throws ConfigError when any stage would be non-integral.
  void validate() const;

  int grid(int stage) const { return image_size / patch_size >> stage; }
  int dim(int stage) const { return embed_dim << stage; }
  /// Window side used in a stage: min(window_size, grid side).
  int window(int stage) const;
  /// floor(window / 2), or 0 when the window already covers the stage grid.
  int shift(int stage) const;
  /// Blocks alternate regular / shifted within a stage, starting regular.
  int block_shift(int stage, int block) const;
  int final_dim() const { return dim(kNumStages - 1); }

  bool operator==(const SwinConfig&) const = default;
};

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], may be undefined
};

struct NormParams {
  Tensor gain;
  Tensor bias;
};

struct AttentionParams {
  LinearParams qkv;       // D -> 3D
  LinearParams proj;      // D -> D
  Tensor rel_bias_table;  // [(2w - 1)^2, heads]
};

struct BlockParams {
  NormParams norm1;
  AttentionParams attn;
  NormParams norm2;
  LinearParams fc1;  // D -> mlp_ratio * D
  LinearParams fc2;  // mlp_ratio * D -> D
};

struct MergeParams {
  NormParams norm;   // over 4D
  Tensor reduction;  // [4D, 2D], no bias
};

struct StageParams {
  std::vector<BlockParams> blocks;
  std::optional<MergeParams> merge;  // absent after the last stage
};

struct SwinParameters {
  LinearParams patch_embed;  // patch_size^2 * in_channels -> C
  std::array<StageParams, kNumStages> stages;
  NormParams norm;
  std::optional<SeParams> se;
  LinearParams head;  // final_dim -> num_classes

  /// Every parameter leaf in a fixed order with dotted names.
  std::vector<NamedTensor> named() const;
};

/// Projections truncated-normal (sigma 0.02), biases and relative position
/// tables zero, norm gains one.
SwinParameters init_swin_parameters(const SwinConfig& config, CounterRng& rng);

struct ForwardOptions {
  bool training = false;
  CounterRng* dropout_rng = nullptr;  // required when training with drop_rate > 0
  double drop_rate = 0.0;
};

/// Non-overlapping patches of images[B, H, W, C] flattened row-major within
/// the patch, channel fastest, then projected. Returns [B, H/p, W/p, D]; a
/// single [H, W, C] image gives [H/p * W/p, D].
Tensor patch_embed(const Tensor& images, const LinearParams& params, int patch_size);

/// x[B, Hg, Wg, D] (or [B, Hg * Wg, D], or [Hg * Wg, D]) -> [B * nW, w * w, D],
/// windows in row-major order of their top-left corner.
Tensor window_partition(const Tensor& x, std::size_t grid_h, std::size_t grid_w, std::size_t window);

/// Inverse of window_partition; returns [B, Hg, Wg, D].
Tensor window_reverse(const Tensor& windows, std::size_t grid_h, std::size_t grid_w, std::size_t window);

/// Additive attention mask [nW, w*w, w*w] for a grid cyclically shifted by
/// -shift: 0 between tokens of the same pre-shift region, -1e9 otherwise.
Tensor build_shift_mask(std::size_t grid_h, std::size_t grid_w, std::size_t window, std::size_t shift);

inline constexpr double kMaskedLogit = -1e9;

/// Index into the ((2w - 1)^2)-row bias table for every (query, key) pair
/// of a w x w window, row-major over the w^2 x w^2 pairs.
std::vector<std::size_t> relative_position_index(std::size_t window);

/// Multi-head attention inside each window: softmax(QK^T / sqrt(d) + B + M) V
/// per head, heads concatenated and projected. x is [B * nW, N, D]; mask is
/// [nW, N, N] or undefined. When probs is non-null it receives the attention
/// probabilities [B * nW, heads, N, N].
Tensor window_attention(const Tensor& x, const AttentionParams& params, const Tensor& mask, std::size_t heads,
                        std::size_t window, const ForwardOptions& options = {}, Tensor* probs = nullptr);

struct BlockGeometry {
  std::size_t window = 0;
  std::size_t shift = 0;  // 0 for the regular variant
  std::size_t heads = 1;
  Tensor mask;  // required when shift > 0; applied whenever defined
};

/// (S)W-MSA over a token grid x[B, Hg, Wg, D]: roll by -shift, partition,
/// attend within windows, reverse, roll back.
Tensor windowed_self_attention(const Tensor& x, const AttentionParams& params, const BlockGeometry& geometry,
                               const ForwardOptions& options = {});

/// x1 = x + (S)W-MSA(LN(x)); out = x1 + MLP(LN(x1)). x is [B, Hg, Wg, D].
Tensor swin_block(const Tensor& x, const BlockParams& params, const BlockGeometry& geometry,
                  const ForwardOptions& options = {});

/// Concatenates each 2x2 neighbourhood in the order (0,0), (1,0), (0,1), (1,1)
/// as (row, col) offsets, normalises and reduces 4D -> 2D.
/// [B, Hg, Wg, D] -> [B, Hg/2, Wg/2, 2D].
Tensor patch_merge(const Tensor& x, const MergeParams& params);

struct StageTrace {
  std::size_t grid = 0;
  std::size_t dim = 0;
  std::size_t tokens = 0;
};

struct ForwardResult {
  Tensor logits;  // [B, K], or [K] for a single image
  Tensor pooled;  // [B, final_dim], or [final_dim]
  std::array<StageTrace, kNumStages> stages;
};

class SwinModel {
 public:
  SwinModel(SwinConfig config, std::uint64_t seed);
  SwinModel(SwinConfig config, SwinParameters params);

  const SwinConfig& config() const { return config_; }
  const SwinParameters& params() const { return params_; }
  SwinParameters& params() { return params_; }
  std::vector<NamedTensor> parameters() const { return params_.named(); }

  /// images: [B, H, W, in_channels] or a single [H, W, in_channels].
  ForwardResult forward(const Tensor& images, const ForwardOptions& options = {}) const;

 private:
  void build_masks();

  SwinConfig config_;
  SwinParameters params_;
  std::array<Tensor, kNumStages> masks_;
};

}  // namespace fer
