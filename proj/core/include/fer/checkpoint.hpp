#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fer/config.hpp"
#include "fer/sam.hpp"
#include "fer/swin.hpp"
#include "fer/tensor.hpp"

namespace fer {

inline constexpr char kCheckpointMagic[8] = {'F', 'E', 'R', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Precision precision = Precision::f32;  // mode the weights were produced in
  int epoch = 0;
  double best_val_acc = 0.0;
  std::vector<NamedTensor> tensors;  // values stored as binary32
  std::optional<OptimizerState> optimizer;
};

/// Layout (little-endian): magic[8], u32 version, u8 precision bits,
/// u32 + config text, i32 epoch, f64 best_val_acc, u32 tensor count, then per
/// tensor u16 + name, u8 rank, u64 dims, f32 values; u8 optimizer flag and,
/// if set, f64 base_lr, momentum, rho, i32 epoch, u8 sam, u32 buffer count,
/// per buffer u64 length + f64 values; finally u32 CRC-32 of all prior bytes.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);

/// Throws IntegrityError with the byte offset of the first problem.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Written to a temporary name and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const RunConfig& config, const SwinModel& model, int epoch, double best_val_acc,
                           const OptimizerState* optimizer = nullptr);

/// Rebuilds the model from the embedded config. Throws IntegrityError when
/// tensor names or shapes do not match that architecture.
SwinModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace fer
