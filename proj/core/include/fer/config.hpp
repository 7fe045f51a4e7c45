#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fer/swin.hpp"
#include "fer/tensor.hpp"

namespace fer {

/// Everything a run depends on. Text form is flat `key = value` lines with
/// `#` comments and comma-separated lists; to_text() lists every key.
struct RunConfig {
  SwinConfig model;

  // optimizer
  double base_lr = 1e-3;
  double momentum = 0.9;
  double rho = 0.05;
  bool sam = true;
  int epochs = 25;
  int batch_size = 16;

  // data
  std::vector<std::string> data;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  int test_per_class = 0;  // 0: use test_fraction
  bool balance = true;
  std::uint64_t seed = 0;

  // run
  Precision precision = Precision::f32;
  std::string out_dir = "runs/default";
  bool log_wall_time = false;
  double stop_at_train_acc = 0.0;  // 0: always run every epoch
  bool eval_remap7 = false;

  /// Throws ConfigError on any inconsistent value.
  void validate() const;

  /// Sets one key from its text value. Throws ConfigError for unknown keys
  /// or unparsable values.
  void set(std::string_view key, std::string_view value);

  std::string to_text() const;
  bool operator==(const RunConfig&) const = default;
};

/// Parses on top of `base` (defaults when omitted). Errors carry `origin:line`.
RunConfig parse_config(std::string_view text, RunConfig base = {}, std::string_view origin = "config");
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Applies "key=value" overrides in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

/// Keys that change the architecture.
bool is_model_key(std::string_view key);

}  // namespace fer
