#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fer/checkpoint.hpp"
#include "fer/config.hpp"
#include "fer/data.hpp"
#include "fer/metrics.hpp"
#include "fer/swin.hpp"

namespace fer {

struct CurveRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_loss;  // empty when the run has no val split
  std::optional<double> val_acc;
  double wall_seconds = 0.0;
};

inline constexpr const char* kCurveHeader = "epoch,lr,train_loss,train_acc,val_loss,val_acc,wall_seconds";

std::string curve_csv(const std::vector<CurveRow>& rows);

/// Loads every configured source, splits the originals and, when enabled,
/// balances the train split. Sub-seeds are derived from config.seed.
DatasetManifest prepare_dataset(const RunConfig& config);

struct TrainResult {
  std::vector<CurveRow> curve;
  int best_epoch = -1;
  double best_score = 0.0;  // val accuracy, or train accuracy without a val split
  bool stopped_early = false;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
};

/// Runs the epoch loop and writes into config.out_dir: last.ckpt, best.ckpt,
/// curve.csv, manifest.csv and config.cfg. Throws NumericalError on a
/// non-finite loss.
TrainResult train(const RunConfig& config);

struct EvalOptions {
  int batch_size = 32;
  /// Scores an 8-class model on 7-class data by ignoring the contempt logit.
  bool remap7 = false;
};

struct EvalResult {
  ConfusionMatrix confusion;
  MetricsReport report;
  double mean_loss = 0.0;
};

/// Forward-only pass over the given samples, no augmentation.
EvalResult evaluate(const SwinModel& model, const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                    const EvalOptions& options = {});

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;
};

/// Converts to RGB, resizes to the model input and normalizes.
Prediction predict(const SwinModel& model, const Image& image);

struct DataStats {
  int num_classes = 7;
  std::vector<std::size_t> before;  // all originals
  std::vector<std::size_t> train, val, test;
  std::vector<std::size_t> train_balanced;  // equal to train when balancing is off
};

DataStats data_stats(const RunConfig& config);
std::string format_data_stats(const DataStats& stats, ReportFormat format);

std::vector<std::string> class_names(int num_classes);

}  // namespace fer
