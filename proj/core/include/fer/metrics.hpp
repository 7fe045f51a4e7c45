#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fer {

/// K x K counts; entry (t, p) counts samples of true class t predicted as p.
struct ConfusionMatrix {
  int k = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int num_classes = 0);
  std::int64_t at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth * k + pred)]; }
  std::int64_t& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth * k + pred)]; }
  std::int64_t total() const;
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int pred) const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

/// Throws DimensionError on length mismatch, LabelError on an index outside [0, k).
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths, int k);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  // Set when the value is reported as 0 because its denominator was zero.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct MetricsReport {
  double accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  std::int64_t total = 0;
  std::vector<ClassMetrics> per_class;
};

/// Throws ContractError on an empty matrix.
MetricsReport metrics(const ConfusionMatrix& cm);

enum class ReportFormat { table, csv, json };

/// Throws ConfigError for anything but table, csv or json.
ReportFormat parse_report_format(const std::string& name);

/// Headline columns in the order accuracy, weighted precision, weighted
/// recall, weighted F1, then the per-class breakdown. class_names may be
/// empty (indices are printed instead).
std::string report_emit(const MetricsReport& report, ReportFormat format,
                        std::span<const std::string> class_names = {});

}  // namespace fer
