#include "fer/metrics.hpp"

#include <charconv>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "fer/errors.hpp"

namespace fer {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : k(num_classes), counts(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {
  if (num_classes < 0) throw ConfigError("negative class count");
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int p = 0; p < k; ++p) s += at(truth, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
  std::int64_t s = 0;
  for (int t = 0; t < k; ++t) s += at(t, pred);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k != k) throw DimensionError("confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths, int k) {
  if (preds.size() != truths.size()) {
    throw DimensionError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(truths.size()) + " truths");
  }
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i];
    const int t = truths[i];
    if (p < 0 || p >= k || t < 0 || t >= k) {
      throw LabelError("confusion: sample " + std::to_string(i) + " has (truth " + std::to_string(t) + ", pred " +
                       std::to_string(p) + ") outside [0, " + std::to_string(k) + ")");
    }
    ++cm.at(t, p);
  }
  return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.total = cm.total();
  if (r.total <= 0) throw ContractError("metrics of an empty confusion matrix");
  const auto n = static_cast<double>(r.total);
  std::int64_t trace = 0;
  for (int c = 0; c < cm.k; ++c) {
    ClassMetrics m;
    const std::int64_t tp = cm.at(c, c);
    const std::int64_t col = cm.col_sum(c);
    m.support = cm.row_sum(c);
    trace += tp;
    m.precision_undefined = col == 0;
    m.recall_undefined = m.support == 0;
    m.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    m.recall = m.support ? static_cast<double>(tp) / static_cast<double>(m.support) : 0.0;
    m.f1_undefined = m.precision + m.recall == 0.0;
    m.f1 = m.f1_undefined ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
    const double w = static_cast<double>(m.support) / n;
    r.weighted_precision += w * m.precision;
    r.weighted_f1 += w * m.f1;
    r.per_class.push_back(m);
  }
  r.accuracy = static_cast<double>(trace) / n;
  // sum_k (support_k / n) * (tp_k / support_k) telescopes to trace / n.
  r.weighted_recall = r.accuracy;
  return r;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "table") return ReportFormat::table;
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  throw ConfigError("unknown report format '" + name + "' (expected table, csv or json)");
}

namespace {

std::string exact(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string class_label(std::span<const std::string> names, std::size_t i) {
  return i < names.size() ? names[i] : std::to_string(i);
}

std::string flags(const ClassMetrics& m) {
  std::string f;
  auto add = [&](bool on, const char* what) {
    if (!on) return;
    if (!f.empty()) f += ';';
    f += what;
  };
  add(m.precision_undefined, "precision");
  add(m.recall_undefined, "recall");
  add(m.f1_undefined, "f1");
  return f;
}

}  // namespace

std::string report_emit(const MetricsReport& r, ReportFormat format, std::span<const std::string> names) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::table: {
      char line[160];
      std::snprintf(line, sizeof line, "%-10s %-20s %-17s %-12s\n", "Accuracy", "Weighted Precision", "Weighted Recall",
                    "Weighted F1");
      out << line;
      std::snprintf(line, sizeof line, "%-10s %-20s %-17s %-12s\n", fixed4(r.accuracy).c_str(),
                    fixed4(r.weighted_precision).c_str(), fixed4(r.weighted_recall).c_str(),
                    fixed4(r.weighted_f1).c_str());
      out << line << '\n';
      std::snprintf(line, sizeof line, "%-10s %9s %9s %9s %9s\n", "class", "precision", "recall", "f1", "support");
      out << line;
      bool any_undefined = false;
      for (std::size_t i = 0; i < r.per_class.size(); ++i) {
        const auto& m = r.per_class[i];
        const bool undef = !flags(m).empty();
        any_undefined = any_undefined || undef;
        std::snprintf(line, sizeof line, "%-10s %9s %9s %9s %9lld%s\n", class_label(names, i).c_str(),
                      fixed4(m.precision).c_str(), fixed4(m.recall).c_str(), fixed4(m.f1).c_str(),
                      static_cast<long long>(m.support), undef ? " *" : "");
        out << line;
      }
      if (any_undefined) out << "* zero denominator, reported as 0\n";
      break;
    }
    case ReportFormat::csv: {
      out << "accuracy,weighted_precision,weighted_recall,weighted_f1\n"
          << exact(r.accuracy) << ',' << exact(r.weighted_precision) << ',' << exact(r.weighted_recall) << ','
          << exact(r.weighted_f1) << "\n\n";
      out << "class,precision,recall,f1,support,undefined\n";
      for (std::size_t i = 0; i < r.per_class.size(); ++i) {
        const auto& m = r.per_class[i];
        out << class_label(names, i) << ',' << exact(m.precision) << ',' << exact(m.recall) << ',' << exact(m.f1)
            << ',' << m.support << ',' << flags(m) << '\n';
      }
      break;
    }
    case ReportFormat::json: {
      nlohmann::ordered_json j;
      j["accuracy"] = r.accuracy;
      j["weighted_precision"] = r.weighted_precision;
      j["weighted_recall"] = r.weighted_recall;
      j["weighted_f1"] = r.weighted_f1;
      j["total"] = r.total;
      j["per_class"] = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < r.per_class.size(); ++i) {
        const auto& m = r.per_class[i];
        j["per_class"].push_back({{"class", class_label(names, i)},
                                  {"precision", m.precision},
                                  {"recall", m.recall},
                                  {"f1", m.f1},
                                  {"support", m.support},
                                  {"precision_undefined", m.precision_undefined},
                                  {"recall_undefined", m.recall_undefined},
                                  {"f1_undefined", m.f1_undefined}});
      }
      out << j.dump(2) << '\n';
      break;
    }
  }
  return out.str();
}

}  // namespace fer
