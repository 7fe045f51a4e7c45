#include "fer/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fer/autograd.hpp"
#include "fer/errors.hpp"
#include "fer/log.hpp"
#include "fer/ops.hpp"
#include "fer/sam.hpp"
#include "json.hpp"

namespace fer {
namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void write_text(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::string out = std::string(kCurveHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + num(r.lr) + "," + num(r.train_loss) + "," + num(r.train_acc) + "," +
           (r.val_loss ? num(*r.val_loss) : "") + "," + (r.val_acc ? num(*r.val_acc) : "") + "," +
           num(r.wall_seconds) + "\n";
  }
  return out;
}

std::vector<std::string> class_names(int num_classes) {
  std::vector<std::string> out;
  for (int k = 0; k < num_classes; ++k) out.emplace_back(emotion_name(k));
  return out;
}

DatasetManifest prepare_dataset(const RunConfig& config) {
  if (config.data.empty()) throw ConfigError("no data sources configured (set data or pass --data)");
  const int k = config.model.num_classes;
  DatasetManifest all;
  all.num_classes = k;
  all.seed = config.seed;
  for (std::size_t i = 0; i < config.data.size(); ++i) {
    all.append(load_source(config.data[i], k, config.model.image_size,
                           CounterRng::derive(config.seed, "source:" + std::to_string(i))));
  }
  if (all.samples.empty()) throw DataError("data sources contain no samples");
  const CounterRng root(config.seed);
  CounterRng split_rng = root.child("split");
  const std::optional<std::size_t> per_class =
      config.test_per_class > 0 ? std::optional<std::size_t>(static_cast<std::size_t>(config.test_per_class))
                                : std::nullopt;
  auto out = split(all, {config.train_fraction, config.val_fraction, config.test_fraction}, split_rng, per_class);
  if (config.balance) {
    CounterRng balance_rng = root.child("balance");
    out = balance_classes(out, balance_rng);
  }
  return out;
}

EvalResult evaluate(const SwinModel& model, const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                    const EvalOptions& options) {
  if (indices.empty()) throw DataError("no samples to evaluate");
  const int model_k = model.config().num_classes;
  const int k = options.remap7 ? 7 : model_k;
  if (options.remap7 && model_k != 8) throw ConfigError("remap7 needs an 8-class model");
  if (manifest.num_classes != k) {
    throw ConfigError("class mode mismatch: data has " + std::to_string(manifest.num_classes) +
                      " classes, evaluation expects " + std::to_string(k));
  }
  autograd::NoGradGuard no_grad;
  const auto bs = static_cast<std::size_t>(std::max(1, options.batch_size));
  std::vector<int> preds;
  std::vector<int> truths;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += bs) {
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                         indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), start + bs)));
    const Batch batch = make_batch(manifest, chunk, model.config().image_size);
    Tensor logits = model.forward(batch.images).logits;
    if (options.remap7) logits = slice(logits, 1, 0, 7);
    loss_sum += cross_entropy(logits, batch.labels).item() * static_cast<double>(chunk.size());
    const auto data = logits.data();
    const auto kk = static_cast<std::size_t>(k);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      preds.push_back(static_cast<int>(argmax(data.subspan(b * kk, kk))));
    }
    truths.insert(truths.end(), batch.labels.begin(), batch.labels.end());
  }
  EvalResult r;
  r.confusion = confusion(preds, truths, k);
  r.report = metrics(r.confusion);
  r.mean_loss = loss_sum / static_cast<double>(indices.size());
  return r;
}

Prediction predict(const SwinModel& model, const Image& image) {
  const int s = model.config().image_size;
  Image rgb = to_rgb(image);
  if (rgb.height != s || rgb.width != s) rgb = resize_bilinear(rgb, s, s);
  autograd::NoGradGuard no_grad;
  const Tensor probs = softmax(model.forward(normalize(rgb)).logits, 0);
  Prediction p;
  p.probabilities.assign(probs.data().begin(), probs.data().end());
  p.label = static_cast<int>(argmax(p.probabilities));
  return p;
}

TrainResult train(const RunConfig& config) {
  config.validate();
  PrecisionScope precision(config.precision);
  const DatasetManifest data = prepare_dataset(config);
  const auto train_idx = data.indices(Split::train);
  const auto val_idx = data.indices(Split::val);
  if (train_idx.empty()) throw DataError("training split is empty");

  const fs::path out_dir(config.out_dir);
  fs::create_directories(out_dir);
  write_text(out_dir / "config.cfg", config.to_text());
  write_text(out_dir / "manifest.csv", data.export_text());

  SwinModel model(config.model, CounterRng::derive(config.seed, "init"));
  const auto params = model.parameters();
  OptimizerState opt;
  opt.base_lr = config.base_lr;
  opt.momentum = config.momentum;
  opt.rho = config.rho;
  opt.sam_enabled = config.sam;
  opt.validate();

  const CounterRng root(config.seed);
  const CounterRng batch_root = root.child("batch");
  const CounterRng dropout_root = root.child("dropout");
  const auto bs = static_cast<std::size_t>(config.batch_size);

  TrainResult result;
  result.last_checkpoint = out_dir / "last.ckpt";
  result.best_checkpoint = out_dir / "best.ckpt";
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    opt.epoch = epoch;
    CounterRng epoch_rng = batch_root.child("epoch:" + std::to_string(epoch));
    const auto batches = batch_iter(train_idx, bs, epoch_rng, false);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch batch = make_batch(data, batches[b], config.model.image_size);
      const CounterRng mask_rng = dropout_root.child(std::to_string(epoch) + ":" + std::to_string(b));
      std::vector<int> preds;
      auto loss_fn = [&] {
        CounterRng local = mask_rng;  // both SAM passes see the same dropout masks
        ForwardOptions fo;
        fo.training = true;
        fo.drop_rate = config.model.drop_rate;
        fo.dropout_rng = &local;
        const Tensor logits = model.forward(batch.images, fo).logits;
        if (preds.empty()) preds = argmax_rows(logits);
        return cross_entropy(logits, batch.labels);
      };
      const StepResult step = sam_step(params, loss_fn, opt);
      if (!std::isfinite(step.loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b),
                             epoch, static_cast<int>(b));
      }
      loss_sum += step.loss * static_cast<double>(batch.labels.size());
      for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == batch.labels[i];
      seen += batch.labels.size();
    }

    CurveRow row;
    row.epoch = epoch;
    row.lr = opt.lr();
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (!val_idx.empty()) {
      const auto ev = evaluate(model, data, val_idx, {config.batch_size, false});
      row.val_loss = ev.mean_loss;
      row.val_acc = ev.report.accuracy;
    }
    const double score = row.val_acc ? *row.val_acc : row.train_acc;
    if (result.best_epoch < 0 || score > result.best_score) {
      result.best_epoch = epoch;
      result.best_score = score;
      save_checkpoint(result.best_checkpoint, make_checkpoint(config, model, epoch, score));
    }
    save_checkpoint(result.last_checkpoint, make_checkpoint(config, model, epoch, result.best_score, &opt));
    if (config.log_wall_time) {
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    result.curve.push_back(row);
    write_text(out_dir / "curve.csv", curve_csv(result.curve));

    char line[160];
    std::snprintf(line, sizeof line, "epoch %d lr %.3g train_loss %.4f train_acc %.4f", epoch, row.lr,
                  row.train_loss, row.train_acc);
    std::string msg = line;
    if (row.val_acc) {
      std::snprintf(line, sizeof line, " val_loss %.4f val_acc %.4f", *row.val_loss, *row.val_acc);
      msg += line;
    }
    log_info(msg);

    if (config.stop_at_train_acc > 0 && row.train_acc >= config.stop_at_train_acc) {
      result.stopped_early = true;
      log_info("train accuracy reached " + num(config.stop_at_train_acc) + "; stopping");
      break;
    }
  }
  return result;
}

DataStats data_stats(const RunConfig& config) {
  if (config.data.empty()) throw ConfigError("no data sources given (pass --data)");
  RunConfig unbalanced = config;
  unbalanced.balance = false;
  const DatasetManifest split_only = prepare_dataset(unbalanced);
  DataStats s;
  s.num_classes = config.model.num_classes;
  s.before = split_only.class_counts();
  s.train = split_only.class_counts(Split::train);
  s.val = split_only.class_counts(Split::val);
  s.test = split_only.class_counts(Split::test);
  if (config.balance) {
    CounterRng balance_rng = CounterRng(config.seed).child("balance");
    s.train_balanced = balance_classes(split_only, balance_rng).class_counts(Split::train);
  } else {
    s.train_balanced = s.train;
  }
  return s;
}

std::string format_data_stats(const DataStats& s, ReportFormat format) {
  const auto names = class_names(s.num_classes);
  const auto k = static_cast<std::size_t>(s.num_classes);
  auto total = [](const std::vector<std::size_t>& v) {
    std::size_t t = 0;
    for (auto x : v) t += x;
    return t;
  };
  std::ostringstream out;
  switch (format) {
    case ReportFormat::csv:
      out << "class,before,train,val,test,train_balanced\n";
      for (std::size_t c = 0; c < k; ++c) {
        out << names[c] << ',' << s.before[c] << ',' << s.train[c] << ',' << s.val[c] << ',' << s.test[c] << ','
            << s.train_balanced[c] << '\n';
      }
      out << "total," << total(s.before) << ',' << total(s.train) << ',' << total(s.val) << ','
          << total(s.test) << ',' << total(s.train_balanced) << '\n';
      break;
    case ReportFormat::json: {
      nlohmann::ordered_json j = nlohmann::ordered_json::array();
      for (std::size_t c = 0; c < k; ++c) {
        j.push_back({{"class", names[c]},
                     {"before", s.before[c]},
                     {"train", s.train[c]},
                     {"val", s.val[c]},
                     {"test", s.test[c]},
                     {"train_balanced", s.train_balanced[c]}});
      }
      out << j.dump(2) << '\n';
      break;
    }
    case ReportFormat::table: {
      char line[128];
      std::snprintf(line, sizeof line, "%-10s %9s %9s %9s %9s %15s\n", "class", "before", "train", "val", "test",
                    "train_balanced");
      out << line;
      for (std::size_t c = 0; c <= k; ++c) {
        const bool sum = c == k;
        std::snprintf(line, sizeof line, "%-10s %9zu %9zu %9zu %9zu %15zu\n", sum ? "total" : names[c].c_str(),
                      sum ? total(s.before) : s.before[c], sum ? total(s.train) : s.train[c],
                      sum ? total(s.val) : s.val[c], sum ? total(s.test) : s.test[c],
                      sum ? total(s.train_balanced) : s.train_balanced[c]);
        out << line;
      }
      break;
    }
  }
  return out.str();
}

}  // namespace fer
