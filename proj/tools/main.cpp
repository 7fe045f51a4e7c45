#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fer/checkpoint.hpp"
#include "fer/config.hpp"
#include "fer/errors.hpp"
#include "fer/image.hpp"
#include "fer/train.hpp"
#include "json.hpp"

namespace {

using namespace fer;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3, kIntegrity = 4 };

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::string> data;
  std::string ckpt;
  std::optional<int> classes;
  std::optional<std::uint64_t> seed;
  std::optional<int> precision;
  std::string format = "table";
  std::string split;
  std::string image;
};

void add_run_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "Override a config key, key=value (repeatable)");
  cmd->add_option("--data", o.data, "Data source: directory, FER CSV, synthetic:N or tiles:N (repeatable)");
  cmd->add_option("--classes", o.classes, "Class mode")->check(CLI::IsMember({7, 8}));
  cmd->add_option("--seed", o.seed, "Seed for every stochastic stage");
  cmd->add_option("--precision", o.precision, "Numeric mode")->check(CLI::IsMember({32, 64}));
}

void apply_flags(RunConfig& c, const Options& o) {
  apply_overrides(c, o.overrides);
  if (!o.data.empty()) c.data = o.data;
  if (o.classes) c.model.num_classes = *o.classes;
  if (o.seed) c.seed = *o.seed;
  if (o.precision) c.precision = *o.precision == 32 ? Precision::f32 : Precision::f64;
}

RunConfig run_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  apply_flags(c, o);
  c.validate();
  return c;
}

int cmd_train(const Options& o) {
  const RunConfig config = run_config(o);
  const TrainResult r = train(config);
  std::printf("epochs run: %zu%s\n", r.curve.size(), r.stopped_early ? " (stopped early)" : "");
  std::printf("best epoch: %d (%s %.4f)\n", r.best_epoch,
              r.curve.front().val_acc ? "val_acc" : "train_acc", r.best_score);
  std::printf("checkpoints: %s %s\n", r.best_checkpoint.string().c_str(), r.last_checkpoint.string().c_str());
  return kOk;
}

std::vector<std::size_t> select(const DatasetManifest& m, const std::string& split) {
  if (split == "train") return m.indices(Split::train);
  if (split == "val") return m.indices(Split::val);
  if (split == "test") return m.indices(Split::test);
  std::vector<std::size_t> all(m.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

int cmd_eval(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.ckpt);
  RunConfig config = ck.config;
  for (const auto& kv : o.overrides) {
    const auto key = kv.substr(0, kv.find('='));
    RunConfig probe = config;
    apply_overrides(probe, {kv});
    if (is_model_key(CLI::detail::trim_copy(key)) && !(probe.model == config.model)) {
      throw ConfigError("'" + kv + "' conflicts with the checkpoint architecture");
    }
  }
  Options flags = o;
  flags.classes.reset();
  apply_flags(config, flags);
  config.validate();

  const int model_k = ck.config.model.num_classes;
  const int data_k = config.eval_remap7 ? 7 : model_k;
  if (o.classes && *o.classes != data_k) {
    throw ConfigError("class mode mismatch: checkpoint has " + std::to_string(model_k) + " classes, --classes " +
                      std::to_string(*o.classes) + (model_k == 8 ? " (set eval_remap7=true to score 7-class data)" : ""));
  }

  PrecisionScope precision(config.precision);
  const SwinModel model = model_from_checkpoint(ck);
  RunConfig data_cfg = config;
  data_cfg.model.num_classes = data_k;
  data_cfg.balance = false;
  const std::string split = !o.split.empty() ? o.split : o.data.empty() ? "test" : "all";
  if (!o.data.empty() && split == "all") {
    data_cfg.train_fraction = 1.0;
    data_cfg.val_fraction = 0.0;
    data_cfg.test_fraction = 0.0;
    data_cfg.test_per_class = 0;
  }
  const DatasetManifest data = prepare_dataset(data_cfg);
  const auto indices = select(data, split);
  if (indices.empty()) throw DataError("the " + split + " split is empty");

  const EvalResult r = evaluate(model, data, indices, {config.batch_size, config.eval_remap7});
  std::cout << report_emit(r.report, parse_report_format(o.format), class_names(data_k));
  return kOk;
}

int cmd_predict(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const auto format = parse_report_format(o.format);
  PrecisionScope precision(o.precision ? (*o.precision == 32 ? Precision::f32 : Precision::f64) : ck.config.precision);
  const SwinModel model = model_from_checkpoint(ck);
  const Prediction p = predict(model, read_image(o.image));
  const auto names = class_names(ck.config.model.num_classes);
  switch (format) {
    case ReportFormat::table:
      std::printf("%s\n", names[static_cast<std::size_t>(p.label)].c_str());
      for (std::size_t k = 0; k < names.size(); ++k) std::printf("  %-9s %.9f\n", names[k].c_str(), p.probabilities[k]);
      break;
    case ReportFormat::csv:
      std::printf("class,probability\n");
      for (std::size_t k = 0; k < names.size(); ++k) std::printf("%s,%.17g\n", names[k].c_str(), p.probabilities[k]);
      break;
    case ReportFormat::json: {
      nlohmann::ordered_json j;
      j["class"] = names[static_cast<std::size_t>(p.label)];
      for (std::size_t k = 0; k < names.size(); ++k) j["probabilities"][names[k]] = p.probabilities[k];
      std::cout << j.dump(2) << '\n';
      break;
    }
  }
  return kOk;
}

int cmd_data_stats(const Options& o) {
  const RunConfig config = run_config(o);
  const auto format = parse_report_format(o.format);
  std::cout << format_data_stats(data_stats(config), format);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Facial expression recognition with a windowed-attention transformer"};
  app.require_subcommand(1);
  Options o;

  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints and a training curve");
  add_run_options(train_cmd, o);

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint (default: the test split of its run)");
  add_run_options(eval_cmd, o);
  eval_cmd->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--split", o.split, "Samples to score")->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval_cmd->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"table", "csv", "json"}));

  auto* predict_cmd = app.add_subcommand("predict", "Classify one image");
  predict_cmd->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  predict_cmd->add_option("image", o.image, "Image file (png, jpeg or bmp)")->required();
  predict_cmd->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"table", "csv", "json"}));
  predict_cmd->add_option("--precision", o.precision, "Numeric mode")->check(CLI::IsMember({32, 64}));

  auto* stats_cmd = app.add_subcommand("data-stats", "Class counts before and after balancing, per split");
  add_run_options(stats_cmd, o);
  stats_cmd->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"table", "csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*predict_cmd) return cmd_predict(o);
    return cmd_data_stats(o);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const IntegrityError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIntegrity;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const LabelError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
