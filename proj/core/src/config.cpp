#include "fer/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "fer/errors.hpp"
#include "fer/sam.hpp"

namespace fer {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key) + " (expected " +
                    std::string(expected) + ")");
}

template <typename T>
T parse_number(std::string_view key, std::string_view v, std::string_view expected) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, expected);
  return out;
}

int parse_int(std::string_view key, std::string_view v) { return parse_number<int>(key, v, "an integer"); }

double parse_double(std::string_view key, std::string_view v) {
  const double d = parse_number<double>(key, v, "a number");
  if (!std::isfinite(d)) bad_value(key, v, "a finite number");
  return d;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> parse_list(std::string_view v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.emplace_back(trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::array<int, kNumStages> parse_stage_ints(std::string_view key, std::string_view v) {
  const auto items = parse_list(v);
  if (items.size() != kNumStages) bad_value(key, v, "four comma-separated integers");
  std::array<int, kNumStages> out{};
  for (std::size_t i = 0; i < kNumStages; ++i) out[i] = parse_int(key, items[i]);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename Seq>
std::string join(const Seq& items) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += ", ";
    if constexpr (std::is_arithmetic_v<std::decay_t<decltype(item)>>) {
      out += std::to_string(item);
    } else {
      out += item;
    }
  }
  return out;
}

struct Key {
  std::string_view name;
  bool model;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"image_size", true, [](RunConfig& c, std::string_view v) { c.model.image_size = parse_int("image_size", v); },
       [](const RunConfig& c) { return std::to_string(c.model.image_size); }},
      {"patch_size", true, [](RunConfig& c, std::string_view v) { c.model.patch_size = parse_int("patch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.model.patch_size); }},
      {"in_channels", true, [](RunConfig& c, std::string_view v) { c.model.in_channels = parse_int("in_channels", v); },
       [](const RunConfig& c) { return std::to_string(c.model.in_channels); }},
      {"embed_dim", true, [](RunConfig& c, std::string_view v) { c.model.embed_dim = parse_int("embed_dim", v); },
       [](const RunConfig& c) { return std::to_string(c.model.embed_dim); }},
      {"depths", true, [](RunConfig& c, std::string_view v) { c.model.depths = parse_stage_ints("depths", v); },
       [](const RunConfig& c) { return join(c.model.depths); }},
      {"num_heads", true, [](RunConfig& c, std::string_view v) { c.model.num_heads = parse_stage_ints("num_heads", v); },
       [](const RunConfig& c) { return join(c.model.num_heads); }},
      {"window_size", true, [](RunConfig& c, std::string_view v) { c.model.window_size = parse_int("window_size", v); },
       [](const RunConfig& c) { return std::to_string(c.model.window_size); }},
      {"mlp_ratio", true, [](RunConfig& c, std::string_view v) { c.model.mlp_ratio = parse_int("mlp_ratio", v); },
       [](const RunConfig& c) { return std::to_string(c.model.mlp_ratio); }},
      {"num_classes", true, [](RunConfig& c, std::string_view v) { c.model.num_classes = parse_int("num_classes", v); },
       [](const RunConfig& c) { return std::to_string(c.model.num_classes); }},
      {"se_reduction", true,
       [](RunConfig& c, std::string_view v) { c.model.se_reduction = parse_int("se_reduction", v); },
       [](const RunConfig& c) { return std::to_string(c.model.se_reduction); }},
      {"use_se", true, [](RunConfig& c, std::string_view v) { c.model.use_se = parse_bool("use_se", v); },
       [](const RunConfig& c) { return fmt(c.model.use_se); }},
      {"drop_rate", true, [](RunConfig& c, std::string_view v) { c.model.drop_rate = parse_double("drop_rate", v); },
       [](const RunConfig& c) { return fmt(c.model.drop_rate); }},

      {"base_lr", false, [](RunConfig& c, std::string_view v) { c.base_lr = parse_double("base_lr", v); },
       [](const RunConfig& c) { return fmt(c.base_lr); }},
      {"momentum", false, [](RunConfig& c, std::string_view v) { c.momentum = parse_double("momentum", v); },
       [](const RunConfig& c) { return fmt(c.momentum); }},
      {"rho", false, [](RunConfig& c, std::string_view v) { c.rho = parse_double("rho", v); },
       [](const RunConfig& c) { return fmt(c.rho); }},
      {"sam", false, [](RunConfig& c, std::string_view v) { c.sam = parse_bool("sam", v); },
       [](const RunConfig& c) { return fmt(c.sam); }},
      {"epochs", false, [](RunConfig& c, std::string_view v) { c.epochs = parse_int("epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.epochs); }},
      {"batch_size", false, [](RunConfig& c, std::string_view v) { c.batch_size = parse_int("batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.batch_size); }},

      {"data", false, [](RunConfig& c, std::string_view v) { c.data = parse_list(v); },
       [](const RunConfig& c) { return join(c.data); }},
      {"train_fraction", false,
       [](RunConfig& c, std::string_view v) { c.train_fraction = parse_double("train_fraction", v); },
       [](const RunConfig& c) { return fmt(c.train_fraction); }},
      {"val_fraction", false, [](RunConfig& c, std::string_view v) { c.val_fraction = parse_double("val_fraction", v); },
       [](const RunConfig& c) { return fmt(c.val_fraction); }},
      {"test_fraction", false,
       [](RunConfig& c, std::string_view v) { c.test_fraction = parse_double("test_fraction", v); },
       [](const RunConfig& c) { return fmt(c.test_fraction); }},
      {"test_per_class", false,
       [](RunConfig& c, std::string_view v) { c.test_per_class = parse_int("test_per_class", v); },
       [](const RunConfig& c) { return std::to_string(c.test_per_class); }},
      {"balance", false, [](RunConfig& c, std::string_view v) { c.balance = parse_bool("balance", v); },
       [](const RunConfig& c) { return fmt(c.balance); }},
      {"seed", false, [](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v, "an unsigned integer"); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},

      {"precision", false,
       [](RunConfig& c, std::string_view v) {
         if (v == "32") {
           c.precision = Precision::f32;
         } else if (v == "64") {
           c.precision = Precision::f64;
         } else {
           bad_value("precision", v, "32 or 64");
         }
       },
       [](const RunConfig& c) { return std::string(c.precision == Precision::f32 ? "32" : "64"); }},
      {"out_dir", false, [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
       [](const RunConfig& c) { return c.out_dir; }},
      {"log_wall_time", false, [](RunConfig& c, std::string_view v) { c.log_wall_time = parse_bool("log_wall_time", v); },
       [](const RunConfig& c) { return fmt(c.log_wall_time); }},
      {"stop_at_train_acc", false,
       [](RunConfig& c, std::string_view v) { c.stop_at_train_acc = parse_double("stop_at_train_acc", v); },
       [](const RunConfig& c) { return fmt(c.stop_at_train_acc); }},
      {"eval_remap7", false, [](RunConfig& c, std::string_view v) { c.eval_remap7 = parse_bool("eval_remap7", v); },
       [](const RunConfig& c) { return fmt(c.eval_remap7); }},
  };
  return table;
}

const Key& find_key(std::string_view name) {
  for (const auto& k : keys()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown config key '" + std::string(name) + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  OptimizerState opt;
  opt.base_lr = base_lr;
  opt.momentum = momentum;
  opt.rho = rho;
  opt.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (train_fraction < 0 || val_fraction < 0 || test_fraction < 0 ||
      std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("train/val/test fractions must be non-negative and sum to 1");
  }
  if (test_per_class < 0) throw ConfigError("test_per_class must be >= 0");
  if (stop_at_train_acc < 0 || stop_at_train_acc > 1) throw ConfigError("stop_at_train_acc must be in [0, 1]");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

void RunConfig::set(std::string_view key, std::string_view value) { find_key(trim(key)).set(*this, trim(value)); }

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) {
    out += k.name;
    out += " = ";
    out += k.get(*this);
    out += '\n';
  }
  return out;
}

bool is_model_key(std::string_view key) { return find_key(trim(key)).model; }

RunConfig parse_config(std::string_view text, RunConfig base, std::string_view origin) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    try {
      base.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base), path.string());
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    config.set(std::string_view(o).substr(0, eq), std::string_view(o).substr(eq + 1));
  }
}

}  // namespace fer
