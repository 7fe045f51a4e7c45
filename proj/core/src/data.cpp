#include "fer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "fer/errors.hpp"
#include "fer/log.hpp"

namespace fer {

std::string_view emotion_name(int label) {
  if (label < 0 || label >= static_cast<int>(kEmotionNames.size())) {
    throw LabelError("label " + std::to_string(label) + " out of range");
  }
  return kEmotionNames[static_cast<std::size_t>(label)];
}

void check_label(int label, int num_classes) {
  if (num_classes != 7 && num_classes != 8) {
    throw ConfigError("num_classes must be 7 or 8, got " + std::to_string(num_classes));
  }
  if (label < 0 || label >= num_classes) {
    throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  }
}

int emotion_from_name(std::string_view name, int num_classes) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (std::size_t i = 0; i < kEmotionNames.size(); ++i) {
    if (kEmotionNames[i] == lower) {
      if (static_cast<int>(i) >= num_classes) {
        throw LabelError("class '" + lower + "' is not available with " + std::to_string(num_classes) + " classes");
      }
      return static_cast<int>(i);
    }
  }
  throw LabelError("unknown class name '" + std::string(name) + "'");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Image apply_transform(const Image& image, const Transform& t) {
  Image out = t.rotate ? rotate(image, t.angle_deg) : image;
  return t.autocontrast ? autocontrast(out) : out;
}

Image materialize(const Sample& sample) {
  return sample.augmented() ? apply_transform(*sample.image, sample.transform) : *sample.image;
}

std::vector<std::size_t> DatasetManifest::class_counts() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : samples) ++out.at(static_cast<std::size_t>(s.label));
  return out;
}

std::vector<std::size_t> DatasetManifest::class_counts(Split split) const {
  std::vector<std::size_t> out(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : samples) {
    if (s.split == split) ++out.at(static_cast<std::size_t>(s.label));
  }
  return out;
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

void DatasetManifest::append(DatasetManifest other) {
  if (other.num_classes != num_classes) throw ConfigError("cannot mix 7- and 8-class manifests");
  const std::size_t offset = samples.size();
  for (auto& s : other.samples) {
    if (s.source) *s.source += offset;
    samples.push_back(std::move(s));
  }
  sources.insert(sources.end(), other.sources.begin(), other.sources.end());
}

namespace {

std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::string DatasetManifest::export_text() const {
  std::ostringstream out;
  for (const auto& s : samples) {
    out << csv_field(s.origin) << ',' << s.label << ',' << split_name(s.split) << ',';
    if (s.augmented()) {
      out << "augmented:src=" << *s.source << ";rotate=" << (s.transform.rotate ? shortest(s.transform.angle_deg) : "none")
          << ";autocontrast=" << (s.transform.autocontrast ? 1 : 0);
    } else {
      out << "original";
    }
    out << '\n';
  }
  return out.str();
}

DatasetManifest load_fer_csv(const std::filesystem::path& path, int num_classes) {
  check_label(0, num_classes);
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  DatasetManifest m;
  m.num_classes = num_classes;
  m.sources.push_back("fer-csv:" + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto strip = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  };
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  ++line_no;
  strip(line);
  if (line.rfind("emotion,pixels", 0) != 0) throw DataError(path.string() + ": expected header emotion,pixels,Usage");

  constexpr std::size_t side = 48;
  while (std::getline(in, line)) {
    ++line_no;
    strip(line);
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c1 == std::string::npos) throw DataError(where + ": missing pixels column");
    int emotion = -1;
    const char* b = line.data();
    auto [p, ec] = std::from_chars(b, b + c1, emotion);
    if (ec != std::errc() || p != b + c1) throw DataError(where + ": bad emotion field");
    if (emotion < 0 || emotion >= static_cast<int>(kFerToCanonical.size())) {
      throw LabelError(where + ": unknown emotion " + std::to_string(emotion));
    }
    const char* q = b + c1 + 1;
    const char* end = c2 == std::string::npos ? b + line.size() : b + c2;
    auto img = std::make_shared<Image>(static_cast<int>(side), static_cast<int>(side), 3);
    std::size_t count = 0;
    while (q < end) {
      while (q < end && *q == ' ') ++q;
      if (q == end) break;
      int v = 0;
      auto [next, err] = std::from_chars(q, end, v);
      if (err != std::errc() || v < 0 || v > 255) throw DataError(where + ": bad pixel value");
      if (count < side * side) std::fill_n(img->pixels.begin() + static_cast<std::ptrdiff_t>(3 * count), 3, v);
      ++count;
      q = next;
    }
    if (count != side * side) {
      throw DataError(where + ": expected 2304 pixels, got " + std::to_string(count));
    }
    Sample s;
    s.image = std::move(img);
    s.label = kFerToCanonical[static_cast<std::size_t>(emotion)];
    s.origin = where;
    m.samples.push_back(std::move(s));
  }
  return m;
}

DatasetManifest load_image_dir(const std::filesystem::path& root, int num_classes, ImageDirStats* stats) {
  namespace fs = std::filesystem;
  check_label(0, num_classes);
  if (!fs::is_directory(root)) throw DataError(root.string() + " is not a directory");
  DatasetManifest m;
  m.num_classes = num_classes;
  m.sources.push_back("image-dir:" + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::size_t skipped = 0;
  for (const auto& dir : dirs) {
    const int label = emotion_from_name(dir.filename().string(), num_classes);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        Sample s;
        s.image = std::make_shared<Image>(to_rgb(read_image(f)));
        s.label = label;
        s.origin = f.string();
        m.samples.push_back(std::move(s));
      } catch (const InputError& e) {
        ++skipped;
        log_warning(std::string("skipping ") + e.what());
      }
    }
  }
  if (skipped) log_warning(std::to_string(skipped) + " undecodable file(s) skipped under " + root.string());
  if (stats) stats->skipped = skipped;
  return m;
}

DatasetManifest synthetic_textures(std::size_t per_class, int num_classes, int size, std::uint64_t seed) {
  check_label(0, num_classes);
  if (size <= 0) throw ConfigError("synthetic image size must be positive");
  DatasetManifest m;
  m.num_classes = num_classes;
  m.seed = seed;
  m.sources.push_back("synthetic:" + std::to_string(per_class));
  CounterRng rng = CounterRng(seed).child("synthetic");
  const double pi = std::numbers::pi;
  for (int k = 0; k < num_classes; ++k) {
    const double theta = pi * k / num_classes;
    const double freq = 2 * pi * (2.0 + k % 3) / size;
    // Per-class channel tint from a small palette.
    const double tint[3] = {0.6 + 0.4 * ((k >> 0) & 1), 0.6 + 0.4 * ((k >> 1) & 1), 0.6 + 0.4 * ((k >> 2) & 1)};
    for (std::size_t i = 0; i < per_class; ++i) {
      const double phase = rng.uniform(0, 2 * pi);
      auto img = std::make_shared<Image>(size, size, 3);
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          const double wave = std::sin(freq * (c * std::cos(theta) + r * std::sin(theta)) + phase);
          for (int ch = 0; ch < 3; ++ch) {
            const double v = 128 + 90 * wave * tint[ch] + rng.uniform(-20, 20);
            img->at(r, c, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
          }
        }
      }
      Sample s;
      s.image = std::move(img);
      s.label = k;
      s.origin = "synthetic:" + std::to_string(m.samples.size());
      m.samples.push_back(std::move(s));
    }
  }
  return m;
}

DatasetManifest label_tiles(std::size_t per_class, int num_classes, int size, std::uint64_t seed) {
  check_label(0, num_classes);
  if (size <= 0) throw ConfigError("tile image size must be positive");
  DatasetManifest m;
  m.num_classes = num_classes;
  m.seed = seed;
  m.sources.push_back("tiles:" + std::to_string(per_class));
  CounterRng rng = CounterRng(seed).child("tiles");
  for (int k = 0; k < num_classes; ++k) {
    // Corner k of the RGB cube, pulled in from the extremes.
    const int colour[3] = {k & 1 ? 210 : 45, k & 2 ? 210 : 45, k & 4 ? 210 : 45};
    for (std::size_t i = 0; i < per_class; ++i) {
      const int jitter = static_cast<int>(rng.below(17)) - 8;
      auto img = std::make_shared<Image>(size, size, 3);
      for (std::size_t p = 0; p < img->pixels.size(); ++p) {
        img->pixels[p] = static_cast<std::uint8_t>(colour[p % 3] + jitter);
      }
      Sample s;
      s.image = std::move(img);
      s.label = k;
      s.origin = "tiles:" + std::to_string(m.samples.size());
      m.samples.push_back(std::move(s));
    }
  }
  return m;
}

DatasetManifest load_source(const std::string& spec, int num_classes, int synthetic_size, std::uint64_t seed) {
  namespace fs = std::filesystem;
  constexpr std::string_view synth = "synthetic:";
  if (spec.rfind(synth, 0) == 0) {
    std::size_t n = 0;
    const char* b = spec.data() + synth.size();
    const char* e = spec.data() + spec.size();
    auto [p, ec] = std::from_chars(b, e, n);
    if (ec != std::errc() || p != e || n == 0) throw ConfigError("bad data source '" + spec + "'");
    return synthetic_textures(n, num_classes, synthetic_size, seed);
  }
  constexpr std::string_view tiles = "tiles:";
  if (spec.rfind(tiles, 0) == 0) {
    std::size_t n = 0;
    const char* b = spec.data() + tiles.size();
    const char* e = spec.data() + spec.size();
    auto [p, ec] = std::from_chars(b, e, n);
    if (ec != std::errc() || p != e || n == 0) throw ConfigError("bad data source '" + spec + "'");
    return label_tiles(n, num_classes, synthetic_size, seed);
  }
  const fs::path path(spec);
  if (fs::is_directory(path)) return load_image_dir(path, num_classes);
  if (fs::is_regular_file(path)) return load_fer_csv(path, num_classes);
  throw DataError("data source not found: " + spec);
}

DatasetManifest balance_classes(const DatasetManifest& manifest, CounterRng& rng) {
  const auto k = static_cast<std::size_t>(manifest.num_classes);
  std::vector<std::vector<std::size_t>> originals(k);
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& s = manifest.samples[i];
    if (s.augmented()) throw ContractError("balance_classes expects a manifest of originals");
    if (s.split == Split::train) originals[static_cast<std::size_t>(s.label)].push_back(i);
  }
  std::size_t target = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (originals[c].empty()) {
      throw DataError("class " + std::string(emotion_name(static_cast<int>(c))) + " has no training samples");
    }
    target = std::max(target, originals[c].size());
  }

  DatasetManifest out = manifest;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t deficit = target - originals[c].size();
    if (deficit == 0) continue;
    CounterRng crng = rng.child("balance:" + std::to_string(c));
    std::vector<Sample> made;
    while (made.size() < deficit) {
      std::vector<std::size_t> order = originals[c];
      crng.shuffle(std::span<std::size_t>(order));
      for (std::size_t src : order) {
        Sample s = manifest.samples[src];
        s.source = src;
        const double roll_rotate = crng.uniform();
        const double angle = crng.uniform(-10.0, 10.0);
        const double roll_contrast = crng.uniform();
        s.transform = {roll_rotate < 0.5 ? angle : 0.0, roll_rotate < 0.5, roll_contrast < 0.5};
        made.push_back(std::move(s));
      }
    }
    // Prune surplus uniformly at random, keeping generation order.
    std::vector<std::size_t> ids(made.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    crng.shuffle(std::span<std::size_t>(ids));
    std::vector<bool> keep(made.size(), false);
    for (std::size_t i = 0; i < deficit; ++i) keep[ids[i]] = true;
    for (std::size_t i = 0; i < made.size(); ++i) {
      if (keep[i]) out.samples.push_back(std::move(made[i]));
    }
  }
  return out;
}

DatasetManifest split(const DatasetManifest& manifest, const SplitFractions& f, CounterRng& rng,
                      std::optional<std::size_t> test_per_class) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  const auto k = static_cast<std::size_t>(manifest.num_classes);
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    if (manifest.samples[i].augmented()) throw ContractError("split expects a manifest of originals");
    by_class.at(static_cast<std::size_t>(manifest.samples[i].label)).push_back(i);
  }
  DatasetManifest out = manifest;
  for (std::size_t c = 0; c < k; ++c) {
    auto& ids = by_class[c];
    const std::size_t n = ids.size();
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.val));
    const auto n_test =
        test_per_class ? *test_per_class : static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.test));
    if (n_val + n_test > n) {
      throw DataError("class " + std::string(emotion_name(static_cast<int>(c))) + " has " + std::to_string(n) +
                      " samples, fewer than the " + std::to_string(n_val + n_test) + " requested for val/test");
    }
    CounterRng crng = rng.child("split:" + std::to_string(c));
    crng.shuffle(std::span<std::size_t>(ids));
    for (std::size_t i = 0; i < n; ++i) {
      out.samples[ids[i]].split = i < n_test ? Split::test : i < n_test + n_val ? Split::val : Split::train;
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_iter(const std::vector<std::size_t>& indices, std::size_t batch_size,
                                                 CounterRng& rng, bool drop_last) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order = indices;
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    if (drop_last && end - i < batch_size) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch make_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& indices, int image_size) {
  const auto s = static_cast<std::size_t>(image_size);
  const std::size_t per = s * s * 3;
  std::vector<double> data;
  data.reserve(indices.size() * per);
  Batch batch;
  for (std::size_t idx : indices) {
    const Sample& sample = manifest.samples.at(idx);
    const Image img = resize_bilinear(to_rgb(materialize(sample)), image_size, image_size);
    const Tensor t = normalize(img);
    data.insert(data.end(), t.data().begin(), t.data().end());
    batch.labels.push_back(sample.label);
  }
  batch.images = Tensor::from_data({indices.size(), s, s, 3}, std::move(data));
  return batch;
}

}  // namespace fer
