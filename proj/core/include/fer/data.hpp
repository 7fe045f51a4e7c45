#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fer/image.hpp"
#include "fer/rng.hpp"
#include "fer/tensor.hpp"

namespace fer {

// Canonical IDs. Contempt exists only in 8-class mode.
enum class Emotion : int { fear = 0, sadness, happy, anger, disgust, surprise, neutral, contempt };

inline constexpr std::array<std::string_view, 8> kEmotionNames{"fear",     "sadness", "happy",   "anger",
                                                                "disgust",  "surprise", "neutral", "contempt"};

std::string_view emotion_name(int label);
/// Case-insensitive; throws LabelError for unknown names or IDs >= num_classes.
int emotion_from_name(std::string_view name, int num_classes);
/// Throws LabelError unless 0 <= label < num_classes and num_classes is 7 or 8.
void check_label(int label, int num_classes);

/// FER-2013 native order (angry, disgust, fear, happy, sad, surprise, neutral)
/// to canonical IDs.
inline constexpr std::array<int, 7> kFerToCanonical{3, 4, 0, 2, 1, 5, 6};

enum class Split { train, val, test };
std::string_view split_name(Split s);

/// Augmentation recipe applied to a source image: rotate, then autocontrast.
struct Transform {
  double angle_deg = 0.0;
  bool rotate = false;
  bool autocontrast = false;
};

struct Sample {
  std::shared_ptr<const Image> image;  // the original pixels, shared by augmented copies
  int label = 0;
  Split split = Split::train;
  std::string origin;               // file path, "csv-path:row N" or "synthetic:N"
  std::optional<std::size_t> source;  // index of the original sample when augmented
  Transform transform;

  bool augmented() const { return source.has_value(); }
};

/// Pixels of a sample with its transform applied.
Image materialize(const Sample& sample);
Image apply_transform(const Image& image, const Transform& t);

struct DatasetManifest {
  std::vector<Sample> samples;
  std::vector<std::string> sources;
  int num_classes = 7;
  std::uint64_t seed = 0;

  std::vector<std::size_t> class_counts() const;
  std::vector<std::size_t> class_counts(Split split) const;
  std::vector<std::size_t> indices(Split split) const;
  void append(DatasetManifest other);
  /// One line per sample: path_or_row,label_id,split,provenance
  std::string export_text() const;
};

/// FER-2013 CSV (emotion,pixels,Usage). Labels are remapped to canonical IDs
/// and the 48x48 grayscale is replicated to three channels.
DatasetManifest load_fer_csv(const std::filesystem::path& path, int num_classes = 7);

struct ImageDirStats {
  std::size_t skipped = 0;  // undecodable files
};

/// <root>/<class-name>/<file> with png, jpg/jpeg or bmp files.
DatasetManifest load_image_dir(const std::filesystem::path& root, int num_classes = 7,
                               ImageDirStats* stats = nullptr);

/// Seeded oriented-grating textures, one orientation and tint per class.
DatasetManifest synthetic_textures(std::size_t per_class, int num_classes, int size, std::uint64_t seed);

/// Flat images in a per-class colour with a small per-sample brightness
/// jitter. Trivially separable; used as a pipeline sanity check.
DatasetManifest label_tiles(std::size_t per_class, int num_classes, int size, std::uint64_t seed);

/// Dispatches "synthetic:N", "tiles:N", a .csv file or an image directory.
DatasetManifest load_source(const std::string& spec, int num_classes, int synthetic_size, std::uint64_t seed);

/// Fills every class of the train split up to the largest class count with
/// augmented copies: each pass augments every original of the class once in
/// a shuffled order (rotation in [-10, 10] degrees and autocontrast, each with
/// probability 0.5), and surplus copies from the last pass are pruned
/// uniformly at random. Val/test samples are untouched.
DatasetManifest balance_classes(const DatasetManifest& manifest, CounterRng& rng);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Stratified per class: val = llround(n * val), test = llround(n * test)
/// (or test_per_class when given), the rest train. Only originals may be split.
DatasetManifest split(const DatasetManifest& manifest, const SplitFractions& fractions, CounterRng& rng,
                      std::optional<std::size_t> test_per_class = std::nullopt);

/// Shuffled index batches over `indices`.
std::vector<std::vector<std::size_t>> batch_iter(const std::vector<std::size_t>& indices, std::size_t batch_size,
                                                 CounterRng& rng, bool drop_last = true);

struct Batch {
  Tensor images;  // [B, S, S, 3] in [-1, 1]
  std::vector<int> labels;
};

/// Materializes, resizes to image_size and normalizes the given samples.
Batch make_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& indices, int image_size);

}  // namespace fer
