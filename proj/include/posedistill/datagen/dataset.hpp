#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "posedistill/datagen/render.hpp"
#include "posedistill/datagen/shapes.hpp"
#include "posedistill/posemath.hpp"

namespace posedistill::datagen {

enum class SplitMode { kFullySupervised, kZeroShot, kFewShot };

std::string_view split_mode_name(SplitMode m);
/// Accepts "fully_supervised", "zero_shot", "few_shot". Throws ConfigError.
SplitMode parse_split_mode(std::string_view name);

struct DatasetConfig {
  std::vector<Category> categories{kAllCategories.begin(), kAllCategories.end()};
  int train_per_category = 400;
  int val_per_category = 100;
  int resolution = 32;
  int points = 256;
  /// Size of each category's shape library; samples cycle through it so
  /// one shape appears under many poses. 0 gives every sample its own shape.
  int shapes_per_category = 20;
  double noise_sigma = 0.05;
  // pose sampling ranges, degrees. Azimuth covers a half turn because most
  // primitives look identical at alpha and alpha + 180.
  double alpha_min_deg = -90.0;
  double alpha_max_deg = 90.0;
  double beta_min_deg = -30.0;
  double beta_max_deg = 60.0;
  double gamma_min_deg = -30.0;
  double gamma_max_deg = 30.0;
  SplitMode split_mode = SplitMode::kFullySupervised;
  std::vector<Category> unseen;
  int few_shot_k = 10;
  std::uint64_t seed = 20240917;

  /// Throws ConfigError on bad counts, ranges or split specification.
  void validate() const;
  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct Sample {
  RenderImage image;
  std::vector<float> cloud;  // N x 3, canonical frame
  posemath::EulerPose pose;
  Category category = Category::kBox;
  ShapeSpec shape;
  std::uint64_t noise_seed = 0;
  bool val_role = false;  // drawn for validation rather than training

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Index lists into Dataset::samples. `select` drives checkpoint selection:
/// it is the val list in the fully supervised protocol and the seen-category
/// val samples otherwise, so unseen categories never influence training.
struct DatasetSplit {
  SplitMode mode = SplitMode::kFullySupervised;
  int k = 0;
  std::vector<Category> seen;
  std::vector<Category> unseen;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> select;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Sample> samples;
  DatasetSplit split;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Samples are laid out category by category, train-role draws first. Every
/// sample derives its own seed from the master seed and its index, so the
/// content is a pure function of the config.
Dataset generate_dataset(const DatasetConfig& config);

/// Builds the split lists for `config` over an existing sample list.
DatasetSplit make_split(const DatasetConfig& config, const std::vector<Sample>& samples);

/// Re-renders a sample's image from its stored shape and pose (with the same noise).
RenderImage rerender(const Sample& sample, int resolution, double noise_sigma);

inline constexpr const char* kDatasetFormat = "posedistill.dataset";
inline constexpr int kDatasetVersion = 1;

/// Writes `manifest.json` and `samples.bin` into `dir`; returns the blob CRC32.
std::uint32_t write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
/// Throws io::FormatError on a bad format tag, truncated or oversized blob,
/// checksum mismatch or inconsistent manifest; io::IoError when files are missing.
Dataset read_dataset(const std::filesystem::path& dir);

/// Reads only the manifest's recorded blob CRC32.
std::uint32_t dataset_crc(const std::filesystem::path& dir);

}  // namespace posedistill::datagen
