#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "posedistill/datagen/dataset.hpp"
#include "posedistill/models/models.hpp"
#include "posedistill/trainer/trainer.hpp"

namespace posedistill {

/// Every tunable of a run. Files use one `key = value` per line; `#` starts a
/// comment. Lists are comma separated. Unknown or repeated keys are errors.
struct RunConfig {
  datagen::DatasetConfig data;
  models::ModelConfig model;
  trainer::TrainConfig train;
  /// Number of seeds (train.seed, train.seed + 1, ...) for ablations.
  int seeds = 5;
  /// Ablation rows, see evalharness::ablation_entry_names().
  std::vector<std::string> ablation = {"teacher", "baseline", "3daug", "onesidecl", "jointcl",
                                       "no_cl_kl", "no_kd", "no_aug", "narrow_student"};

  /// Copies dataset resolution and point count into the model and validates all parts.
  void finalize();
  /// All keys in sorted order, one `key=value` per line, defaults included.
  std::string resolved_text() const;
  /// FNV-1a of resolved_text().
  std::string hash() const;
};

/// Throws ConfigError naming `origin` and the line on any problem.
RunConfig parse_config(std::string_view text, const std::string& origin = "<config>");
/// Missing or unreadable files are a ConfigError naming the path.
RunConfig load_config(const std::filesystem::path& path);
/// Defaults, or the file's contents when a path is given.
RunConfig load_config_or_default(const std::filesystem::path& path);

std::vector<std::string> config_keys();

}  // namespace posedistill
