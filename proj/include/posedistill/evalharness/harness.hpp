#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "posedistill/config.hpp"
#include "posedistill/evalharness/evaluate.hpp"
#include "posedistill/trainer/trainer.hpp"

namespace posedistill::evalharness {

/// One row group of an ablation table: a strategy plus a config change.
struct AblationEntry {
  std::string name;
  std::string description;
  trainer::Strategy strategy;
  std::function<void(RunConfig&)> apply;
  /// Teachers are shared between entries with the same variant name.
  std::string teacher_variant = "default";
};

/// teacher, baseline, 3daug, onesidecl, jointcl (the strategies) and
/// full, no_cl_kl, no_kd, no_aug, narrow_student (the ablations; full is 3daug).
const std::vector<AblationEntry>& ablation_entries();
/// Throws ConfigError for unknown names.
const AblationEntry& ablation_entry(const std::string& name);

/// Trains each (variant, seed) teacher at most once and keeps it on disk
/// under `<dir>/<variant>/seed<seed>/` so later runs reuse it.
class TeacherCache {
 public:
  explicit TeacherCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const models::TeacherModel& get(const datagen::Dataset& data, const RunConfig& config,
                                  const std::string& variant);

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<models::TeacherModel>> loaded_;
};

/// Trains and evaluates one entry for `config.train.seed`, writing the run
/// into `out_dir` (resolved config, checkpoints, train.log.jsonl, metrics.json).
/// An existing metrics.json is returned as-is.
MetricsReport run_entry(const AblationEntry& entry, const datagen::Dataset& data,
                        const RunConfig& config, const std::filesystem::path& out_dir,
                        TeacherCache& teachers);

/// run_entry for a plain strategy.
MetricsReport run_strategy(trainer::Strategy strategy, const datagen::Dataset& data,
                           const RunConfig& config, const std::filesystem::path& out_dir,
                           TeacherCache& teachers);

struct AblationRow {
  std::string configuration;
  std::uint64_t seed = 0;
  double acc30 = 0.0;
  double mederr = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  /// Header `configuration,seed,acc30,mederr`; per-seed rows, then one `mean`
  /// and one `median` row per configuration.
  std::string to_csv() const;
  std::vector<double> acc30_of(const std::string& configuration) const;
  double median_acc30(const std::string& configuration) const;
};

/// Runs every named entry for seeds config.train.seed + [0, config.seeds),
/// in parallel up to POSEDISTILL_THREADS, and writes `<out_dir>/ablation.csv`.
AblationTable run_ablation(const std::vector<std::string>& entries, const datagen::Dataset& data,
                           const RunConfig& config, const std::filesystem::path& out_dir);

/// Few-shot protocol: teacher and student (3daug) on seen categories, then the
/// student is fine-tuned on k samples per unseen category (lr0 scaled by
/// finetune_lr_factor, finetune_epochs epochs, pose loss only) and evaluated
/// on unseen validation samples. k = 0 is the zero-shot protocol.
/// `teacher` may be null, in which case one is trained on seen categories.
MetricsReport run_fewshot(const models::TeacherModel* teacher, const RunConfig& config, int k,
                          const datagen::Dataset& data);

/// Writes `<index>_input.pgm`, `<index>_gt.pgm`, `<index>_pred.pgm` for each
/// sample: the stored image and noise-free renders at the true and predicted poses.
void write_visualizations(const datagen::Dataset& data, std::span<const std::size_t> indices,
                          const std::vector<posemath::PosePrediction>& predictions,
                          const std::filesystem::path& out_dir);

/// Visualizes the first n validation samples with a saved network.
template <typename Model>
void visualize(Model& model, const datagen::Dataset& data, std::size_t n,
               const std::filesystem::path& out_dir) {
  const auto& val = data.split.val;
  const std::vector<std::size_t> idx(val.begin(),
                                     val.begin() + static_cast<std::ptrdiff_t>(std::min(n, val.size())));
  if (idx.empty()) return;
  write_visualizations(data, idx, predict(model, data, idx), out_dir);
}

}  // namespace posedistill::evalharness
