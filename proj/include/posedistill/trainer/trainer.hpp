#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "posedistill/datagen/dataset.hpp"
#include "posedistill/losses/losses.hpp"
#include "posedistill/models/models.hpp"
#include "posedistill/trainer/augment.hpp"

namespace posedistill::trainer {

enum class Strategy { kTeacherOnly, kStudentBaseline, kThreeDAugPose, kOneSideCL, kJointCL };

/// teacher, baseline, 3daug, onesidecl, jointcl
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);
inline constexpr Strategy kAllStrategies[] = {Strategy::kTeacherOnly, Strategy::kStudentBaseline,
                                              Strategy::kThreeDAugPose, Strategy::kOneSideCL,
                                              Strategy::kJointCL};

struct TrainConfig {
  double lr0 = 1e-4;
  int epochs_stage1 = 150;
  int epochs_stage2 = 90;
  int batch_size = 32;
  losses::LossWeights weights;
  AugmentConfig augment;
  bool augment_stage1 = false;
  bool augment_stage2 = true;
  int finetune_epochs = 20;
  double finetune_lr_factor = 0.1;
  /// Validation (and checkpoint selection) every this many epochs; the last
  /// epoch is always validated.
  int eval_every = 1;
  std::uint64_t seed = 1;
  /// Skip evaluating loss terms whose weight is zero.
  bool gate_zero_weights = true;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// lr0 before epoch ceil(0.8 * epochs), lr0 / 10 from then on.
double lr_at(int epoch, int epochs, double lr0);

/// A forward or backward value went non-finite during training.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, nlohmann::json record)
      : std::runtime_error(what), record_(std::move(record)) {}
  const nlohmann::json& record() const { return record_; }

 private:
  nlohmann::json record_;
};

struct EpochLog {
  std::string stage;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double pos = 0.0;
  double cl = 0.0;
  double kl = 0.0;
  double kd = 0.0;
  std::optional<double> val_acc30;
  std::optional<double> val_mederr;
  bool best = false;

  nlohmann::json to_json() const;
};

/// Where and how a run persists itself. With an empty out_dir nothing is
/// written. Otherwise every epoch rewrites `<stage>_state.{json,bin}` (all
/// parameters, Adam moments, RNG, best-so-far weights) and `train.log.jsonl`;
/// with `resume` an existing state is continued after its last epoch.
struct RunOptions {
  std::filesystem::path out_dir;
  bool resume = true;
  std::string config_hash;
  /// Overrides the dataset's train / select index lists when set.
  std::optional<std::vector<std::size_t>> train_indices;
  std::optional<std::vector<std::size_t>> select_indices;
  /// Overrides the stage's epoch count and base learning rate when set.
  std::optional<int> epochs;
  std::optional<double> lr0;
  std::optional<bool> augment;
  /// Stop after this many epochs of the stage (resume testing).
  std::optional<int> stop_after;
  std::function<void(const EpochLog&)> on_epoch;
};

struct Selection {
  int epoch = -1;
  double acc30 = 0.0;
  double mederr = 0.0;
};

struct TeacherResult {
  models::TeacherModel model;  // best by validation Acc30, MedErr breaking ties
  Selection selected;
  std::vector<EpochLog> log;
};

struct StudentResult {
  models::StudentModel model;
  Selection selected;
  std::vector<EpochLog> log;
  /// L2 norm of the change in the frozen teacher's parameters and buffers.
  double teacher_delta = 0.0;
};

struct JointResult {
  models::TeacherModel teacher;
  StudentResult student;
  std::vector<EpochLog> stage1_log;
};

/// Stage 1: kappa1 * L_POS + kappa2 * InfoNCE(z_t, h_t) over every teacher
/// parameter including the projection head.
TeacherResult train_teacher(const datagen::Dataset& data, const models::ModelConfig& model,
                            const TrainConfig& config, const RunOptions& options = {});

/// Stage 2 with the teacher frozen (eval mode; its outputs enter the student
/// loss as constants). `strategy` is baseline, 3daug, onesidecl or jointcl
/// (the latter being Joint-CL's output-guided fine-tuning). `teacher` may be
/// null only for the baseline. `init` continues from an existing student.
StudentResult train_student(const datagen::Dataset& data, const models::TeacherModel* teacher,
                            const models::ModelConfig& model, const TrainConfig& config,
                            Strategy strategy, const RunOptions& options = {},
                            const models::StudentModel* init = nullptr);

/// Joint-CL: stage 1 trains teacher and student together on
/// kappa1 * L_POS(teacher) + kappa2 * InfoNCE(z_s, h_t); stage 2 freezes the
/// teacher and fine-tunes the student on omega1 * L_POS + omega3 * L_KD.
JointResult train_joint(const datagen::Dataset& data, const models::ModelConfig& model,
                        const TrainConfig& config, const RunOptions& options = {});

/// Frozen-teacher targets for a batch of images, computed on a private tape.
struct TeacherTargets {
  diff::Tensor h_t;
  diff::Tensor z_t;
  diff::Tensor logits;
};
TeacherTargets teacher_targets(models::TeacherModel& teacher, const diff::Tensor& images,
                               const diff::Tensor& d_t);

/// Eval-mode shape features of the given samples, [indices.size(), shape_dim].
diff::Tensor shape_feature_cache(models::TeacherModel& teacher, const datagen::Dataset& data,
                                 std::span<const std::size_t> indices);

/// The stage-2 objective for one batch given fixed teacher targets; builds its
/// own tape, so it can be re-evaluated under parameter perturbations.
double student_objective(models::StudentModel& student, const diff::Tensor& images,
                         std::span<const posemath::PoseTarget> targets,
                         const TeacherTargets& teacher, Strategy strategy,
                         const TrainConfig& config);

}  // namespace posedistill::trainer
