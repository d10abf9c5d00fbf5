#pragma once

#include <span>

#include <json.hpp>

#include "posedistill/diff/tape.hpp"
#include "posedistill/posemath.hpp"

namespace posedistill::losses {

struct LossWeights {
  double kappa1 = 1.0;
  double kappa2 = 0.5;
  double omega1 = 0.25;
  double omega2 = 0.75;
  double omega3 = 0.75;
  double tau = 0.1;

  /// Throws ConfigError unless all weights are >= 0 and tau > 0.
  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Sum over the three angles of softmax cross-entropy on the bin logits plus
/// smooth-L1 between the offset at the true bin and the target offset,
/// averaged over the batch. logits/offsets are [B, total_bins].
/// Throws std::out_of_range for a target bin outside the bin layout.
diff::Var pose_loss(diff::Var logits, diff::Var offsets, std::span<const posemath::PoseTarget> targets,
                    const posemath::AngleBinSpec& spec = {});

/// -(1/N) sum_i log softmax_j(cos(z_i, h_j) / tau)[i]. Needs N >= 2;
/// zero-norm rows raise diff::NumericalError.
diff::Var infonce(diff::Var z, diff::Var h, double tau);

/// KL(softmax(z_t) || softmax(z_s)) along the embedding axis, batch mean.
diff::Var kl_embed(diff::Var z_t, diff::Var z_s);

/// Per-head KL(softmax(teacher) || softmax(student)) summed over the three
/// angle heads, batch mean.
diff::Var kl_output(diff::Var teacher_logits, diff::Var student_logits,
                    const posemath::AngleBinSpec& spec = {});

/// Weighted total plus the unweighted components that were evaluated.
/// Components whose weight is zero are skipped entirely (empty Var, value 0).
struct LossParts {
  diff::Var total;
  double pos = 0.0;
  double cl = 0.0;
  double kl = 0.0;
  double kd = 0.0;
  nlohmann::json to_json() const;
};

/// kappa1 * pose_loss + kappa2 * infonce(z_t, h_t, tau).
LossParts teacher_loss(diff::Var logits, diff::Var offsets, diff::Var z_t, diff::Var h_t,
                       std::span<const posemath::PoseTarget> targets, const LossWeights& w,
                       bool gate_zero_weights = true);

/// omega1 * pose_loss + omega2 * kl_embed(z_t, z_s) + omega3 * kl_output.
/// Teacher values are expected as constants from a frozen model.
LossParts student_loss(diff::Var logits, diff::Var offsets, diff::Var z_s, diff::Var z_t,
                       diff::Var teacher_logits, std::span<const posemath::PoseTarget> targets,
                       const LossWeights& w, bool gate_zero_weights = true);

}  // namespace posedistill::losses
