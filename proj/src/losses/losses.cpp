#include "posedistill/losses/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "posedistill/diff/ops.hpp"
#include "posedistill/errors.hpp"

namespace posedistill::losses {

using diff::Tensor;
using diff::Var;
using posemath::Angle;

namespace {

void check_batch(Var a, Var b, const char* what) {
  if (a.shape().size() != 2 || a.shape() != b.shape()) {
    throw diff::ShapeError(std::string(what) + ": operands must be equal [B, E] matrices, got " +
                           diff::shape_string(a.shape()) + " and " +
                           diff::shape_string(b.shape()));
  }
}

Var block(Var m, const posemath::AngleBinSpec& spec, Angle a) {
  const auto first = static_cast<std::size_t>(spec.block_offset(a));
  return diff::slice(m, 1, first, first + static_cast<std::size_t>(spec.bin_count(a)));
}

// Per-row KL(softmax(p) || softmax(q)) summed over rows.
Var kl_rows(Var p_logits, Var q_logits) {
  Var log_p = diff::log_softmax(p_logits, 1);
  Var log_q = diff::log_softmax(q_logits, 1);
  Var p = diff::softmax(p_logits, 1);
  return diff::sum(diff::mul(p, diff::sub(log_p, log_q)));
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {kappa1, kappa2, omega1, omega2, omega3}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be finite and > 0");
}

nlohmann::json LossParts::to_json() const {
  return {{"total", total.value().item()}, {"pos", pos}, {"cl", cl}, {"kl", kl}, {"kd", kd}};
}

Var pose_loss(Var logits, Var offsets, std::span<const posemath::PoseTarget> targets,
              const posemath::AngleBinSpec& spec) {
  check_batch(logits, offsets, "pose_loss");
  const std::size_t b = logits.shape()[0];
  if (logits.shape()[1] != static_cast<std::size_t>(spec.total_bins())) {
    throw diff::ShapeError("pose_loss: expected " + std::to_string(spec.total_bins()) +
                           " bin columns");
  }
  if (targets.size() != b) throw diff::ShapeError("pose_loss: target count differs from batch");
  diff::Tape& tape = logits.tape();
  Var total;
  bool first = true;
  for (Angle a : posemath::kAllAngles) {
    std::vector<std::size_t> cols(b);
    Tensor target_offsets({b});
    for (std::size_t i = 0; i < b; ++i) {
      const auto& t = targets[i][a];
      if (t.bin < spec.first_index(a) || t.bin > spec.last_index(a)) {
        throw std::out_of_range("pose_loss: target bin " + std::to_string(t.bin) +
                                " outside the index range");
      }
      cols[i] = static_cast<std::size_t>(spec.column(a, t.bin));
      target_offsets[i] = t.offset;
    }
    Var ce = diff::scale(diff::sum(diff::gather(diff::log_softmax(block(logits, spec, a), 1), cols)),
                         -1.0);
    Var off = diff::gather(block(offsets, spec, a), cols);
    Var reg = diff::sum(diff::smooth_l1(diff::sub(off, tape.constant(std::move(target_offsets)))));
    Var term = diff::add(ce, reg);
    total = first ? term : diff::add(total, term);
    first = false;
  }
  return diff::scale(total, 1.0 / static_cast<double>(b));
}

Var infonce(Var z, Var h, double tau) {
  check_batch(z, h, "infonce");
  const std::size_t n = z.shape()[0];
  if (n < 2) throw std::invalid_argument("infonce: need at least 2 samples for negatives");
  if (!(tau > 0.0)) throw std::invalid_argument("infonce: tau must be positive");
  Var zn = diff::l2_normalize(z, 1);
  Var hn = diff::l2_normalize(h, 1);
  Var sim = diff::scale(diff::matmul(zn, diff::transpose(hn)), 1.0 / tau);
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  Var pos = diff::gather(diff::log_softmax(sim, 1), diag);
  return diff::scale(diff::sum(pos), -1.0 / static_cast<double>(n));
}

Var kl_embed(Var z_t, Var z_s) {
  check_batch(z_t, z_s, "kl_embed");
  return diff::scale(kl_rows(z_t, z_s), 1.0 / static_cast<double>(z_t.shape()[0]));
}

Var kl_output(Var teacher_logits, Var student_logits, const posemath::AngleBinSpec& spec) {
  check_batch(teacher_logits, student_logits, "kl_output");
  if (teacher_logits.shape()[1] != static_cast<std::size_t>(spec.total_bins())) {
    throw diff::ShapeError("kl_output: expected " + std::to_string(spec.total_bins()) +
                           " bin columns");
  }
  Var total;
  bool first = true;
  for (Angle a : posemath::kAllAngles) {
    Var term = kl_rows(block(teacher_logits, spec, a), block(student_logits, spec, a));
    total = first ? term : diff::add(total, term);
    first = false;
  }
  return diff::scale(total, 1.0 / static_cast<double>(teacher_logits.shape()[0]));
}

namespace {

struct Sum {
  Var total;
  bool empty = true;
  void add(Var term, double weight) {
    Var scaled = diff::scale(term, weight);
    total = empty ? scaled : diff::add(total, scaled);
    empty = false;
  }
};

}  // namespace

LossParts teacher_loss(Var logits, Var offsets, Var z_t, Var h_t,
                       std::span<const posemath::PoseTarget> targets, const LossWeights& w,
                       bool gate) {
  LossParts parts;
  Sum sum;
  if (!gate || w.kappa1 != 0.0) {
    Var pos = pose_loss(logits, offsets, targets);
    parts.pos = pos.value().item();
    sum.add(pos, w.kappa1);
  }
  if (!gate || w.kappa2 != 0.0) {
    Var cl = infonce(z_t, h_t, w.tau);
    parts.cl = cl.value().item();
    sum.add(cl, w.kappa2);
  }
  if (sum.empty) throw ConfigError("teacher loss has no active term");
  parts.total = sum.total;
  return parts;
}

LossParts student_loss(Var logits, Var offsets, Var z_s, Var z_t, Var teacher_logits,
                       std::span<const posemath::PoseTarget> targets, const LossWeights& w,
                       bool gate) {
  LossParts parts;
  Sum sum;
  if (!gate || w.omega1 != 0.0) {
    Var pos = pose_loss(logits, offsets, targets);
    parts.pos = pos.value().item();
    sum.add(pos, w.omega1);
  }
  if (!gate || w.omega2 != 0.0) {
    Var kl = kl_embed(z_t, z_s);
    parts.kl = kl.value().item();
    sum.add(kl, w.omega2);
  }
  if (!gate || w.omega3 != 0.0) {
    Var kd = kl_output(teacher_logits, logits);
    parts.kd = kd.value().item();
    sum.add(kd, w.omega3);
  }
  if (sum.empty) throw ConfigError("student loss has no active term");
  parts.total = sum.total;
  return parts;
}

}  // namespace posedistill::losses
