#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "posedistill/diff/gradcheck.hpp"
#include "posedistill/diff/ops.hpp"
#include "posedistill/errors.hpp"
#include "posedistill/losses/losses.hpp"

using namespace posedistill;
using namespace posedistill::losses;
using diff::Tape;
using diff::Tensor;
using diff::Var;
using posemath::PoseTarget;

namespace {

constexpr double kLossTolerance = 1e-4;
constexpr int kInstances = 20;

Tensor randn(diff::Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

Tensor unit_interval(diff::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.05, 0.95);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

std::vector<PoseTarget> random_targets(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> full(-posemath::kPi, posemath::kPi);
  std::uniform_real_distribution<double> half(-posemath::kPi / 2, posemath::kPi / 2);
  std::vector<PoseTarget> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(posemath::encode_pose(posemath::EulerPose(full(rng), half(rng), full(rng))));
  }
  return out;
}

// Loop-based references, written without the tape.

double ref_log_softmax_at(const std::vector<double>& row, std::size_t k) {
  double m = row[0];
  for (double v : row) m = std::max(m, v);
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  return row[k] - m - std::log(s);
}

double ref_smooth_l1(double x) {
  const double a = std::fabs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double ref_pose_loss(const Tensor& logits, const Tensor& offsets,
                     const std::vector<PoseTarget>& targets) {
  const int starts[3] = {0, 24, 36};
  const int counts[3] = {24, 12, 24};
  const int firsts[3] = {-12, -6, -12};
  double total = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    for (int a = 0; a < 3; ++a) {
      std::vector<double> row;
      for (int k = 0; k < counts[a]; ++k) row.push_back(logits.at(b, starts[a] + k));
      const int col = targets[b].angles[a].bin - firsts[a];
      total -= ref_log_softmax_at(row, static_cast<std::size_t>(col));
      total += ref_smooth_l1(offsets.at(b, starts[a] + col) - targets[b].angles[a].offset);
    }
  }
  return total / static_cast<double>(targets.size());
}

double ref_infonce(const Tensor& z, const Tensor& h, double tau) {
  const std::size_t n = z.shape()[0], d = z.shape()[1];
  auto norm = [d](const Tensor& t, std::size_t i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += t.at(i, k) * t.at(i, k);
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += z.at(i, k) * h.at(j, k);
      row.push_back(dot / (norm(z, i) * norm(h, j)) / tau);
    }
    total -= ref_log_softmax_at(row, i);
  }
  return total / static_cast<double>(n);
}

double ref_kl_rows(const Tensor& t, const Tensor& s, std::size_t begin, std::size_t end) {
  double total = 0.0;
  const std::size_t n = t.shape()[0];
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<double> tr, sr;
    for (std::size_t k = begin; k < end; ++k) {
      tr.push_back(t.at(b, k));
      sr.push_back(s.at(b, k));
    }
    for (std::size_t k = 0; k < tr.size(); ++k) {
      const double lp = ref_log_softmax_at(tr, k);
      total += std::exp(lp) * (lp - ref_log_softmax_at(sr, k));
    }
  }
  return total;
}

double value_of(const std::function<Var(Tape&)>& f) {
  Tape t;
  return f(t).value().item();
}

}  // namespace

TEST_CASE("pose loss matches a loop-based reference") {
  for (int i = 0; i < kInstances; ++i) {
    const Tensor lg = randn({4, 60}, 100 + i, 2.0);
    const Tensor off = unit_interval({4, 60}, 200 + i);
    const auto tg = random_targets(4, 300 + i);
    const double got = value_of([&](Tape& t) {
      return pose_loss(t.constant(lg), t.constant(off), tg);
    });
    CHECK(got == doctest::Approx(ref_pose_loss(lg, off, tg)).epsilon(1e-12));
  }
}

TEST_CASE("pose loss rejects targets outside the bin layout") {
  auto tg = random_targets(1, 1);
  tg[0].angles[1].bin = 6;
  Tape t;
  CHECK_THROWS_AS(pose_loss(t.constant(Tensor({1, 60})), t.constant(Tensor({1, 60}, 0.5)), tg),
                  std::out_of_range);
}

TEST_CASE("InfoNCE matches a loop-based reference") {
  for (int i = 0; i < kInstances; ++i) {
    const Tensor z = randn({5, 6}, 400 + i), h = randn({5, 6}, 500 + i);
    const double got = value_of([&](Tape& t) { return infonce(t.constant(z), t.constant(h), 0.1); });
    CHECK(got == doctest::Approx(ref_infonce(z, h, 0.1)).epsilon(1e-12));
  }
}

TEST_CASE("InfoNCE equals ln N when every similarity is equal") {
  for (std::size_t n : {2u, 5u, 32u}) {
    Tensor z({n, 4}), h({n, 4});
    for (std::size_t i = 0; i < n; ++i) {
      // positive multiples of fixed directions: every cosine is the same
      for (std::size_t k = 0; k < 4; ++k) {
        z.at(i, k) = (1.0 + i) * (k == 0 ? 1.0 : 0.5);
        h.at(i, k) = (2.0 + i) * (k == 1 ? 1.0 : -0.25);
      }
    }
    for (double tau : {0.05, 0.1, 1.0}) {
      const double got =
          value_of([&](Tape& t) { return infonce(t.constant(z), t.constant(h), tau); });
      CHECK(std::fabs(got - std::log(static_cast<double>(n))) < 1e-9);
    }
  }
}

TEST_CASE("InfoNCE input checks") {
  Tape t;
  CHECK_THROWS_AS(infonce(t.constant(randn({1, 4}, 1)), t.constant(randn({1, 4}, 2)), 0.1),
                  std::invalid_argument);
  Tensor zero({3, 4}, 0.0);
  CHECK_THROWS_AS(infonce(t.constant(zero), t.constant(randn({3, 4}, 3)), 0.1),
                  diff::NumericalError);
}

TEST_CASE("KL terms match references, are non-negative and vanish on equal inputs") {
  for (int i = 0; i < kInstances; ++i) {
    const Tensor a = randn({3, 16}, 600 + i), b = randn({3, 16}, 700 + i);
    const double ke = value_of([&](Tape& t) { return kl_embed(t.constant(a), t.constant(b)); });
    CHECK(ke == doctest::Approx(ref_kl_rows(a, b, 0, 16) / 3.0).epsilon(1e-12));
    CHECK(ke >= 0.0);
    CHECK(std::fabs(value_of([&](Tape& t) { return kl_embed(t.constant(a), t.constant(a)); })) <
          1e-9);

    const Tensor la = randn({3, 60}, 800 + i, 3.0), lb = randn({3, 60}, 900 + i, 3.0);
    const double ko = value_of([&](Tape& t) { return kl_output(t.constant(la), t.constant(lb)); });
    const double want =
        (ref_kl_rows(la, lb, 0, 24) + ref_kl_rows(la, lb, 24, 36) + ref_kl_rows(la, lb, 36, 60)) /
        3.0;
    CHECK(ko == doctest::Approx(want).epsilon(1e-12));
    CHECK(ko >= 0.0);
    CHECK(std::fabs(value_of([&](Tape& t) { return kl_output(t.constant(la), t.constant(la)); })) <
          1e-9);
  }
}

TEST_CASE("per-head KL differs from one softmax over all 60 columns") {
  const Tensor la = randn({2, 60}, 1, 3.0), lb = randn({2, 60}, 2, 3.0);
  const double ko = value_of([&](Tape& t) { return kl_output(t.constant(la), t.constant(lb)); });
  CHECK(std::fabs(ko - ref_kl_rows(la, lb, 0, 60) / 2.0) > 1e-3);
}

TEST_CASE("loss gradients match central differences") {
  const auto tg = random_targets(4, 17);
  for (int i = 0; i < kInstances; ++i) {
    CAPTURE(i);
    const std::vector<Tensor> pose_in = {randn({4, 60}, 1000 + i), unit_interval({4, 60}, 1100 + i)};
    CHECK(diff::grad_check([&](Tape&, std::span<const Var> v) { return pose_loss(v[0], v[1], tg); },
                           pose_in) < kLossTolerance);

    const std::vector<Tensor> cl_in = {randn({4, 5}, 1200 + i), randn({4, 5}, 1300 + i)};
    CHECK(diff::grad_check([](Tape&, std::span<const Var> v) { return infonce(v[0], v[1], 0.1); },
                           cl_in) < kLossTolerance);

    const std::vector<Tensor> ke_in = {randn({3, 6}, 1400 + i), randn({3, 6}, 1500 + i)};
    CHECK(diff::grad_check([](Tape&, std::span<const Var> v) { return kl_embed(v[0], v[1]); },
                           ke_in) < kLossTolerance);

    const std::vector<Tensor> ko_in = {randn({2, 60}, 1600 + i), randn({2, 60}, 1700 + i)};
    CHECK(diff::grad_check([](Tape&, std::span<const Var> v) { return kl_output(v[0], v[1]); },
                           ko_in) < kLossTolerance);

    const LossWeights w;
    const std::vector<Tensor> teacher_in = {randn({4, 60}, 1800 + i),
                                            unit_interval({4, 60}, 1900 + i),
                                            randn({4, 5}, 2000 + i), randn({4, 5}, 2100 + i)};
    CHECK(diff::grad_check(
              [&](Tape&, std::span<const Var> v) {
                return teacher_loss(v[0], v[1], v[2], v[3], tg, w).total;
              },
              teacher_in) < kLossTolerance);

    const std::vector<Tensor> student_in = {
        randn({4, 60}, 2200 + i), unit_interval({4, 60}, 2300 + i), randn({4, 5}, 2400 + i),
        randn({4, 5}, 2500 + i), randn({4, 60}, 2600 + i)};
    CHECK(diff::grad_check(
              [&](Tape&, std::span<const Var> v) {
                return student_loss(v[0], v[1], v[2], v[3], v[4], tg, w).total;
              },
              student_in) < kLossTolerance);
  }
}

TEST_CASE("combined losses equal their weighted components") {
  const auto tg = random_targets(4, 5);
  LossWeights w;
  w.kappa1 = 0.7;
  w.kappa2 = 1.3;
  w.omega1 = 0.4;
  w.omega2 = 0.9;
  w.omega3 = 0.6;
  for (int i = 0; i < kInstances; ++i) {
    Tape t;
    const Var lg = t.constant(randn({4, 60}, 3000 + i));
    const Var off = t.constant(unit_interval({4, 60}, 3100 + i));
    const Var z = t.constant(randn({4, 8}, 3200 + i));
    const Var h = t.constant(randn({4, 8}, 3300 + i));
    const Var tl = t.constant(randn({4, 60}, 3400 + i));
    const LossParts tp = teacher_loss(lg, off, z, h, tg, w);
    CHECK(std::fabs(tp.total.value().item() - (w.kappa1 * tp.pos + w.kappa2 * tp.cl)) < 1e-12);
    CHECK(tp.pos == doctest::Approx(pose_loss(lg, off, tg).value().item()).epsilon(1e-15));
    const LossParts sp = student_loss(lg, off, z, h, tl, tg, w);
    CHECK(std::fabs(sp.total.value().item() -
                    (w.omega1 * sp.pos + w.omega2 * sp.kl + w.omega3 * sp.kd)) < 1e-12);
  }
}

TEST_CASE("zero weights are skipped without changing the total") {
  const auto tg = random_targets(4, 6);
  LossWeights w;
  w.omega2 = 0.0;
  w.omega3 = 0.0;
  Tape t;
  const Var lg = t.constant(randn({4, 60}, 1));
  const Var off = t.constant(unit_interval({4, 60}, 2));
  const Var z = t.constant(randn({4, 8}, 3));
  const Var h = t.constant(randn({4, 8}, 4));
  const Var tl = t.constant(randn({4, 60}, 5));
  const LossParts gated = student_loss(lg, off, z, h, tl, tg, w, true);
  const LossParts full = student_loss(lg, off, z, h, tl, tg, w, false);
  CHECK(gated.kl == 0.0);
  CHECK(gated.kd == 0.0);
  CHECK(full.kl > 0.0);
  CHECK(gated.total.value().item() == full.total.value().item());
  // gated terms never touch their inputs: an empty embedding is fine
  const LossParts no_z = student_loss(lg, off, Var(), Var(), Var(), tg, w, true);
  CHECK(no_z.total.value().item() == gated.total.value().item());

  LossWeights tw;
  tw.kappa2 = 0.0;
  const auto one = random_targets(1, 7);
  Tape t2;
  // InfoNCE would reject a batch of one; with kappa2 = 0 it is never evaluated
  CHECK_NOTHROW(teacher_loss(t2.constant(randn({1, 60}, 1)), t2.constant(unit_interval({1, 60}, 2)),
                             t2.constant(randn({1, 8}, 3)), t2.constant(randn({1, 8}, 4)), one, tw));
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.tau = 0.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.omega3 = -0.1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}
