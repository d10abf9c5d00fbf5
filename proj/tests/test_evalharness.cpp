#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "oracle.hpp"
#include "posedistill/config.hpp"
#include "posedistill/datagen/render.hpp"
#include "posedistill/errors.hpp"
#include "posedistill/evalharness/harness.hpp"
#include "posedistill/io.hpp"

using namespace posedistill;
using namespace posedistill::evalharness;
using datagen::Category;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("posedistill_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_run(int train = 8, int val = 4) {
  RunConfig c;
  c.data.categories = {Category::kBox, Category::kCone, Category::kLShape};
  c.data.train_per_category = train;
  c.data.val_per_category = val;
  c.data.resolution = 8;
  c.data.points = 16;
  c.data.shapes_per_category = 3;
  c.model.teacher_image_hidden = 24;
  c.model.teacher_image_dim = 24;
  c.model.point_hidden = 6;
  c.model.shape_dim = 8;
  c.model.fuse_hidden = {16, 16, 12};
  c.model.fused_dim = 12;
  c.model.student_image_hidden = 24;
  c.model.student_image_dim = 16;
  c.model.student_head_hidden = {16, 16};
  c.train.lr0 = 3e-3;
  c.train.epochs_stage1 = 2;
  c.train.epochs_stage2 = 2;
  c.train.finetune_epochs = 2;
  c.train.batch_size = 8;
  c.seeds = 2;
  c.finalize();
  return c;
}

std::vector<posemath::PosePrediction> oracle_predictions(const datagen::Dataset& ds,
                                                         std::span<const std::size_t> idx) {
  std::vector<posemath::PosePrediction> out;
  for (auto i : idx) {
    out.push_back(posemath::one_hot_prediction(posemath::encode_pose(ds.samples[i].pose)));
  }
  return out;
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return static_cast<std::size_t>(
      std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

}  // namespace

TEST_CASE("ground-truth predictions score perfectly") {
  const auto ds = datagen::generate_dataset(tiny_run(4, 20).data);
  const auto& val = ds.split.val;
  const auto errors = pose_errors(oracle_predictions(ds, val), ds, val);
  const auto r = summarize(ds, val, errors);
  CHECK(r.acc30 == 1.0);
  CHECK(r.mederr < 1e-6);
  CHECK(r.count == val.size());
}

TEST_CASE("uniform random bin predictions match a Monte Carlo oracle") {
  auto cfg = tiny_run(1, 1000).data;
  cfg.categories = {Category::kBox, Category::kCylinder, Category::kCone};
  const auto ds = datagen::generate_dataset(cfg);
  const auto& val = ds.split.val;
  const posemath::AngleBinSpec spec;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<posemath::PosePrediction> preds;
  for (std::size_t n = 0; n < val.size(); ++n) {
    posemath::PosePrediction p;
    for (auto a : posemath::kAllAngles) {
      const auto k = static_cast<std::size_t>(spec.bin_count(a));
      auto& scores = p.bin_scores[static_cast<int>(a)];
      auto& offs = p.offsets[static_cast<int>(a)];
      scores.assign(k, 0.0);
      offs.assign(k, 0.0);
      const auto pick = std::min(k - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(k)));
      scores[pick] = 1.0;
      offs[pick] = unit(rng);
    }
    preds.push_back(p);
  }
  const double measured = posemath::acc30(pose_errors(preds, ds, val));

  // truth uniform over the dataset's ranges, guess uniform over every angle's full range
  const double pi = std::acos(-1.0);
  const auto deg = [pi](double d) { return d * pi / 180.0; };
  std::mt19937_64 mc(5);
  constexpr int kPairs = 1000000;
  int hits = 0;
  for (int i = 0; i < kPairs; ++i) {
    const auto within = [&](double lo, double hi) { return deg(lo + (hi - lo) * unit(mc)); };
    const auto truth = oracle::viewpoint(within(cfg.alpha_min_deg, cfg.alpha_max_deg),
                                         within(cfg.beta_min_deg, cfg.beta_max_deg),
                                         within(cfg.gamma_min_deg, cfg.gamma_max_deg));
    const auto guess = oracle::viewpoint(deg(-180.0 + 360.0 * unit(mc)),
                                         deg(-90.0 + 180.0 * unit(mc)),
                                         deg(-180.0 + 360.0 * unit(mc)));
    hits += oracle::angle_between_deg(truth, guess) < 30.0;
  }
  const double expected = static_cast<double>(hits) / kPairs;
  const double sigma = std::sqrt(expected * (1.0 - expected) / static_cast<double>(val.size()));
  MESSAGE("random Acc30 " << measured << " vs oracle " << expected);
  CHECK(expected > 0.0);
  CHECK(std::abs(measured - expected) < 4.0 * sigma + 1e-3);
}

TEST_CASE("overall metrics are consistent with the per-category breakdown") {
  const auto ds = datagen::generate_dataset(tiny_run(2, 37).data);
  const auto& val = ds.split.val;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> err(0.0, 90.0);
  std::vector<double> errors(val.size());
  for (auto& e : errors) e = err(rng);
  const auto r = summarize(ds, val, errors);
  double weighted = 0.0;
  std::size_t n = 0;
  for (const auto& [name, m] : r.per_category) {
    weighted += m.acc30 * static_cast<double>(m.count);
    n += m.count;
  }
  CHECK(n == r.count);
  CHECK(std::abs(weighted / static_cast<double>(n) - r.acc30) < 1e-12);

  SUBCASE("order of samples does not matter") {
    std::vector<std::size_t> perm(val.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> idx;
    std::vector<double> errs;
    for (auto p : perm) {
      idx.push_back(val[p]);
      errs.push_back(errors[p]);
    }
    const auto s = summarize(ds, idx, errs);
    CHECK(s.acc30 == r.acc30);
    CHECK(s.mederr == r.mederr);
    for (const auto& [name, m] : r.per_category) {
      CHECK(s.per_category.at(name).acc30 == m.acc30);
      CHECK(s.per_category.at(name).mederr == m.mederr);
    }
  }
  CHECK_THROWS_AS(summarize(ds, {}, {}), posemath::EmptyEvaluationError);
}

TEST_CASE("evaluation leaves the model untouched and is repeatable") {
  const auto cfg = tiny_run();
  const auto ds = datagen::generate_dataset(cfg.data);
  models::StudentModel student(cfg.model, 3);
  const auto before = student.store().entries();
  const auto a = evaluate(student, ds, "val");
  const auto b = evaluate(student, ds, "val");
  CHECK(a.to_json() == b.to_json());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(student.store().entries()[i].value == before[i].value);
  }
  CHECK(a.count == ds.split.val.size());
  CHECK_THROWS_AS(split_indices(ds, "test"), std::invalid_argument);
}

TEST_CASE("incompatible checkpoints are rejected") {
  const auto cfg = tiny_run();
  const auto ds = datagen::generate_dataset(cfg.data);
  auto model = cfg.model;
  model.resolution = 16;
  models::StudentModel student(model, 3);
  CHECK_THROWS_AS(evaluate(student, ds, "val"), CompatibilityError);
}

TEST_CASE("ablation table CSV layout") {
  AblationTable t;
  t.rows = {{"full", 1, 0.5, 20.0}, {"full", 2, 0.7, 10.0}, {"full", 3, 0.6, 30.0},
            {"no_kd", 1, 0.25, 40.0}, {"no_kd", 2, 0.75, 50.0}};
  const std::string expected =
      "configuration,seed,acc30,mederr\n"
      "full,1,0.500000,20.000000\n"
      "full,2,0.700000,10.000000\n"
      "full,3,0.600000,30.000000\n"
      "full,mean,0.600000,20.000000\n"
      "full,median,0.600000,20.000000\n"
      "no_kd,1,0.250000,40.000000\n"
      "no_kd,2,0.750000,50.000000\n"
      "no_kd,mean,0.500000,45.000000\n"
      "no_kd,median,0.500000,45.000000\n";
  CHECK(t.to_csv() == expected);
  CHECK(t.median_acc30("full") == doctest::Approx(0.6));
  CHECK(t.acc30_of("no_kd").size() == 2);
  CHECK_THROWS_AS(t.median_acc30("teacher"), ConfigError);
}

TEST_CASE("ablation entries each change one thing") {
  CHECK_THROWS_AS(ablation_entry("nope"), ConfigError);
  const RunConfig base;
  for (const auto& e : ablation_entries()) {
    RunConfig c = base;
    e.apply(c);
    c.finalize();
    const bool changed = c.resolved_text() != base.resolved_text();
    const bool plain = e.name == "teacher" || e.name == "baseline" || e.name == "3daug" ||
                       e.name == "onesidecl" || e.name == "jointcl" || e.name == "full";
    CHECK_MESSAGE(changed != plain, e.name);
  }
  RunConfig c;
  ablation_entry("no_kd").apply(c);
  CHECK(c.train.weights.omega3 == 0.0);
  c = {};
  ablation_entry("no_aug").apply(c);
  CHECK_FALSE(c.train.augment_stage2);
}

TEST_CASE("every strategy runs and the ablation resumes from its outputs") {
  auto cfg = tiny_run(150, 50);
  cfg.train.epochs_stage1 = 1;
  cfg.train.epochs_stage2 = 1;
  cfg.seeds = 1;
  const auto ds = datagen::generate_dataset(cfg.data);
  REQUIRE(ds.samples.size() == 600);
  const auto dir = temp_dir("ablate");
  const std::vector<std::string> names = {"teacher", "baseline", "3daug", "onesidecl", "jointcl"};
  const auto table = run_ablation(names, ds, cfg, dir);
  CHECK(table.rows.size() == 5);
  for (const auto& n : names) {
    CHECK(fs::exists(dir / n / "seed1" / "metrics.json"));
    CHECK(fs::exists(dir / n / "seed1" / "config.txt"));
  }
  CHECK(fs::exists(dir / "config.txt"));
  const std::string csv = io::read_text(dir / "ablation.csv");
  CHECK(csv == table.to_csv());

  const auto stamp = fs::last_write_time(dir / "3daug" / "seed1" / "student.json");
  const auto again = run_ablation(names, ds, cfg, dir);
  CHECK(again.to_csv() == csv);
  CHECK(fs::last_write_time(dir / "3daug" / "seed1" / "student.json") == stamp);
}

TEST_CASE("ablation rows per seed") {
  auto cfg = tiny_run();
  cfg.seeds = 3;
  const auto ds = datagen::generate_dataset(cfg.data);
  const auto table = run_ablation({"baseline", "no_kd"}, ds, cfg, temp_dir("ablate_seeds"));
  CHECK(table.acc30_of("baseline").size() == 3);
  CHECK(table.acc30_of("no_kd").size() == 3);
  std::istringstream csv(table.to_csv());
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 1 + 2 * (3 + 2));
}

TEST_CASE("few-shot protocol") {
  auto cfg = tiny_run(12, 4);
  cfg.data.split_mode = datagen::SplitMode::kFewShot;
  cfg.data.unseen = {Category::kLShape};
  cfg.data.few_shot_k = 3;
  cfg.finalize();
  const auto few = datagen::generate_dataset(cfg.data);

  CHECK_THROWS_AS(run_fewshot(nullptr, cfg, 4, few), ConfigError);
  CHECK_THROWS_AS(run_fewshot(nullptr, cfg, -1, few), ConfigError);
  auto full = cfg;
  full.data.split_mode = datagen::SplitMode::kFullySupervised;
  full.data.unseen.clear();
  CHECK_THROWS_AS(run_fewshot(nullptr, full, 0, datagen::generate_dataset(full.data)),
                  ConfigError);

  const auto r3 = run_fewshot(nullptr, cfg, 3, few);
  CHECK(r3.strategy == "fewshot3");
  CHECK(r3.count == 4);
  CHECK(r3.per_category.size() == 1);
  CHECK(r3.per_category.count("lshape") == 1);

  SUBCASE("k = 0 is the zero-shot protocol") {
    auto zcfg = cfg;
    zcfg.data.split_mode = datagen::SplitMode::kZeroShot;
    const auto zero = datagen::generate_dataset(zcfg.data);
    const auto a = run_fewshot(nullptr, cfg, 0, few);
    const auto b = run_fewshot(nullptr, zcfg, 0, zero);
    CHECK(a.acc30 == b.acc30);
    CHECK(a.mederr == b.mederr);
    CHECK(a.count == b.count);
  }
}

TEST_CASE("visualizations") {
  auto cfg = tiny_run(2, 3);
  cfg.data.noise_sigma = 0.0;
  const auto ds = datagen::generate_dataset(cfg.data);
  const auto& val = ds.split.val;

  const auto dir = temp_dir("viz");
  write_visualizations(ds, val, oracle_predictions(ds, val), dir);
  CHECK(count_files(dir) == 3 * val.size());
  for (auto i : val) {
    const auto stem = std::to_string(i);
    REQUIRE(fs::exists(dir / (stem + "_input.pgm")));
    CHECK(io::read_file(dir / (stem + "_gt.pgm")) == io::read_file(dir / (stem + "_pred.pgm")));
  }

  const auto none = temp_dir("viz_none");
  fs::remove_all(none);
  models::StudentModel student(cfg.model, 1);
  visualize(student, ds, 0, none);
  CHECK(count_files(none) == 0);
  visualize(student, ds, 2, none);
  CHECK(count_files(none) == 6);
  CHECK_THROWS_AS(write_visualizations(ds, val, {}, none), std::invalid_argument);
}
