// posedistill: dataset generation, two-stage training, evaluation and ablations.
//
// Exit codes: 0 ok, 2 configuration, 3 I/O or malformed file, 4 incompatible
// artifacts, 5 numerical divergence.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "posedistill/config.hpp"
#include "posedistill/datagen/dataset.hpp"
#include "posedistill/diff/bundle.hpp"
#include "posedistill/errors.hpp"
#include "posedistill/evalharness/harness.hpp"
#include "posedistill/io.hpp"

namespace fs = std::filesystem;
using namespace posedistill;
using trainer::Strategy;

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kCompat = 4, kNumeric = 5 };

struct Checkpoint {
  fs::path dir;
  std::string stem;
};

// Accepts `<dir>/<stem>.json` or a directory holding student.json or teacher.json.
Checkpoint resolve_checkpoint(const fs::path& p, const char* prefer = "student") {
  if (p.extension() == ".json") return {p.parent_path(), p.stem().string()};
  for (const std::string& stem : {std::string(prefer), std::string("student"), std::string("teacher")}) {
    if (fs::exists(p / (stem + ".json"))) return {p, stem};
  }
  throw io::IoError("no checkpoint found at " + p.string());
}

RunConfig run_config(const std::string& path) {
  return path.empty() ? load_config_or_default({}) : load_config(path);
}

void prepare_out(const fs::path& out, const RunConfig& config) {
  fs::create_directories(out);
  io::write_text(out / "config.txt", config.resolved_text());
}

void print_manifest(const datagen::Dataset& ds, std::uint32_t crc) {
  std::printf("samples %zu  resolution %d  points %d  split %s\n", ds.samples.size(),
              ds.config.resolution, ds.config.points,
              std::string(datagen::split_mode_name(ds.split.mode)).c_str());
  std::printf("train %zu  val %zu  select %zu  crc32 %08x\n", ds.split.train.size(),
              ds.split.val.size(), ds.split.select.size(), crc);
}

void print_report(const evalharness::MetricsReport& r) {
  std::printf("%s  %s  n=%zu  Acc30 %.4f  MedErr %.2f\n", r.model_kind.c_str(), r.split.c_str(),
              r.count, r.acc30, r.mederr);
  for (const auto& [name, m] : r.per_category) {
    std::printf("  %-10s n=%-5zu Acc30 %.4f  MedErr %.2f\n", name.c_str(), m.count, m.acc30,
                m.mederr);
  }
}

// Training uses the dataset's own settings; the run config supplies the rest.
RunConfig config_for(const std::string& config_path, const datagen::Dataset& ds) {
  RunConfig config = run_config(config_path);
  config.data = ds.config;
  config.finalize();
  return config;
}

int cmd_generate(const std::string& config_path, const fs::path& out) {
  RunConfig config = run_config(config_path);
  config.finalize();
  const auto ds = datagen::generate_dataset(config.data);
  const auto crc = datagen::write_dataset(out, ds);
  io::write_text(out / "config.txt", config.resolved_text());
  print_manifest(ds, crc);
  return kOk;
}

int cmd_train(const std::string& stage, const std::string& strategy_name,
              const fs::path& data_dir, const std::string& config_path,
              const std::string& teacher_ckpt, const fs::path& out) {
  if (stage != "teacher" && stage != "student") {
    throw ConfigError("--stage must be teacher or student");
  }
  Strategy strategy = stage == "teacher" ? Strategy::kTeacherOnly : Strategy::kThreeDAugPose;
  if (!strategy_name.empty()) strategy = trainer::parse_strategy(strategy_name);
  if (stage == "teacher" && strategy != Strategy::kTeacherOnly && strategy != Strategy::kJointCL) {
    throw ConfigError("--stage teacher accepts --strategy teacher or jointcl");
  }
  if (stage == "student" && strategy == Strategy::kTeacherOnly) {
    throw ConfigError("--stage student needs a student strategy");
  }
  if (stage == "student" && strategy != Strategy::kStudentBaseline && teacher_ckpt.empty()) {
    throw ConfigError("--stage student --strategy " + strategy_name + " requires --teacher-ckpt");
  }
  // checked before any heavy work so a bad invocation fails fast
  const auto ds = datagen::read_dataset(data_dir);
  const RunConfig config = config_for(config_path, ds);
  prepare_out(out, config);
  trainer::RunOptions opts;
  opts.out_dir = out;
  opts.config_hash = config.hash();
  opts.on_epoch = [](const trainer::EpochLog& e) {
    std::printf("%s epoch %d  loss %.5f", e.stage.c_str(), e.epoch, e.loss);
    if (e.val_acc30) std::printf("  val Acc30 %.4f MedErr %.2f", *e.val_acc30, *e.val_mederr);
    std::printf("%s\n", e.best ? "  *" : "");
    std::fflush(stdout);
  };
  nlohmann::json meta = {{"config_hash", config.hash()},
                         {"seed", config.train.seed},
                         {"strategy", std::string(trainer::strategy_name(strategy))}};

  if (stage == "teacher" && strategy == Strategy::kJointCL) {
    auto r = trainer::train_joint(ds, config.model, config.train, opts);
    r.teacher.save(out, "teacher", meta);
    r.student.model.save(out, "student", meta);
    print_report(evalharness::evaluate(r.student.model, ds, "val"));
    return kOk;
  }
  if (stage == "teacher") {
    auto r = trainer::train_teacher(ds, config.model, config.train, opts);
    meta["selected_epoch"] = r.selected.epoch;
    r.model.save(out, "teacher", meta);
    print_report(evalharness::evaluate(r.model, ds, "val"));
    return kOk;
  }
  std::optional<models::TeacherModel> teacher;
  std::optional<models::StudentModel> init;
  if (!teacher_ckpt.empty()) {
    const auto ck = resolve_checkpoint(teacher_ckpt, "teacher");
    teacher.emplace(models::load_teacher(ck.dir, "teacher"));
    evalharness::check_compatible(teacher->config(), ds);
    // a joint run leaves its stage-1 student next to the teacher
    if (strategy == Strategy::kJointCL && fs::exists(ck.dir / "student.json")) {
      init.emplace(models::load_student(ck.dir, "student"));
    }
  }
  auto r = trainer::train_student(ds, teacher ? &*teacher : nullptr, config.model, config.train,
                                  strategy, opts, init ? &*init : nullptr);
  meta["selected_epoch"] = r.selected.epoch;
  r.model.save(out, "student", meta);
  print_report(evalharness::evaluate(r.model, ds, "val"));
  return kOk;
}

int cmd_eval(const std::string& ckpt, const fs::path& data_dir, const std::string& split,
             std::string report_path) {
  const auto ck = resolve_checkpoint(ckpt);
  const auto ds = datagen::read_dataset(data_dir);
  const auto meta = diff::read_bundle(ck.dir, ck.stem).meta;
  evalharness::MetricsReport r;
  if (models::saved_kind(ck.dir, ck.stem) == models::ModelKind::kTeacher) {
    auto m = models::load_teacher(ck.dir, ck.stem);
    r = evalharness::evaluate(m, ds, split);
  } else {
    auto m = models::load_student(ck.dir, ck.stem);
    r = evalharness::evaluate(m, ds, split);
  }
  r.strategy = meta.value("strategy", std::string());
  r.seed = meta.value("seed", std::uint64_t{0});
  r.config_hash = meta.value("config_hash", std::string());
  if (report_path.empty()) report_path = (ck.dir / "metrics.json").string();
  io::write_text(report_path, r.to_json().dump(2) + "\n");
  print_report(r);
  return kOk;
}

datagen::Dataset dataset_for_ablation(const RunConfig& config, const std::string& data_dir,
                                      const fs::path& out) {
  if (!data_dir.empty()) return datagen::read_dataset(data_dir);
  const fs::path dir = out / "data";
  if (fs::exists(dir)) {
    auto ds = datagen::read_dataset(dir);
    if (ds.config == config.data) return ds;
    throw CompatibilityError(dir.string() + " was generated from a different dataset config");
  }
  auto ds = datagen::generate_dataset(config.data);
  datagen::write_dataset(dir, ds);
  return ds;
}

int cmd_ablate(const std::string& config_path, int seeds, const std::string& data_dir,
               const std::vector<std::string>& only, const fs::path& out) {
  RunConfig config = run_config(config_path);
  if (seeds > 0) config.seeds = seeds;
  if (!only.empty()) config.ablation = only;
  config.finalize();
  fs::create_directories(out);
  const auto ds = dataset_for_ablation(config, data_dir, out);
  config.data = ds.config;
  config.finalize();
  const auto table = evalharness::run_ablation(config.ablation, ds, config, out);
  std::cout << table.to_csv();
  return kOk;
}

int cmd_fewshot(const std::string& config_path, const fs::path& data_dir, int k,
                const std::string& teacher_ckpt, const fs::path& out) {
  const auto ds = datagen::read_dataset(data_dir);
  const RunConfig config = config_for(config_path, ds);
  prepare_out(out, config);
  std::optional<models::TeacherModel> teacher;
  if (!teacher_ckpt.empty()) {
    const auto ck = resolve_checkpoint(teacher_ckpt, "teacher");
    teacher.emplace(models::load_teacher(ck.dir, "teacher"));
  }
  const auto r = evalharness::run_fewshot(teacher ? &*teacher : nullptr, config, k, ds);
  io::write_text(out / "metrics.json", r.to_json().dump(2) + "\n");
  print_report(r);
  return kOk;
}

int cmd_visualize(const std::string& ckpt, const fs::path& data_dir, int n, const fs::path& out) {
  if (n < 0) throw ConfigError("-n must be non-negative");
  const auto ck = resolve_checkpoint(ckpt);
  const auto ds = datagen::read_dataset(data_dir);
  if (models::saved_kind(ck.dir, ck.stem) == models::ModelKind::kTeacher) {
    auto m = models::load_teacher(ck.dir, ck.stem);
    evalharness::visualize(m, ds, static_cast<std::size_t>(n), out);
  } else {
    auto m = models::load_student(ck.dir, ck.stem);
    evalharness::visualize(m, ds, static_cast<std::size_t>(n), out);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category-agnostic pose estimation with 3D-augmented distillation"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, stage, strategy, teacher_ckpt, ckpt,
      split = "val", report;
  int seeds = 0, k = 0, n = 8;
  std::vector<std::string> only;

  auto* gen = app.add_subcommand("generate", "render a synthetic dataset");
  gen->add_option("--config", config_path, "run config file (defaults when omitted)");
  gen->add_option("--out", out_dir, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a teacher or a student");
  train->add_option("--stage", stage, "teacher or student")->required();
  train->add_option("--strategy", strategy, "teacher, baseline, 3daug, onesidecl or jointcl");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--config", config_path, "run config file");
  train->add_option("--teacher-ckpt", teacher_ckpt, "trained teacher (student stage)");
  train->add_option("--out", out_dir, "run directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint directory or .json manifest")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--split", split, "train, val or select");
  eval->add_option("--report", report, "metrics.json path (default: next to the checkpoint)");

  auto* ablate = app.add_subcommand("ablate", "strategy comparison and ablation table");
  ablate->add_option("--config", config_path, "run config file");
  ablate->add_option("--seeds", seeds, "number of seeds (overrides the config)");
  ablate->add_option("--data", data_dir, "existing dataset (generated into OUT/data otherwise)");
  ablate->add_option("--only", only, "subset of configurations");
  ablate->add_option("--out", out_dir, "output directory")->required();

  auto* fewshot = app.add_subcommand("fewshot", "zero/few-shot protocol on unseen categories");
  fewshot->add_option("--config", config_path, "run config file");
  fewshot->add_option("--data", data_dir, "zero_shot or few_shot dataset")->required();
  fewshot->add_option("-k", k, "labeled samples per unseen category");
  fewshot->add_option("--teacher-ckpt", teacher_ckpt, "teacher trained on seen categories");
  fewshot->add_option("--out", out_dir, "output directory")->required();

  auto* vis = app.add_subcommand("visualize", "render inputs, truth and predictions as PGM");
  vis->add_option("--ckpt", ckpt, "checkpoint")->required();
  vis->add_option("--data", data_dir, "dataset directory")->required();
  vis->add_option("-n", n, "number of validation samples");
  vis->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_generate(config_path, out_dir);
    if (*train) return cmd_train(stage, strategy, data_dir, config_path, teacher_ckpt, out_dir);
    if (*eval) return cmd_eval(ckpt, data_dir, split, report);
    if (*ablate) return cmd_ablate(config_path, seeds, data_dir, only, out_dir);
    if (*fewshot) return cmd_fewshot(config_path, data_dir, k, teacher_ckpt, out_dir);
    if (*vis) return cmd_visualize(ckpt, data_dir, n, out_dir);
  } catch (const trainer::DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kNumeric;
  } catch (const CompatibilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCompat;
  } catch (const io::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const io::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
