#include "posedistill/evalharness/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "posedistill/errors.hpp"
#include "posedistill/io.hpp"
#include "posedistill/parallel.hpp"

namespace posedistill::evalharness {

using trainer::Strategy;
using nlohmann::json;

namespace {

void no_change(RunConfig&) {}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_config_snapshot(const std::filesystem::path& dir, const RunConfig& config) {
  std::filesystem::create_directories(dir);
  io::write_text(dir / "config.txt", config.resolved_text());
}

void write_report(const std::filesystem::path& dir, const MetricsReport& r) {
  io::write_text(dir / "metrics.json", r.to_json().dump(2) + "\n");
}

MetricsReport read_report(const std::filesystem::path& path) {
  try {
    const json j = json::parse(io::read_text(path));
    MetricsReport r;
    r.model_kind = j.at("model").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.count = j.at("count").get<std::size_t>();
    r.acc30 = j.at("acc30").get<double>();
    r.mederr = j.at("mederr").get<double>();
    for (const auto& [name, m] : j.at("per_category").items()) {
      r.per_category[name] = {m.at("count").get<std::size_t>(), m.at("acc30").get<double>(),
                              m.at("mederr").get<double>()};
    }
    return r;
  } catch (const json::exception& e) {
    throw io::FormatError("malformed metrics file " + path.string() + ": " + e.what());
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

const std::vector<AblationEntry>& ablation_entries() {
  static const std::vector<AblationEntry> entries = {
      {"teacher", "multi-modal teacher alone", Strategy::kTeacherOnly, no_change},
      {"baseline", "image-only student, pose loss only", Strategy::kStudentBaseline, no_change},
      {"3daug", "full method", Strategy::kThreeDAugPose, no_change},
      {"onesidecl", "InfoNCE toward the frozen fused embedding replaces L_KL",
       Strategy::kOneSideCL, no_change},
      {"jointcl", "teacher and student trained jointly, then output-guided fine-tuning",
       Strategy::kJointCL, no_change},
      {"full", "full method", Strategy::kThreeDAugPose, no_change},
      {"no_cl_kl", "no contrastive learner and no embedding distillation",
       Strategy::kThreeDAugPose,
       [](RunConfig& c) {
         c.train.weights.kappa2 = 0.0;
         c.train.weights.omega2 = 0.0;
       },
       "no_cl"},
      {"no_kd", "no output distillation", Strategy::kThreeDAugPose,
       [](RunConfig& c) { c.train.weights.omega3 = 0.0; }},
      {"no_aug", "no pose-related augmentation", Strategy::kThreeDAugPose,
       [](RunConfig& c) { c.train.augment_stage2 = false; }},
      {"narrow_student", "student image encoder at half width", Strategy::kThreeDAugPose,
       [](RunConfig& c) {
         c.model.student_image_hidden = std::max(1, c.model.student_image_hidden / 2);
         c.model.student_image_dim = std::max(1, c.model.student_image_dim / 2);
       }},
  };
  return entries;
}

const AblationEntry& ablation_entry(const std::string& name) {
  for (const auto& e : ablation_entries()) {
    if (e.name == name) return e;
  }
  throw ConfigError("unknown ablation entry '" + name + "'");
}

const models::TeacherModel& TeacherCache::get(const datagen::Dataset& data,
                                              const RunConfig& config,
                                              const std::string& variant) {
  RunConfig tc = config;
  if (variant == "no_cl") tc.train.weights.kappa2 = 0.0;
  const std::string key = variant + "/seed" + std::to_string(tc.train.seed);
  std::lock_guard lock(mu_);
  if (auto it = loaded_.find(key); it != loaded_.end()) return *it->second;
  const auto dir = dir_ / key;
  if (std::filesystem::exists(dir / "teacher.json")) {
    loaded_[key] = std::make_unique<models::TeacherModel>(models::load_teacher(dir, "teacher"));
    return *loaded_[key];
  }
  write_config_snapshot(dir, tc);
  trainer::RunOptions opts;
  opts.out_dir = dir;
  opts.config_hash = tc.hash();
  auto result = trainer::train_teacher(data, tc.model, tc.train, opts);
  result.model.save(dir, "teacher",
                    {{"config_hash", tc.hash()},
                     {"seed", tc.train.seed},
                     {"selected_epoch", result.selected.epoch}});
  loaded_[key] = std::make_unique<models::TeacherModel>(std::move(result.model));
  return *loaded_[key];
}

MetricsReport run_entry(const AblationEntry& entry, const datagen::Dataset& data,
                        const RunConfig& base, const std::filesystem::path& out_dir,
                        TeacherCache& teachers) {
  if (std::filesystem::exists(out_dir / "metrics.json")) return read_report(out_dir / "metrics.json");
  RunConfig config = base;
  entry.apply(config);
  config.finalize();
  write_config_snapshot(out_dir, config);
  trainer::RunOptions opts;
  opts.out_dir = out_dir;
  opts.config_hash = config.hash();
  const json meta = {{"config_hash", config.hash()},
                     {"seed", config.train.seed},
                     {"strategy", entry.name}};

  MetricsReport report;
  switch (entry.strategy) {
    case Strategy::kTeacherOnly: {
      models::TeacherModel teacher = teachers.get(data, config, entry.teacher_variant);
      teacher.save(out_dir, "teacher", meta);
      report = evaluate(teacher, data, "val");
      break;
    }
    case Strategy::kStudentBaseline: {
      auto r = trainer::train_student(data, nullptr, config.model, config.train, entry.strategy,
                                      opts);
      r.model.save(out_dir, "student", meta);
      report = evaluate(r.model, data, "val");
      break;
    }
    case Strategy::kThreeDAugPose:
    case Strategy::kOneSideCL: {
      const auto& teacher = teachers.get(data, config, entry.teacher_variant);
      auto r = trainer::train_student(data, &teacher, config.model, config.train, entry.strategy,
                                      opts);
      r.model.save(out_dir, "student", meta);
      report = evaluate(r.model, data, "val");
      break;
    }
    case Strategy::kJointCL: {
      auto r = trainer::train_joint(data, config.model, config.train, opts);
      r.teacher.save(out_dir, "teacher", meta);
      r.student.model.save(out_dir, "student", meta);
      report = evaluate(r.student.model, data, "val");
      break;
    }
  }
  report.strategy = entry.name;
  report.seed = config.train.seed;
  report.config_hash = config.hash();
  write_report(out_dir, report);
  return report;
}

MetricsReport run_strategy(Strategy strategy, const datagen::Dataset& data,
                           const RunConfig& config, const std::filesystem::path& out_dir,
                           TeacherCache& teachers) {
  return run_entry(ablation_entry(std::string(trainer::strategy_name(strategy))), data, config,
                   out_dir, teachers);
}

std::string AblationTable::to_csv() const {
  std::string out = "configuration,seed,acc30,mederr\n";
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.configuration) == order.end()) {
      order.push_back(r.configuration);
    }
  }
  for (const auto& name : order) {
    std::vector<double> acc, med;
    for (const auto& r : rows) {
      if (r.configuration != name) continue;
      out += name + "," + std::to_string(r.seed) + "," + fmt(r.acc30) + "," + fmt(r.mederr) + "\n";
      acc.push_back(r.acc30);
      med.push_back(r.mederr);
    }
    double ma = 0.0, mm = 0.0;
    for (std::size_t i = 0; i < acc.size(); ++i) {
      ma += acc[i];
      mm += med[i];
    }
    out += name + ",mean," + fmt(ma / static_cast<double>(acc.size())) + "," +
           fmt(mm / static_cast<double>(med.size())) + "\n";
    out += name + ",median," + fmt(median(acc)) + "," + fmt(median(med)) + "\n";
  }
  return out;
}

std::vector<double> AblationTable::acc30_of(const std::string& configuration) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.configuration == configuration) out.push_back(r.acc30);
  }
  return out;
}

double AblationTable::median_acc30(const std::string& configuration) const {
  const auto v = acc30_of(configuration);
  if (v.empty()) throw ConfigError("no rows for configuration '" + configuration + "'");
  return median(v);
}

AblationTable run_ablation(const std::vector<std::string>& names, const datagen::Dataset& data,
                           const RunConfig& config, const std::filesystem::path& out_dir) {
  std::vector<const AblationEntry*> entries;
  for (const auto& n : names) entries.push_back(&ablation_entry(n));
  std::filesystem::create_directories(out_dir);
  write_config_snapshot(out_dir, config);
  TeacherCache teachers(out_dir / "teachers");

  struct Job {
    const AblationEntry* entry;
    RunConfig config;
  };
  std::vector<Job> jobs;
  for (int s = 0; s < config.seeds; ++s) {
    for (const auto* e : entries) {
      RunConfig c = config;
      c.train.seed = config.train.seed + static_cast<std::uint64_t>(s);
      jobs.push_back({e, c});
    }
  }
  // teachers first, so student jobs never wait on one another
  std::vector<std::pair<std::string, RunConfig>> teacher_jobs;
  std::set<std::string> queued;
  for (const auto& j : jobs) {
    if (j.entry->strategy == Strategy::kStudentBaseline || j.entry->strategy == Strategy::kJointCL) {
      continue;
    }
    const std::string key = j.entry->teacher_variant + "/" + std::to_string(j.config.train.seed);
    if (queued.insert(key).second) teacher_jobs.emplace_back(j.entry->teacher_variant, j.config);
  }
  parallel_for(teacher_jobs.size(), [&](std::size_t i) {
    teachers.get(data, teacher_jobs[i].second, teacher_jobs[i].first);
  });

  std::vector<MetricsReport> reports(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& j = jobs[i];
    reports[i] = run_entry(*j.entry, data, j.config,
                           out_dir / j.entry->name / ("seed" + std::to_string(j.config.train.seed)),
                           teachers);
  });

  AblationTable table;
  for (const auto* e : entries) {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].entry != e) continue;
      table.rows.push_back({e->name, jobs[i].config.train.seed, reports[i].acc30,
                            reports[i].mederr});
    }
  }
  io::write_text(out_dir / "ablation.csv", table.to_csv());
  return table;
}

MetricsReport run_fewshot(const models::TeacherModel* teacher_in, const RunConfig& config, int k,
                          const datagen::Dataset& data) {
  if (data.split.mode == datagen::SplitMode::kFullySupervised) {
    throw ConfigError("few-shot evaluation needs a zero_shot or few_shot dataset");
  }
  if (k < 0 || k > data.split.k) {
    throw ConfigError("k = " + std::to_string(k) + " exceeds the " + std::to_string(data.split.k) +
                      " labeled samples per unseen category in the dataset");
  }
  const std::set<datagen::Category> unseen(data.split.unseen.begin(), data.split.unseen.end());
  std::vector<std::size_t> seen_train, shots;
  std::map<datagen::Category, int> taken;
  for (std::size_t i : data.split.train) {
    const auto c = data.samples[i].category;
    if (!unseen.count(c)) {
      seen_train.push_back(i);
    } else if (taken[c] < k) {
      shots.push_back(i);
      ++taken[c];
    }
  }
  trainer::RunOptions seen_only;
  seen_only.train_indices = seen_train;

  std::optional<models::TeacherModel> own_teacher;
  if (!teacher_in) {
    own_teacher.emplace(
        trainer::train_teacher(data, config.model, config.train, seen_only).model);
    teacher_in = &*own_teacher;
  }
  auto student = trainer::train_student(data, teacher_in, config.model, config.train,
                                        Strategy::kThreeDAugPose, seen_only);
  if (!shots.empty() && config.train.finetune_epochs > 0) {
    trainer::RunOptions tune;
    tune.train_indices = shots;
    tune.select_indices = std::vector<std::size_t>{};
    tune.epochs = config.train.finetune_epochs;
    tune.lr0 = config.train.lr0 * config.train.finetune_lr_factor;
    tune.augment = false;
    student = trainer::train_student(data, nullptr, config.model, config.train,
                                     Strategy::kStudentBaseline, tune, &student.model);
  }
  MetricsReport r = evaluate(student.model, data, "val");
  r.strategy = "fewshot" + std::to_string(k);
  r.seed = config.train.seed;
  r.config_hash = config.hash();
  return r;
}

void write_visualizations(const datagen::Dataset& data, std::span<const std::size_t> indices,
                          const std::vector<posemath::PosePrediction>& predictions,
                          const std::filesystem::path& out_dir) {
  if (predictions.size() != indices.size()) {
    throw std::invalid_argument("write_visualizations: one prediction per sample required");
  }
  if (indices.empty()) return;
  std::filesystem::create_directories(out_dir);
  const int res = data.config.resolution;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const datagen::Sample& s = data.samples[indices[i]];
    const std::string stem = std::to_string(indices[i]);
    datagen::write_pgm(out_dir / (stem + "_input.pgm"), s.image);
    datagen::write_pgm(out_dir / (stem + "_gt.pgm"), datagen::render(s.shape, s.pose, res));
    datagen::write_pgm(out_dir / (stem + "_pred.pgm"),
                       datagen::render(s.shape, posemath::decode_pose(predictions[i]), res));
  }
}

}  // namespace posedistill::evalharness
