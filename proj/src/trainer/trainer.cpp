#include "posedistill/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "posedistill/diff/bundle.hpp"
#include "posedistill/diff/ops.hpp"
#include "posedistill/errors.hpp"
#include "posedistill/evalharness/evaluate.hpp"
#include "posedistill/io.hpp"
#include "posedistill/rng.hpp"

namespace posedistill::trainer {

using diff::Tensor;
using diff::Var;
using nlohmann::json;

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kTeacherOnly:
      return "teacher";
    case Strategy::kStudentBaseline:
      return "baseline";
    case Strategy::kThreeDAugPose:
      return "3daug";
    case Strategy::kOneSideCL:
      return "onesidecl";
    case Strategy::kJointCL:
      return "jointcl";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : kAllStrategies) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (expected teacher, baseline, 3daug, onesidecl or jointcl)");
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive");
  if (epochs_stage1 < 1 || epochs_stage2 < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (InfoNCE needs negatives)");
  if (finetune_epochs < 0) throw ConfigError("finetune_epochs must be >= 0");
  if (!(finetune_lr_factor > 0.0)) throw ConfigError("finetune_lr_factor must be positive");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (!(augment.flip_prob >= 0.0 && augment.flip_prob <= 1.0)) {
    throw ConfigError("aug_flip_prob must be in [0, 1]");
  }
  if (!(augment.max_rotation_deg >= 0.0 && augment.max_rotation_deg <= 180.0)) {
    throw ConfigError("aug_rotation_deg must be in [0, 180]");
  }
  weights.validate();
}

double lr_at(int epoch, int epochs, double lr0) {
  const int switch_epoch = (4 * epochs + 4) / 5;  // ceil(0.8 * epochs)
  return epoch < switch_epoch ? lr0 : lr0 / 10.0;
}

json EpochLog::to_json() const {
  json j = {{"stage", stage}, {"epoch", epoch}, {"lr", lr}, {"loss", loss},
            {"pos", pos},     {"cl", cl},       {"kl", kl}, {"kd", kd}};
  j["val_acc30"] = val_acc30 ? json(*val_acc30) : json(nullptr);
  j["val_mederr"] = val_mederr ? json(*val_mederr) : json(nullptr);
  j["best"] = best;
  return j;
}

namespace {

EpochLog epoch_log_from_json(const json& j) {
  EpochLog e;
  e.stage = j.at("stage").get<std::string>();
  e.epoch = j.at("epoch").get<int>();
  e.lr = j.at("lr").get<double>();
  e.loss = j.at("loss").get<double>();
  e.pos = j.at("pos").get<double>();
  e.cl = j.at("cl").get<double>();
  e.kl = j.at("kl").get<double>();
  e.kd = j.at("kd").get<double>();
  if (!j.at("val_acc30").is_null()) e.val_acc30 = j.at("val_acc30").get<double>();
  if (!j.at("val_mederr").is_null()) e.val_mederr = j.at("val_mederr").get<double>();
  e.best = j.at("best").get<bool>();
  return e;
}

struct Batch {
  std::vector<std::size_t> indices;
  Tensor images;
  Tensor clouds;
  std::vector<posemath::PoseTarget> targets;
};

Batch build_batch(const datagen::Dataset& data, std::span<const std::size_t> indices, bool augment,
                  const AugmentConfig& aug, std::mt19937_64& rng, bool with_clouds) {
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  const auto p = static_cast<std::size_t>(data.config.resolution * data.config.resolution);
  b.images = Tensor({indices.size(), p});
  b.targets.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const datagen::Sample& s = data.samples[indices[r]];
    const float* px = s.image.pixels.data();
    posemath::EulerPose pose = s.pose;
    AugmentedView view;
    if (augment) {
      view = apply_augmentation(s, draw_augmentation(rng, aug), aug.mode, data.config.noise_sigma);
      px = view.image.pixels.data();
      pose = view.pose;
    }
    std::copy(px, px + p, b.images.data().begin() + static_cast<std::ptrdiff_t>(r * p));
    b.targets.push_back(posemath::encode_pose(pose));
  }
  if (with_clouds) b.clouds = evalharness::clouds_tensor(data, indices);
  return b;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order,
                                                   int batch_size) {
  std::vector<std::vector<std::size_t>> out;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t begin = 0; begin < order.size(); begin += bs) {
    const std::size_t end = std::min(order.size(), begin + bs);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // a single leftover sample cannot form a contrastive batch; fold it in
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

bool better(const Selection& candidate, const Selection& best) {
  if (best.epoch < 0) return true;
  if (candidate.acc30 != best.acc30) return candidate.acc30 > best.acc30;
  return candidate.mederr < best.mederr;
}

// Splits a combined gradient map by parameter-name prefix.
diff::Gradients grads_with_prefix(const diff::Gradients& all, const std::string& prefix) {
  diff::Gradients out;
  for (const auto& [name, g] : all) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.emplace(name, g);
  }
  return out;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw io::FormatError("training state has an unreadable RNG state");
}

struct StepParts {
  double total = 0.0;
  double pos = 0.0;
  double cl = 0.0;
  double kl = 0.0;
  double kd = 0.0;
};

StepParts to_step(const losses::LossParts& p) {
  return {p.total.value().item(), p.pos, p.cl, p.kl, p.kd};
}

/// Epoch loop shared by every stage: shuffling, schedule, validation,
/// best-weight tracking, logging and resumable state.
class StageRunner {
 public:
  using StepFn = std::function<StepParts(const std::vector<std::size_t>&, double lr,
                                         std::mt19937_64& rng)>;
  using ValidateFn = std::function<Selection()>;

  StageRunner(std::string stage, std::vector<diff::ParamStore*> stores, const RunOptions& options,
              std::uint64_t seed)
      : stage_(std::move(stage)),
        stores_(std::move(stores)),
        options_(options),
        rng_(derive_seed(seed, fnv1a64(stage_))) {}

  void run(const std::vector<std::size_t>& train, int epochs, double lr0, int eval_every,
           int batch_size, const StepFn& step, const ValidateFn& validate) {
    if (train.size() < 2) throw ConfigError(stage_ + ": need at least 2 training samples");
    int start = 0;
    if (!options_.out_dir.empty()) {
      load_other_stage_logs();
      if (options_.resume) start = try_resume();
    }
    for (int epoch = start; epoch < epochs; ++epoch) {
      if (options_.stop_after && epoch >= *options_.stop_after) break;
      EpochLog entry;
      entry.stage = stage_;
      entry.epoch = epoch;
      entry.lr = lr_at(epoch, epochs, lr0);
      std::vector<std::size_t> order = train;
      std::shuffle(order.begin(), order.end(), rng_);
      StepParts sum;
      std::size_t seen = 0;
      for (const auto& batch : make_batches(order, batch_size)) {
        StepParts p;
        try {
          p = step(batch, entry.lr, rng_);
        } catch (const diff::NumericalError& e) {
          diverged(e.what(), epoch, batch);
        }
        if (!std::isfinite(p.total)) diverged("non-finite loss", epoch, batch);
        const auto w = static_cast<double>(batch.size());
        sum.total += w * p.total;
        sum.pos += w * p.pos;
        sum.cl += w * p.cl;
        sum.kl += w * p.kl;
        sum.kd += w * p.kd;
        seen += batch.size();
      }
      const double n = static_cast<double>(seen);
      entry.loss = sum.total / n;
      entry.pos = sum.pos / n;
      entry.cl = sum.cl / n;
      entry.kl = sum.kl / n;
      entry.kd = sum.kd / n;
      if (validate && ((epoch + 1) % eval_every == 0 || epoch + 1 == epochs)) {
        Selection s = validate();
        s.epoch = epoch;
        entry.val_acc30 = s.acc30;
        entry.val_mederr = s.mederr;
        if (better(s, selected_)) {
          selected_ = s;
          best_.clear();
          for (const auto* st : stores_) best_.push_back(*st);
          entry.best = true;
        }
      }
      log_.push_back(entry);
      if (options_.on_epoch) options_.on_epoch(entry);
      if (!options_.out_dir.empty()) persist(epoch + 1);
    }
  }

  /// Copies the selected weights into the stores (final weights when no
  /// validation ran).
  Selection finish() {
    if (selected_.epoch >= 0) {
      for (std::size_t k = 0; k < stores_.size(); ++k) stores_[k]->copy_values_from(best_[k]);
    } else if (!log_.empty()) {
      selected_.epoch = log_.back().epoch;
    }
    return selected_;
  }

  const std::vector<EpochLog>& log() const { return log_; }

 private:
  std::filesystem::path log_path() const { return options_.out_dir / "train.log.jsonl"; }
  std::string state_stem() const { return stage_ + "_state"; }

  void load_other_stage_logs() {
    other_logs_.clear();
    if (!std::filesystem::exists(log_path())) return;
    std::istringstream in(io::read_text(log_path()));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        if (json::parse(line).at("stage").get<std::string>() != stage_) other_logs_.push_back(line);
      } catch (const json::exception&) {
        throw io::FormatError("malformed line in " + log_path().string());
      }
    }
  }

  void write_log() const {
    std::string text;
    for (const auto& l : other_logs_) text += l + "\n";
    for (const auto& e : log_) text += e.to_json().dump() + "\n";
    io::write_text(log_path(), text);
  }

  void persist(int epochs_done) {
    diff::TensorBundle b;
    for (const auto* st : stores_) diff::save_store(*st, b, true);
    if (selected_.epoch >= 0) {
      for (const auto& st : best_) {
        for (const auto& e : st.entries()) b.put("best/" + e.name, e.value);
      }
    }
    json steps = b.meta.value("adam_steps", json::object());
    json logs = json::array();
    for (const auto& e : log_) logs.push_back(e.to_json());
    b.meta = {{"stage", stage_},
              {"epochs_done", epochs_done},
              {"config_hash", options_.config_hash},
              {"rng", rng_state(rng_)},
              {"selected", {{"epoch", selected_.epoch},
                            {"acc30", selected_.acc30},
                            {"mederr", selected_.mederr}}},
              {"log", logs},
              {"adam_steps", steps}};
    diff::write_bundle(options_.out_dir, state_stem(), b);
    write_log();
  }

  int try_resume() {
    if (!std::filesystem::exists(options_.out_dir / (state_stem() + ".json"))) return 0;
    diff::TensorBundle b = diff::read_bundle(options_.out_dir, state_stem());
    try {
      if (b.meta.at("config_hash").get<std::string>() != options_.config_hash) {
        throw CompatibilityError("training state in " + options_.out_dir.string() +
                                 " was written by a different configuration");
      }
      if (b.meta.at("stage").get<std::string>() != stage_) {
        throw CompatibilityError("training state belongs to another stage");
      }
      for (auto* st : stores_) diff::load_store(*st, b, true);
      set_rng_state(rng_, b.meta.at("rng").get<std::string>());
      const json& sel = b.meta.at("selected");
      selected_ = {sel.at("epoch").get<int>(), sel.at("acc30").get<double>(),
                   sel.at("mederr").get<double>()};
      best_.clear();
      if (selected_.epoch >= 0) {
        for (const auto* st : stores_) {
          diff::ParamStore copy = *st;
          for (auto& e : copy.entries()) e.value = b.get("best/" + e.name);
          best_.push_back(std::move(copy));
        }
      }
      log_.clear();
      for (const auto& e : b.meta.at("log")) log_.push_back(epoch_log_from_json(e));
      return b.meta.at("epochs_done").get<int>();
    } catch (const json::exception& e) {
      throw io::FormatError("malformed training state: " + std::string(e.what()));
    }
  }

  [[noreturn]] void diverged(const std::string& what, int epoch,
                             const std::vector<std::size_t>& batch) {
    json record = {{"stage", stage_}, {"epoch", epoch}, {"batch", batch}, {"error", what}};
    if (!options_.out_dir.empty()) {
      io::write_text(options_.out_dir / "divergence.json", record.dump(2) + "\n");
    }
    throw DivergenceError(stage_ + " diverged at epoch " + std::to_string(epoch) + ": " + what,
                          record);
  }

  std::string stage_;
  std::vector<diff::ParamStore*> stores_;
  const RunOptions& options_;
  std::mt19937_64 rng_;
  std::vector<EpochLog> log_;
  std::vector<std::string> other_logs_;
  Selection selected_;
  std::vector<diff::ParamStore> best_;
};

Selection to_selection(const std::vector<double>& errors) {
  return {-1, posemath::acc30(errors), posemath::mederr(errors)};
}

template <typename Model>
StageRunner::ValidateFn validator(Model& model, const datagen::Dataset& data,
                                  const std::vector<std::size_t>& select) {
  if (select.empty()) return nullptr;
  return [&model, &data, &select] {
    return to_selection(
        evalharness::pose_errors(evalharness::predict(model, data, select), data, select));
  };
}

struct Plan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> select;
  int epochs;
  double lr0;
  bool augment;
};

Plan plan_for(const datagen::Dataset& data, const RunOptions& o, int epochs, double lr0,
              bool augment) {
  return {o.train_indices.value_or(data.split.train), o.select_indices.value_or(data.split.select),
          o.epochs.value_or(epochs), o.lr0.value_or(lr0), o.augment.value_or(augment)};
}

bool student_needs_z(Strategy s, const TrainConfig& c) {
  switch (s) {
    case Strategy::kThreeDAugPose:
    case Strategy::kOneSideCL:
      return c.weights.omega2 != 0.0 || !c.gate_zero_weights;
    default:
      return false;
  }
}

losses::LossParts student_parts(diff::Tape& tape, const models::StudentOut& out,
                                std::span<const posemath::PoseTarget> targets,
                                const TeacherTargets* teacher, Strategy strategy,
                                const TrainConfig& config) {
  losses::LossWeights w = config.weights;
  bool gate = config.gate_zero_weights;
  switch (strategy) {
    case Strategy::kStudentBaseline:
      w.omega2 = 0.0;
      w.omega3 = 0.0;
      gate = true;
      return losses::student_loss(out.pose.logits, out.pose.offsets, {}, {}, {}, targets, w, gate);
    case Strategy::kJointCL:
      w.omega2 = 0.0;
      [[fallthrough]];
    case Strategy::kThreeDAugPose: {
      if (!teacher) throw ConfigError("strategy needs a teacher");
      Var z_t = tape.constant(teacher->z_t);
      Var t_logits = tape.constant(teacher->logits);
      const bool use_z = strategy == Strategy::kThreeDAugPose && (w.omega2 != 0.0 || !gate);
      if (strategy == Strategy::kJointCL) gate = true;  // no embedding term in this stage
      return losses::student_loss(out.pose.logits, out.pose.offsets, use_z ? out.z_s : Var{},
                                  z_t, t_logits, targets, w, gate);
    }
    case Strategy::kOneSideCL: {
      if (!teacher) throw ConfigError("strategy needs a teacher");
      losses::LossParts parts;
      bool empty = true;
      const auto add = [&](Var term, double weight) {
        Var scaled = diff::scale(term, weight);
        parts.total = empty ? scaled : diff::add(parts.total, scaled);
        empty = false;
      };
      if (!gate || w.omega1 != 0.0) {
        Var pos = losses::pose_loss(out.pose.logits, out.pose.offsets, targets);
        parts.pos = pos.value().item();
        add(pos, w.omega1);
      }
      if (!gate || w.omega2 != 0.0) {
        Var cl = losses::infonce(out.z_s, tape.constant(teacher->h_t), w.tau);
        parts.cl = cl.value().item();
        add(cl, w.omega2);
      }
      if (!gate || w.omega3 != 0.0) {
        Var kd = losses::kl_output(tape.constant(teacher->logits), out.pose.logits);
        parts.kd = kd.value().item();
        add(kd, w.omega3);
      }
      if (empty) throw ConfigError("student loss has no active term");
      return parts;
    }
    case Strategy::kTeacherOnly:
      break;
  }
  throw ConfigError("strategy " + std::string(strategy_name(strategy)) +
                    " has no student stage");
}

// Row lookup from sample index into a shape-feature cache.
struct ShapeCache {
  Tensor features;
  std::vector<std::size_t> row_of;

  Tensor rows(const std::vector<std::size_t>& indices) const {
    const std::size_t f = features.dim(1);
    Tensor t({indices.size(), f});
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const std::size_t src = row_of[indices[r]];
      std::copy_n(features.data().begin() + static_cast<std::ptrdiff_t>(src * f), f,
                  t.data().begin() + static_cast<std::ptrdiff_t>(r * f));
    }
    return t;
  }
};

double param_delta(const diff::ParamStore& a, const diff::ParamStore& b) {
  double sq = 0.0;
  for (const auto& e : a.entries()) {
    const Tensor& other = b.value(e.name);
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double d = e.value[i] - other[i];
      sq += d * d;
    }
  }
  return std::sqrt(sq);
}

}  // namespace

TeacherTargets teacher_targets(models::TeacherModel& teacher, const Tensor& images,
                               const Tensor& d_t) {
  diff::Tape tape;
  const auto out = teacher.forward_with_shape(tape, tape.constant(images), tape.constant(d_t),
                                              false, true);
  return {out.h_t.value(), out.z_t.value(), out.pose.logits.value()};
}

Tensor shape_feature_cache(models::TeacherModel& teacher, const datagen::Dataset& data,
                           std::span<const std::size_t> indices) {
  const auto f = static_cast<std::size_t>(teacher.config().shape_dim);
  Tensor out({std::max<std::size_t>(indices.size(), 1), f});
  constexpr std::size_t kChunk = 128;
  for (std::size_t begin = 0; begin < indices.size(); begin += kChunk) {
    const auto chunk = indices.subspan(begin, std::min(kChunk, indices.size() - begin));
    diff::Tape tape;
    const Var d = teacher.shape_features(tape, tape.constant(evalharness::clouds_tensor(data, chunk)),
                                         false);
    std::copy(d.value().data().begin(), d.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(begin * f));
  }
  return out;
}

double student_objective(models::StudentModel& student, const Tensor& images,
                         std::span<const posemath::PoseTarget> targets,
                         const TeacherTargets& teacher, Strategy strategy,
                         const TrainConfig& config) {
  diff::Tape tape;
  const auto out = student.forward(tape, tape.constant(images), true,
                                   student_needs_z(strategy, config));
  return student_parts(tape, out, targets, &teacher, strategy, config).total.value().item();
}

TeacherResult train_teacher(const datagen::Dataset& data, const models::ModelConfig& model_cfg,
                            const TrainConfig& config, const RunOptions& options) {
  config.validate();
  models::TeacherModel teacher(model_cfg, config.seed);
  evalharness::check_compatible(model_cfg, data);
  const Plan plan = plan_for(data, options, config.epochs_stage1, config.lr0,
                             config.augment_stage1);
  const bool need_z = config.weights.kappa2 != 0.0 || !config.gate_zero_weights;

  StageRunner runner("teacher", {&teacher.store()}, options, config.seed);
  runner.run(
      plan.train, plan.epochs, plan.lr0, config.eval_every, config.batch_size,
      [&](const std::vector<std::size_t>& idx, double lr, std::mt19937_64& rng) {
        const Batch b = build_batch(data, idx, plan.augment, config.augment, rng, true);
        diff::Tape tape;
        const auto out = teacher.forward(tape, tape.constant(b.images), tape.constant(b.clouds),
                                         true, need_z);
        const auto parts = losses::teacher_loss(out.pose.logits, out.pose.offsets, out.z_t,
                                                out.h_t, b.targets, config.weights,
                                                config.gate_zero_weights);
        tape.backward(parts.total);
        teacher.store().adam_step(tape.parameter_gradients(), lr);
        return to_step(parts);
      },
      validator(teacher, data, plan.select));
  const Selection sel = runner.finish();
  return {std::move(teacher), sel, runner.log()};
}

StudentResult train_student(const datagen::Dataset& data, const models::TeacherModel* teacher_in,
                            const models::ModelConfig& model_cfg, const TrainConfig& config,
                            Strategy strategy, const RunOptions& options,
                            const models::StudentModel* init) {
  config.validate();
  if (strategy == Strategy::kTeacherOnly) {
    throw ConfigError("the teacher strategy has no student stage");
  }
  if (strategy != Strategy::kStudentBaseline && teacher_in == nullptr) {
    throw ConfigError("strategy " + std::string(strategy_name(strategy)) +
                      " needs a teacher checkpoint");
  }
  evalharness::check_compatible(model_cfg, data);
  models::StudentModel student(model_cfg, config.seed);
  if (init) {
    if (!(init->config() == model_cfg)) {
      throw CompatibilityError("initial student topology differs from the model config");
    }
    student.store().copy_values_from(init->store());
  }

  const Plan plan = plan_for(data, options, config.epochs_stage2, config.lr0,
                             config.augment_stage2);
  std::optional<models::TeacherModel> teacher;
  ShapeCache cache;
  const bool uses_teacher = strategy != Strategy::kStudentBaseline;
  if (uses_teacher) {
    evalharness::check_compatible(teacher_in->config(), data);
    if (teacher_in->config().fused_dim != model_cfg.fused_dim) {
      throw CompatibilityError("teacher and student embedding widths differ");
    }
    teacher.emplace(*teacher_in);
    teacher->freeze();
    cache.row_of.assign(data.samples.size(), 0);
    for (std::size_t r = 0; r < plan.train.size(); ++r) cache.row_of[plan.train[r]] = r;
    cache.features = shape_feature_cache(*teacher, data, plan.train);
  }
  const bool need_z = student_needs_z(strategy, config);

  StageRunner runner("student", {&student.store()}, options, config.seed);
  runner.run(
      plan.train, plan.epochs, plan.lr0, config.eval_every, config.batch_size,
      [&](const std::vector<std::size_t>& idx, double lr, std::mt19937_64& rng) {
        const Batch b = build_batch(data, idx, plan.augment, config.augment, rng, false);
        std::optional<TeacherTargets> tt;
        if (uses_teacher) tt = teacher_targets(*teacher, b.images, cache.rows(idx));
        diff::Tape tape;
        const auto out = student.forward(tape, tape.constant(b.images), true, need_z);
        const auto parts =
            student_parts(tape, out, b.targets, tt ? &*tt : nullptr, strategy, config);
        tape.backward(parts.total);
        student.store().adam_step(tape.parameter_gradients(), lr);
        return to_step(parts);
      },
      validator(student, data, plan.select));
  const Selection sel = runner.finish();
  StudentResult result{std::move(student), sel, runner.log()};
  if (teacher) result.teacher_delta = param_delta(teacher->store(), teacher_in->store());
  return result;
}

JointResult train_joint(const datagen::Dataset& data, const models::ModelConfig& model_cfg,
                        const TrainConfig& config, const RunOptions& options) {
  config.validate();
  evalharness::check_compatible(model_cfg, data);
  models::TeacherModel teacher(model_cfg, config.seed);
  models::StudentModel student(model_cfg, config.seed);
  const Plan plan = plan_for(data, options, config.epochs_stage1, config.lr0,
                             config.augment_stage1);
  const auto& w = config.weights;
  const bool gate = config.gate_zero_weights;

  StageRunner runner("joint", {&teacher.store(), &student.store()}, options, config.seed);
  runner.run(
      plan.train, plan.epochs, plan.lr0, config.eval_every, config.batch_size,
      [&](const std::vector<std::size_t>& idx, double lr, std::mt19937_64& rng) {
        const Batch b = build_batch(data, idx, plan.augment, config.augment, rng, true);
        diff::Tape tape;
        const Var images = tape.constant(b.images);
        const auto tout = teacher.forward(tape, images, tape.constant(b.clouds), true, false);
        losses::LossParts parts;
        bool empty = true;
        const auto add = [&](Var term, double weight) {
          Var scaled = diff::scale(term, weight);
          parts.total = empty ? scaled : diff::add(parts.total, scaled);
          empty = false;
        };
        if (!gate || w.kappa1 != 0.0) {
          Var pos = losses::pose_loss(tout.pose.logits, tout.pose.offsets, b.targets);
          parts.pos = pos.value().item();
          add(pos, w.kappa1);
        }
        if (!gate || w.kappa2 != 0.0) {
          const auto sout = student.forward(tape, images, true, true);
          Var cl = losses::infonce(sout.z_s, tout.h_t, w.tau);
          parts.cl = cl.value().item();
          add(cl, w.kappa2);
        }
        if (empty) throw ConfigError("joint loss has no active term");
        tape.backward(parts.total);
        const diff::Gradients grads = tape.parameter_gradients();
        teacher.store().adam_step(grads_with_prefix(grads, "teacher."), lr);
        student.store().adam_step(grads_with_prefix(grads, "student."), lr);
        return to_step(parts);
      },
      validator(teacher, data, plan.select));
  runner.finish();
  std::vector<EpochLog> stage1 = runner.log();

  RunOptions stage2 = options;
  stage2.epochs.reset();
  stage2.lr0.reset();
  stage2.augment.reset();
  StudentResult s = train_student(data, &teacher, model_cfg, config, Strategy::kJointCL, stage2,
                                  &student);
  return {std::move(teacher), std::move(s), std::move(stage1)};
}

}  // namespace posedistill::trainer
