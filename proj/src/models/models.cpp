#include "posedistill/models/models.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "posedistill/diff/ops.hpp"
#include "posedistill/errors.hpp"
#include "posedistill/io.hpp"
#include "posedistill/rng.hpp"

namespace posedistill::models {

using diff::Tensor;
using diff::Var;
using nlohmann::json;

namespace {

constexpr int kBins = 60;

std::vector<int> widths(std::initializer_list<int> head, const std::vector<int>& mid,
                        std::initializer_list<int> tail) {
  std::vector<int> out(head);
  out.insert(out.end(), mid.begin(), mid.end());
  out.insert(out.end(), tail);
  return out;
}

void check_input(const Var& v, std::size_t cols, const char* what) {
  if (v.shape().size() != 2 || v.shape()[1] != cols) {
    throw diff::ShapeError(std::string(what) + ": expected [B, " + std::to_string(cols) +
                           "], got " + diff::shape_string(v.shape()));
  }
}

PoseHeads heads(diff::Tape& tape, diff::ParamStore& store, const Mlp& bins, const Mlp& offsets,
                Var h, bool training) {
  return {bins.forward(tape, store, h, training), offsets.forward(tape, store, h, training)};
}

}  // namespace

void ModelConfig::validate() const {
  const auto positive = [](int v) { return v >= 1; };
  const std::vector<int> scalars = {resolution,         points,          teacher_image_hidden,
                                    teacher_image_dim,  point_hidden,    shape_dim,
                                    fused_dim,          student_image_hidden, student_image_dim};
  if (!std::all_of(scalars.begin(), scalars.end(), positive) ||
      !std::all_of(fuse_hidden.begin(), fuse_hidden.end(), positive) ||
      !std::all_of(student_head_hidden.begin(), student_head_hidden.end(), positive)) {
    throw ConfigError("model widths must all be positive");
  }
  if (fuse_hidden.size() != 3) {
    throw ConfigError("fuse_hidden must list exactly 3 widths (FuseNet has 4 layers)");
  }
}

json ModelConfig::to_json() const {
  return {{"resolution", resolution},
          {"points", points},
          {"teacher_image_hidden", teacher_image_hidden},
          {"teacher_image_dim", teacher_image_dim},
          {"point_hidden", point_hidden},
          {"shape_dim", shape_dim},
          {"fuse_hidden", fuse_hidden},
          {"fused_dim", fused_dim},
          {"student_image_hidden", student_image_hidden},
          {"student_image_dim", student_image_dim},
          {"student_head_hidden", student_head_hidden}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.points = j.at("points").get<int>();
  c.teacher_image_hidden = j.at("teacher_image_hidden").get<int>();
  c.teacher_image_dim = j.at("teacher_image_dim").get<int>();
  c.point_hidden = j.at("point_hidden").get<int>();
  c.shape_dim = j.at("shape_dim").get<int>();
  c.fuse_hidden = j.at("fuse_hidden").get<std::vector<int>>();
  c.fused_dim = j.at("fused_dim").get<int>();
  c.student_image_hidden = j.at("student_image_hidden").get<int>();
  c.student_image_dim = j.at("student_image_dim").get<int>();
  c.student_head_hidden = j.at("student_head_hidden").get<std::vector<int>>();
  return c;
}

std::string_view kind_name(ModelKind k) {
  return k == ModelKind::kTeacher ? "teacher" : "student";
}

Network::Network(ModelKind kind, ModelConfig config) : kind_(kind), config_(std::move(config)) {
  config_.validate();
}

void Network::freeze(const std::vector<std::string>& groups) {
  const auto known = store_.groups();
  for (const auto& g : groups) {
    if (std::find(known.begin(), known.end(), g) == known.end()) {
      throw std::invalid_argument("unknown parameter group '" + g + "'");
    }
  }
  for (const auto& g : groups) store_.freeze(g);
}

void Network::freeze() { store_.freeze_all(); }
void Network::unfreeze() { store_.unfreeze_all(); }

void Network::save(const std::filesystem::path& dir, const std::string& stem,
                   const json& extra_meta) const {
  diff::TensorBundle bundle;
  diff::save_store(store_, bundle, false);
  bundle.meta = extra_meta;
  bundle.meta["kind"] = std::string(kind_name(kind_));
  bundle.meta["topology"] = config_.to_json();
  diff::write_bundle(dir, stem, bundle);
}

TeacherModel::TeacherModel(const ModelConfig& config, std::uint64_t seed)
    : Network(ModelKind::kTeacher, config) {
  const ModelConfig& c = config_;
  const int f = c.fused_dim;
  image_ = Mlp("teacher.image", kImageGroup,
               chain({c.pixels(), c.teacher_image_hidden, c.teacher_image_dim}, true, Act::kRelu,
                     Act::kRelu, true));
  point_ = Mlp("teacher.point", kPointGroup,
               chain({3, c.point_hidden, c.shape_dim}, false, Act::kRelu, Act::kRelu, false));
  fuse_ = Mlp("teacher.fuse", kFuseGroup,
              chain(widths({c.shape_dim + c.teacher_image_dim}, c.fuse_hidden, {f}), false,
                    Act::kRelu, Act::kTanh, false));
  bins_ = Mlp("teacher.bins", kHeadGroup, {{f, kBins, false, Act::kNone}});
  offsets_ = Mlp("teacher.offsets", kHeadGroup, {{f, kBins, false, Act::kSigmoid}});
  proj_ = Mlp("teacher.proj", kProjGroup,
              chain({c.teacher_image_dim, 4 * f, 2 * f, f}, false, Act::kRelu, Act::kNone, false));
  std::mt19937_64 rng(derive_seed(seed, 0x7eac4e7ULL));
  for (const Mlp* m : {&image_, &point_, &fuse_, &bins_, &offsets_, &proj_}) m->init(store_, rng);
}

Var TeacherModel::image_features(diff::Tape& tape, Var images, bool training) {
  check_input(images, static_cast<std::size_t>(config_.pixels()), "teacher images");
  return image_.forward(tape, store_, images, training);
}

Var TeacherModel::shape_features(diff::Tape& tape, Var clouds, bool training) {
  const auto n = static_cast<std::size_t>(config_.points);
  check_input(clouds, n * 3, "teacher clouds");
  const std::size_t b = clouds.shape()[0];
  Var per_point = point_.forward(tape, store_, diff::reshape(clouds, {b * n, 3}), training);
  per_point = diff::reshape(per_point, {b, n, static_cast<std::size_t>(config_.shape_dim)});
  return diff::max_over_axis(per_point, 1);
}

Var TeacherModel::contrastive(diff::Tape& tape, Var images, bool training) {
  return proj_.forward(tape, store_, image_features(tape, images, training), training);
}

TeacherOut TeacherModel::forward_with_shape(diff::Tape& tape, Var images, Var d_t, bool training,
                                            bool with_z) {
  TeacherOut out;
  out.x_t = image_features(tape, images, training);
  out.d_t = d_t;
  if (d_t.shape() != diff::Shape{images.shape()[0], static_cast<std::size_t>(config_.shape_dim)}) {
    throw diff::ShapeError("teacher: shape features do not match the image batch");
  }
  const std::vector<Var> parts = {d_t, out.x_t};
  out.h_t = fuse_.forward(tape, store_, diff::concat(parts, 1), training);
  out.pose = heads(tape, store_, bins_, offsets_, out.h_t, training);
  if (with_z) out.z_t = proj_.forward(tape, store_, out.x_t, training);
  return out;
}

TeacherOut TeacherModel::forward(diff::Tape& tape, Var images, Var clouds, bool training,
                                 bool with_z) {
  if (clouds.shape().empty() || clouds.shape()[0] != images.shape()[0]) {
    throw diff::ShapeError("teacher: image and cloud batch sizes differ");
  }
  return forward_with_shape(tape, images, shape_features(tape, clouds, training), training,
                            with_z);
}

StudentModel::StudentModel(const ModelConfig& config, std::uint64_t seed)
    : Network(ModelKind::kStudent, config) {
  const ModelConfig& c = config_;
  const int f = c.fused_dim;
  image_ = Mlp("student.image", kImageGroup,
               chain({c.pixels(), c.student_image_hidden, c.student_image_dim}, true, Act::kRelu,
                     Act::kRelu, true));
  stack_ = Mlp("student.stack", kStackGroup,
               chain(widths({c.student_image_dim}, c.student_head_hidden, {f}), true, Act::kRelu,
                     Act::kRelu, true));
  bins_ = Mlp("student.bins", kHeadGroup, {{f, kBins, false, Act::kNone}});
  offsets_ = Mlp("student.offsets", kHeadGroup, {{f, kBins, false, Act::kSigmoid}});
  proj_ = Mlp("student.proj", kProjGroup,
              chain({f, 2 * f, f}, false, Act::kRelu, Act::kNone, false));
  std::mt19937_64 rng(derive_seed(seed, 0x5d0de17ULL));
  for (const Mlp* m : {&image_, &stack_, &bins_, &offsets_, &proj_}) m->init(store_, rng);
}

StudentOut StudentModel::forward(diff::Tape& tape, Var images, bool training, bool with_z) {
  check_input(images, static_cast<std::size_t>(config_.pixels()), "student images");
  StudentOut out;
  out.x_s = image_.forward(tape, store_, images, training);
  out.h_s = stack_.forward(tape, store_, out.x_s, training);
  out.pose = heads(tape, store_, bins_, offsets_, out.h_s, training);
  if (with_z) out.z_s = proj_.forward(tape, store_, out.h_s, training);
  return out;
}

namespace {

std::pair<ModelConfig, diff::TensorBundle> read_network(const std::filesystem::path& dir,
                                                        const std::string& stem,
                                                        ModelKind expected) {
  diff::TensorBundle bundle = diff::read_bundle(dir, stem);
  std::string kind;
  ModelConfig config;
  try {
    kind = bundle.meta.at("kind").get<std::string>();
    config = ModelConfig::from_json(bundle.meta.at("topology"));
  } catch (const json::exception& e) {
    throw io::FormatError("checkpoint lacks a readable topology: " + std::string(e.what()));
  }
  if (kind != kind_name(expected)) {
    throw CompatibilityError("checkpoint holds a " + kind + " network, expected " +
                             std::string(kind_name(expected)));
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw io::FormatError("checkpoint topology invalid: " + std::string(e.what()));
  }
  return {config, std::move(bundle)};
}

}  // namespace

TeacherModel load_teacher(const std::filesystem::path& dir, const std::string& stem) {
  auto [config, bundle] = read_network(dir, stem, ModelKind::kTeacher);
  TeacherModel m(config, 0);
  diff::load_store(m.store(), bundle, false);
  return m;
}

StudentModel load_student(const std::filesystem::path& dir, const std::string& stem) {
  auto [config, bundle] = read_network(dir, stem, ModelKind::kStudent);
  StudentModel m(config, 0);
  diff::load_store(m.store(), bundle, false);
  return m;
}

ModelKind saved_kind(const std::filesystem::path& dir, const std::string& stem) {
  json manifest;
  try {
    manifest = json::parse(io::read_text(dir / (stem + ".json")));
    const auto kind = manifest.at("meta").at("kind").get<std::string>();
    if (kind == "teacher") return ModelKind::kTeacher;
    if (kind == "student") return ModelKind::kStudent;
  } catch (const json::exception& e) {
    throw io::FormatError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  throw io::FormatError("checkpoint has an unknown network kind");
}

std::vector<posemath::PosePrediction> to_predictions(const Tensor& logits, const Tensor& offsets,
                                                     const posemath::AngleBinSpec& spec) {
  const auto total = static_cast<std::size_t>(spec.total_bins());
  if (logits.rank() != 2 || logits.dim(1) != total || offsets.shape() != logits.shape()) {
    throw diff::ShapeError("to_predictions: head outputs must be [B, " + std::to_string(total) +
                           "]");
  }
  std::vector<posemath::PosePrediction> out(logits.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    for (posemath::Angle a : posemath::kAllAngles) {
      const auto k = static_cast<std::size_t>(a);
      const auto first = static_cast<std::size_t>(spec.block_offset(a));
      const auto count = static_cast<std::size_t>(spec.bin_count(a));
      const double* lrow = logits.data().data() + r * total + first;
      const double* orow = offsets.data().data() + r * total + first;
      out[r].bin_scores[k].assign(lrow, lrow + count);
      out[r].offsets[k].assign(orow, orow + count);
    }
  }
  return out;
}

}  // namespace posedistill::models
