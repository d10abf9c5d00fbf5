#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "posedistill/diff/bundle.hpp"
#include "posedistill/diff/params.hpp"
#include "posedistill/diff/tape.hpp"
#include "posedistill/models/layers.hpp"
#include "posedistill/posemath.hpp"

namespace posedistill::models {

/// Widths of every network. `resolution` and `points` come from the dataset.
struct ModelConfig {
  int resolution = 32;
  int points = 256;
  int teacher_image_hidden = 128;
  int teacher_image_dim = 64;
  int point_hidden = 32;
  int shape_dim = 64;
  std::vector<int> fuse_hidden = {64, 32, 32};
  int fused_dim = 16;
  int student_image_hidden = 128;
  int student_image_dim = 128;
  std::vector<int> student_head_hidden = {64, 32};

  int pixels() const { return resolution * resolution; }
  /// Throws ConfigError on non-positive widths or a FuseNet that is not 4 layers.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Bin logits and sigmoid offsets, both [B, total_bins] in [alpha|beta|gamma] order.
struct PoseHeads {
  diff::Var logits;
  diff::Var offsets;
};

struct TeacherOut {
  diff::Var x_t;  // image features
  diff::Var d_t;  // shape features
  diff::Var h_t;  // fused embedding, in (-1, 1)
  diff::Var z_t;  // contrastive projection of x_t; empty unless requested
  PoseHeads pose;
};

struct StudentOut {
  diff::Var x_s;
  diff::Var h_s;
  diff::Var z_s;
  PoseHeads pose;
};

enum class ModelKind { kTeacher, kStudent };

/// Parameters plus layer layout. Groups can be frozen individually; a frozen
/// group neither updates nor refreshes its batch-norm statistics.
class Network {
 public:
  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return config_; }
  diff::ParamStore& store() { return store_; }
  const diff::ParamStore& store() const { return store_; }

  /// Freezes the named groups; throws std::invalid_argument on unknown names.
  void freeze(const std::vector<std::string>& groups);
  void freeze();
  void unfreeze();

  /// Writes `<dir>/<stem>.{json,bin}` with the topology needed by load_*.
  void save(const std::filesystem::path& dir, const std::string& stem,
            const nlohmann::json& extra_meta = nlohmann::json::object()) const;

 protected:
  Network(ModelKind kind, ModelConfig config);
  ModelKind kind_;
  ModelConfig config_;
  diff::ParamStore store_;
};

class TeacherModel : public Network {
 public:
  static constexpr const char* kImageGroup = "teacher.image";
  static constexpr const char* kPointGroup = "teacher.point";
  static constexpr const char* kFuseGroup = "teacher.fuse";
  static constexpr const char* kHeadGroup = "teacher.heads";
  static constexpr const char* kProjGroup = "teacher.proj";

  TeacherModel(const ModelConfig& config, std::uint64_t seed);

  /// images [B, H*W]; clouds [B, N*3]. z_t is computed only when `with_z`.
  TeacherOut forward(diff::Tape& tape, diff::Var images, diff::Var clouds, bool training,
                     bool with_z);
  /// Same, reusing shape features d_t [B, shape_dim] computed earlier.
  TeacherOut forward_with_shape(diff::Tape& tape, diff::Var images, diff::Var d_t,
                                bool training, bool with_z);

  diff::Var image_features(diff::Tape& tape, diff::Var images, bool training);
  /// Per-point MLP then max over points: invariant to point order.
  diff::Var shape_features(diff::Tape& tape, diff::Var clouds, bool training);
  /// Contrastive Learner output z_t = G_t(R_t(images)).
  diff::Var contrastive(diff::Tape& tape, diff::Var images, bool training);

 private:
  Mlp image_, point_, fuse_, bins_, offsets_, proj_;
};

class StudentModel : public Network {
 public:
  static constexpr const char* kImageGroup = "student.image";
  static constexpr const char* kStackGroup = "student.stack";
  static constexpr const char* kHeadGroup = "student.heads";
  static constexpr const char* kProjGroup = "student.proj";

  StudentModel(const ModelConfig& config, std::uint64_t seed);

  /// z_s is computed only when `with_z`.
  StudentOut forward(diff::Tape& tape, diff::Var images, bool training, bool with_z);

 private:
  Mlp image_, stack_, bins_, offsets_, proj_;
};

/// Reads a saved network; throws CompatibilityError when the bundle holds
/// the other kind, io::FormatError when it is malformed.
TeacherModel load_teacher(const std::filesystem::path& dir, const std::string& stem);
StudentModel load_student(const std::filesystem::path& dir, const std::string& stem);
ModelKind saved_kind(const std::filesystem::path& dir, const std::string& stem);

std::string_view kind_name(ModelKind k);

/// Splits head outputs into per-sample predictions.
std::vector<posemath::PosePrediction> to_predictions(const diff::Tensor& logits,
                                                     const diff::Tensor& offsets,
                                                     const posemath::AngleBinSpec& spec = {});

}  // namespace posedistill::models
