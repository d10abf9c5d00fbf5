#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "posedistill/datagen/dataset.hpp"
#include "posedistill/diff/tensor.hpp"
#include "posedistill/models/models.hpp"

namespace posedistill::evalharness {

/// Rows of flattened images, [indices.size(), H*W].
diff::Tensor images_tensor(const datagen::Dataset& ds, std::span<const std::size_t> indices);
/// Rows of flattened clouds, [indices.size(), N*3].
diff::Tensor clouds_tensor(const datagen::Dataset& ds, std::span<const std::size_t> indices);

/// Throws CompatibilityError when the network input sizes differ from the dataset's.
void check_compatible(const models::ModelConfig& model, const datagen::Dataset& ds);

/// Eval-mode pose predictions for the given samples, in index order.
std::vector<posemath::PosePrediction> predict(models::TeacherModel& model,
                                              const datagen::Dataset& ds,
                                              std::span<const std::size_t> indices);
std::vector<posemath::PosePrediction> predict(models::StudentModel& model,
                                              const datagen::Dataset& ds,
                                              std::span<const std::size_t> indices);

/// Geodesic error (degrees) of each prediction against the stored poses.
std::vector<double> pose_errors(const std::vector<posemath::PosePrediction>& predictions,
                                const datagen::Dataset& ds, std::span<const std::size_t> indices);

struct CategoryMetrics {
  std::size_t count = 0;
  double acc30 = 0.0;
  double mederr = 0.0;
};

struct MetricsReport {
  std::string model_kind;
  std::string strategy;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string split;
  std::size_t count = 0;
  double acc30 = 0.0;
  double mederr = 0.0;
  std::map<std::string, CategoryMetrics> per_category;

  nlohmann::json to_json() const;
};

/// Overall and per-category Acc30/MedErr. Throws posemath::EmptyEvaluationError
/// when `indices` is empty.
MetricsReport summarize(const datagen::Dataset& ds, std::span<const std::size_t> indices,
                        std::span<const double> errors);

/// The index list for a split name: train, val or select.
const std::vector<std::size_t>& split_indices(const datagen::Dataset& ds, const std::string& split);

MetricsReport evaluate(models::TeacherModel& model, const datagen::Dataset& ds,
                       const std::string& split);
MetricsReport evaluate(models::StudentModel& model, const datagen::Dataset& ds,
                       const std::string& split);

}  // namespace posedistill::evalharness
