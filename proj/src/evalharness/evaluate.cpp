#include "posedistill/evalharness/evaluate.hpp"

#include <algorithm>

#include "posedistill/diff/tape.hpp"
#include "posedistill/errors.hpp"

namespace posedistill::evalharness {

using diff::Tensor;

namespace {

constexpr std::size_t kEvalBatch = 128;

template <typename Fn>
std::vector<posemath::PosePrediction> batched(std::span<const std::size_t> indices, Fn&& run) {
  std::vector<posemath::PosePrediction> out;
  out.reserve(indices.size());
  for (std::size_t begin = 0; begin < indices.size(); begin += kEvalBatch) {
    const auto chunk = indices.subspan(begin, std::min(kEvalBatch, indices.size() - begin));
    auto preds = run(chunk);
    out.insert(out.end(), std::make_move_iterator(preds.begin()),
               std::make_move_iterator(preds.end()));
  }
  return out;
}

}  // namespace

Tensor images_tensor(const datagen::Dataset& ds, std::span<const std::size_t> indices) {
  const auto p = static_cast<std::size_t>(ds.config.resolution * ds.config.resolution);
  Tensor t({indices.size(), p});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& px = ds.samples[indices[r]].image.pixels;
    std::copy(px.begin(), px.end(), t.data().begin() + static_cast<std::ptrdiff_t>(r * p));
  }
  return t;
}

Tensor clouds_tensor(const datagen::Dataset& ds, std::span<const std::size_t> indices) {
  const auto n = static_cast<std::size_t>(ds.config.points) * 3;
  Tensor t({indices.size(), n});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& c = ds.samples[indices[r]].cloud;
    std::copy(c.begin(), c.end(), t.data().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return t;
}

void check_compatible(const models::ModelConfig& model, const datagen::Dataset& ds) {
  if (model.resolution != ds.config.resolution || model.points != ds.config.points) {
    throw CompatibilityError(
        "network expects " + std::to_string(model.resolution) + "x" +
        std::to_string(model.resolution) + " images and " + std::to_string(model.points) +
        " points, dataset has " + std::to_string(ds.config.resolution) + "x" +
        std::to_string(ds.config.resolution) + " and " + std::to_string(ds.config.points));
  }
}

std::vector<posemath::PosePrediction> predict(models::TeacherModel& model,
                                              const datagen::Dataset& ds,
                                              std::span<const std::size_t> indices) {
  check_compatible(model.config(), ds);
  return batched(indices, [&](std::span<const std::size_t> chunk) {
    diff::Tape tape;
    const auto out = model.forward(tape, tape.constant(images_tensor(ds, chunk)),
                                   tape.constant(clouds_tensor(ds, chunk)), false, false);
    return models::to_predictions(out.pose.logits.value(), out.pose.offsets.value());
  });
}

std::vector<posemath::PosePrediction> predict(models::StudentModel& model,
                                              const datagen::Dataset& ds,
                                              std::span<const std::size_t> indices) {
  check_compatible(model.config(), ds);
  return batched(indices, [&](std::span<const std::size_t> chunk) {
    diff::Tape tape;
    const auto out = model.forward(tape, tape.constant(images_tensor(ds, chunk)), false, false);
    return models::to_predictions(out.pose.logits.value(), out.pose.offsets.value());
  });
}

std::vector<double> pose_errors(const std::vector<posemath::PosePrediction>& predictions,
                                const datagen::Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<double> errors(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto predicted = posemath::euler_to_matrix(posemath::decode_pose(predictions[i]));
    const auto truth = posemath::euler_to_matrix(ds.samples[indices[i]].pose);
    errors[i] = posemath::geodesic_error_deg(predicted, truth);
  }
  return errors;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [name, m] : per_category) {
    cats[name] = {{"count", m.count}, {"acc30", m.acc30}, {"mederr", m.mederr}};
  }
  return {{"model", model_kind}, {"strategy", strategy}, {"seed", seed},
          {"config_hash", config_hash}, {"split", split},   {"count", count},
          {"acc30", acc30},        {"mederr", mederr},      {"per_category", cats}};
}

MetricsReport summarize(const datagen::Dataset& ds, std::span<const std::size_t> indices,
                        std::span<const double> errors) {
  if (indices.empty()) throw posemath::EmptyEvaluationError();
  MetricsReport r;
  r.count = indices.size();
  r.acc30 = posemath::acc30(errors);
  r.mederr = posemath::mederr(errors);
  std::map<std::string, std::vector<double>> by_cat;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    by_cat[std::string(datagen::category_name(ds.samples[indices[i]].category))].push_back(
        errors[i]);
  }
  for (const auto& [name, errs] : by_cat) {
    r.per_category[name] = {errs.size(), posemath::acc30(errs), posemath::mederr(errs)};
  }
  return r;
}

const std::vector<std::size_t>& split_indices(const datagen::Dataset& ds,
                                              const std::string& split) {
  if (split == "train") return ds.split.train;
  if (split == "val") return ds.split.val;
  if (split == "select") return ds.split.select;
  throw ConfigError("unknown split '" + split + "' (expected train, val or select)");
}

MetricsReport evaluate(models::TeacherModel& model, const datagen::Dataset& ds,
                       const std::string& split) {
  const auto& idx = split_indices(ds, split);
  MetricsReport r = summarize(ds, idx, pose_errors(predict(model, ds, idx), ds, idx));
  r.model_kind = "teacher";
  r.split = split;
  return r;
}

MetricsReport evaluate(models::StudentModel& model, const datagen::Dataset& ds,
                       const std::string& split) {
  const auto& idx = split_indices(ds, split);
  MetricsReport r = summarize(ds, idx, pose_errors(predict(model, ds, idx), ds, idx));
  r.model_kind = "student";
  r.split = split;
  return r;
}

}  // namespace posedistill::evalharness
