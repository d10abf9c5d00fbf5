#include "posedistill/trainer/augment.hpp"

#include <string>

#include "posedistill/errors.hpp"

namespace posedistill::trainer {

std::string_view augment_mode_name(AugmentMode m) {
  return m == AugmentMode::kImage ? "image" : "rerender";
}

AugmentMode parse_augment_mode(std::string_view name) {
  if (name == "image") return AugmentMode::kImage;
  if (name == "rerender") return AugmentMode::kRerender;
  throw ConfigError("unknown augmentation mode '" + std::string(name) +
                    "' (expected image or rerender)");
}

AugmentDraw draw_augmentation(std::mt19937_64& rng, const AugmentConfig& config) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentDraw d;
  d.flip = unit(rng) < config.flip_prob;
  const double u = unit(rng);
  d.phi = posemath::deg2rad((2.0 * u - 1.0) * config.max_rotation_deg);
  return d;
}

AugmentedView apply_augmentation(const datagen::Sample& sample, const AugmentDraw& draw,
                                 AugmentMode mode, double noise_sigma) {
  AugmentedView view{sample.image, sample.pose};
  if (draw.flip) view.pose = posemath::augment_flip(view.pose);
  if (draw.phi != 0.0) view.pose = posemath::augment_rotate(view.pose, draw.phi);
  if (mode == AugmentMode::kRerender) {
    if (draw.flip || draw.phi != 0.0) {
      datagen::Sample moved = sample;
      moved.pose = view.pose;
      view.image = datagen::rerender(moved, sample.image.width, noise_sigma);
    }
    return view;
  }
  if (draw.flip) view.image = datagen::flip_horizontal(view.image);
  if (draw.phi != 0.0) view.image = datagen::rotate_nearest(view.image, draw.phi);
  return view;
}

}  // namespace posedistill::trainer
