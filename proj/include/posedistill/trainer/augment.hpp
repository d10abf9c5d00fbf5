#pragma once

#include <random>
#include <string_view>

#include "posedistill/datagen/dataset.hpp"
#include "posedistill/datagen/render.hpp"
#include "posedistill/posemath.hpp"

namespace posedistill::trainer {

/// How a rotated view is produced: nearest-neighbor rotation of the stored
/// image, or a fresh render of the stored shape at the transformed pose.
enum class AugmentMode { kImage, kRerender };

std::string_view augment_mode_name(AugmentMode m);
AugmentMode parse_augment_mode(std::string_view name);

struct AugmentConfig {
  double flip_prob = 0.5;
  double max_rotation_deg = 15.0;
  AugmentMode mode = AugmentMode::kImage;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct AugmentDraw {
  bool flip = false;
  double phi = 0.0;  // radians
};

/// Always consumes exactly two draws from `rng`, whatever the outcome.
AugmentDraw draw_augmentation(std::mt19937_64& rng, const AugmentConfig& config);

struct AugmentedView {
  datagen::RenderImage image;
  posemath::EulerPose pose;
};

/// Flip first (mirror the image, augment_flip the pose), then rotate by phi
/// (rotate the image, augment_rotate the pose). The cloud is never touched.
AugmentedView apply_augmentation(const datagen::Sample& sample, const AugmentDraw& draw,
                                 AugmentMode mode, double noise_sigma);

}  // namespace posedistill::trainer
