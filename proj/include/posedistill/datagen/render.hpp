#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "posedistill/datagen/shapes.hpp"
#include "posedistill/posemath.hpp"

namespace posedistill::datagen {

/// H x W grayscale image, row-major from the top row. 0 is background.
struct RenderImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  float at(int col, int row) const { return pixels[static_cast<std::size_t>(row * width + col)]; }
  friend bool operator==(const RenderImage&, const RenderImage&) = default;
};

/// Orthographic depth render of `spec` under `pose` at resolution x resolution.
///
/// Pixel (i, j) looks along -z through camera point (u, v) with
/// u = 2(i + 0.5)/W - 1 and v = 1 - 2(j + 0.5)/H; a hit at camera depth z
/// stores 0.1 + 0.9 (z + 1)/2, so nearer surfaces are brighter.
/// Throws std::invalid_argument for resolution < 8.
RenderImage render(const ShapeSpec& spec, const posemath::EulerPose& pose, int resolution);

/// Adds N(0, sigma) to every pixel and clamps to [0, 1]. Deterministic in seed.
void add_noise(RenderImage& image, double sigma, std::uint64_t seed);

/// Mirror about the vertical center line (u -> -u).
RenderImage flip_horizontal(const RenderImage& image);

/// Nearest-neighbor rotation by phi (counterclockwise in the u/v plane), so
/// rotate_nearest(render(p), phi) approximates render(augment_rotate(p, phi)).
/// Source pixels outside the grid read as background. Square grids rotate
/// exactly for multiples of 90 degrees.
RenderImage rotate_nearest(const RenderImage& image, double phi);

double mean_abs_diff(const RenderImage& a, const RenderImage& b);

/// Binary (P5) 8-bit graymap.
void write_pgm(const std::filesystem::path& path, const RenderImage& image);

}  // namespace posedistill::datagen
