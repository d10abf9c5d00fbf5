#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace posedistill::datagen {

enum class Category : std::uint16_t { kBox = 0, kCylinder, kCone, kEllipsoid, kLShape, kTShape };

inline constexpr std::array<Category, 6> kAllCategories = {
    Category::kBox,       Category::kCylinder, Category::kCone,
    Category::kEllipsoid, Category::kLShape,   Category::kTShape};

std::string_view category_name(Category c);
std::optional<Category> parse_category(std::string_view name);

/// True for categories whose canonical shape is symmetric under x -> -x,
/// so a mirrored render equals the render at the flipped pose.
bool mirror_symmetric(Category c);

class InvalidShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A primitive in its canonical frame, already scaled to fit the unit sphere.
///
/// Parameter meaning per category (all lengths after normalization):
///   box        half-extents (x, y, z)
///   cylinder   radius, height            (axis z, centered)
///   cone       base radius, height       (axis z, apex at +height/2)
///   ellipsoid  semi-axes (x, y, z)
///   lshape     length, height, thickness, depth  (profile in xy, extruded along z)
///   tshape     width, height, thickness, depth   (profile in xy, extruded along z)
/// L and T profiles are centered on their bounding box.
struct ShapeSpec {
  Category category = Category::kBox;
  std::array<double, 4> size{};
  std::uint64_t instance_seed = 0;

  /// Throws InvalidShapeError when sizes are non-positive, inconsistent or
  /// the shape does not fit in the unit sphere.
  void validate() const;
  friend bool operator==(const ShapeSpec&, const ShapeSpec&) = default;
};

/// Raw (pre-normalization) sampling ranges per category.
struct SizeRange {
  double lo;
  double hi;
};
std::array<SizeRange, 4> raw_size_ranges(Category c);

/// Distance from the origin to the farthest surface point for raw sizes.
double bounding_radius(Category c, const std::array<double, 4>& size);

/// Scales raw sizes so the shape's farthest point sits on the unit sphere.
ShapeSpec normalized_shape(Category c, const std::array<double, 4>& raw, std::uint64_t seed);

/// Draws raw sizes from the category's ranges using `seed`, then normalizes.
ShapeSpec make_shape(Category c, std::uint64_t seed);

/// Axis-aligned rectangle pieces and outline of an L/T profile (centered).
struct Profile {
  std::vector<std::array<double, 4>> rects;       // xmin, xmax, ymin, ymax
  std::vector<std::array<double, 2>> outline;     // polygon vertices, CCW
  double half_depth = 0.0;
};
Profile extrusion_profile(const ShapeSpec& spec);

/// N x 3 row-major points sampled area-uniformly on the surface.
struct PointCloud {
  std::vector<double> points;
  std::size_t size() const { return points.size() / 3; }
};

/// Deterministic in (spec.instance_seed, n). Requires n >= 8.
PointCloud sample_point_cloud(const ShapeSpec& spec, std::size_t n);

}  // namespace posedistill::datagen
