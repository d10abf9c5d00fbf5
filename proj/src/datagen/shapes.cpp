#include "posedistill/datagen/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "posedistill/rng.hpp"

namespace posedistill::datagen {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_extrusion(Category c) {
  return c == Category::kLShape || c == Category::kTShape;
}

Profile raw_profile(Category c, const std::array<double, 4>& s) {
  const double len = s[0];
  const double h = s[1];
  const double t = s[2];
  Profile p;
  p.half_depth = s[3] / 2.0;
  if (c == Category::kLShape) {
    // foot along +x, upright bar at x in [0, t]; then centered on the bbox
    const double cx = len / 2.0;
    const double cy = h / 2.0;
    p.rects = {{0.0 - cx, len - cx, 0.0 - cy, t - cy}, {0.0 - cx, t - cx, t - cy, h - cy}};
    p.outline = {{0.0 - cx, 0.0 - cy}, {len - cx, 0.0 - cy}, {len - cx, t - cy},
                 {t - cx, t - cy},     {t - cx, h - cy},     {0.0 - cx, h - cy}};
  } else {
    const double cy = h / 2.0;
    const double hw = len / 2.0;
    const double ht = t / 2.0;
    p.rects = {{-ht, ht, 0.0 - cy, h - t - cy}, {-hw, hw, h - t - cy, h - cy}};
    p.outline = {{-ht, 0.0 - cy},     {ht, 0.0 - cy},     {ht, h - t - cy}, {hw, h - t - cy},
                 {hw, h - cy},        {-hw, h - cy},      {-hw, h - t - cy}, {-ht, h - t - cy}};
  }
  return p;
}

}  // namespace

std::string_view category_name(Category c) {
  switch (c) {
    case Category::kBox:
      return "box";
    case Category::kCylinder:
      return "cylinder";
    case Category::kCone:
      return "cone";
    case Category::kEllipsoid:
      return "ellipsoid";
    case Category::kLShape:
      return "lshape";
    case Category::kTShape:
      return "tshape";
  }
  return "unknown";
}

std::optional<Category> parse_category(std::string_view name) {
  for (Category c : kAllCategories) {
    if (category_name(c) == name) {
      return c;
    }
  }
  return std::nullopt;
}

bool mirror_symmetric(Category c) {
  return c != Category::kLShape;
}

std::array<SizeRange, 4> raw_size_ranges(Category c) {
  switch (c) {
    case Category::kBox:
    case Category::kEllipsoid:
      return {{{0.2, 1.0}, {0.2, 1.0}, {0.2, 1.0}, {0.0, 0.0}}};
    case Category::kCylinder:
    case Category::kCone:
      return {{{0.2, 1.0}, {0.4, 2.0}, {0.0, 0.0}, {0.0, 0.0}}};
    case Category::kLShape:
    case Category::kTShape:
      return {{{0.6, 1.6}, {0.6, 1.6}, {0.15, 0.4}, {0.2, 0.8}}};
  }
  return {};
}

double bounding_radius(Category c, const std::array<double, 4>& s) {
  switch (c) {
    case Category::kBox:
      return std::sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2]);
    case Category::kCylinder:
    case Category::kCone:
      return std::sqrt(s[0] * s[0] + s[1] * s[1] / 4.0);
    case Category::kEllipsoid:
      return std::max({s[0], s[1], s[2]});
    case Category::kLShape:
    case Category::kTShape: {
      const Profile p = raw_profile(c, s);
      double r2 = 0.0;
      for (const auto& v : p.outline) {
        r2 = std::max(r2, v[0] * v[0] + v[1] * v[1]);
      }
      return std::sqrt(r2 + p.half_depth * p.half_depth);
    }
  }
  return 0.0;
}

void ShapeSpec::validate() const {
  const int used = is_extrusion(category) ? 4 : (category == Category::kBox ||
                                                 category == Category::kEllipsoid)
                                                    ? 3
                                                    : 2;
  for (int i = 0; i < used; ++i) {
    if (!std::isfinite(size[static_cast<std::size_t>(i)]) || !(size[static_cast<std::size_t>(i)] > 0.0)) {
      throw InvalidShapeError(std::string(category_name(category)) +
                              ": size parameters must be positive and finite");
    }
  }
  if (is_extrusion(category) && (size[2] >= size[0] || size[2] >= size[1])) {
    throw InvalidShapeError(std::string(category_name(category)) +
                            ": thickness must be smaller than length and height");
  }
  if (bounding_radius(category, size) > 1.0 + 1e-9) {
    throw InvalidShapeError(std::string(category_name(category)) +
                            ": shape does not fit in the unit sphere");
  }
}

ShapeSpec normalized_shape(Category c, const std::array<double, 4>& raw, std::uint64_t seed) {
  ShapeSpec spec{c, raw, seed};
  const double r = bounding_radius(c, raw);
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw InvalidShapeError(std::string(category_name(c)) + ": degenerate size parameters");
  }
  for (double& v : spec.size) {
    v /= r;
  }
  spec.validate();
  return spec;
}

ShapeSpec make_shape(Category c, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
  const auto ranges = raw_size_ranges(c);
  std::array<double, 4> raw{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (ranges[i].hi > 0.0) {
      raw[i] = std::uniform_real_distribution<double>(ranges[i].lo, ranges[i].hi)(rng);
    }
  }
  return normalized_shape(c, raw, seed);
}

Profile extrusion_profile(const ShapeSpec& spec) {
  if (!is_extrusion(spec.category)) {
    throw InvalidShapeError("extrusion_profile: not an extruded category");
  }
  return raw_profile(spec.category, spec.size);
}

PointCloud sample_point_cloud(const ShapeSpec& spec, std::size_t n) {
  if (n < 8) {
    throw std::invalid_argument("sample_point_cloud: need at least 8 points");
  }
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.instance_seed, 0x5eed0000ULL + n));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud cloud;
  cloud.points.reserve(n * 3);
  const auto push = [&cloud](double x, double y, double z) {
    cloud.points.insert(cloud.points.end(), {x, y, z});
  };
  const auto& s = spec.size;

  // picks a piece index proportionally to its area
  const auto pick = [&](const std::vector<double>& areas) {
    double total = 0.0;
    for (double a : areas) total += a;
    double r = unit(rng) * total;
    for (std::size_t i = 0; i + 1 < areas.size(); ++i) {
      if (r < areas[i]) return i;
      r -= areas[i];
    }
    return areas.size() - 1;
  };
  const auto disk = [&](double radius, double& x, double& y) {
    const double rr = radius * std::sqrt(unit(rng));
    const double th = 2.0 * kPi * unit(rng);
    x = rr * std::cos(th);
    y = rr * std::sin(th);
  };

  switch (spec.category) {
    case Category::kBox: {
      const double a = s[0], b = s[1], c = s[2];
      const std::vector<double> areas = {b * c, b * c, a * c, a * c, a * b, a * b};
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t f = pick(areas);
        const double u = 2.0 * unit(rng) - 1.0;
        const double v = 2.0 * unit(rng) - 1.0;
        const double sign = f % 2 == 0 ? 1.0 : -1.0;
        if (f < 2) {
          push(sign * a, u * b, v * c);
        } else if (f < 4) {
          push(u * a, sign * b, v * c);
        } else {
          push(u * a, v * b, sign * c);
        }
      }
      break;
    }
    case Category::kCylinder: {
      const double r = s[0], hh = s[1] / 2.0;
      const std::vector<double> areas = {2.0 * kPi * r * s[1], kPi * r * r, kPi * r * r};
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t f = pick(areas);
        if (f == 0) {
          const double th = 2.0 * kPi * unit(rng);
          push(r * std::cos(th), r * std::sin(th), (2.0 * unit(rng) - 1.0) * hh);
        } else {
          double x = 0.0, y = 0.0;
          disk(r, x, y);
          push(x, y, f == 1 ? hh : -hh);
        }
      }
      break;
    }
    case Category::kCone: {
      const double r = s[0], h = s[1], hh = s[1] / 2.0;
      const double slant = std::sqrt(r * r + h * h);
      const std::vector<double> areas = {kPi * r * slant, kPi * r * r};
      for (std::size_t k = 0; k < n; ++k) {
        if (pick(areas) == 0) {
          // lateral area grows linearly with distance from the apex
          const double q = std::sqrt(unit(rng));
          const double th = 2.0 * kPi * unit(rng);
          push(q * r * std::cos(th), q * r * std::sin(th), hh - q * h);
        } else {
          double x = 0.0, y = 0.0;
          disk(r, x, y);
          push(x, y, -hh);
        }
      }
      break;
    }
    case Category::kEllipsoid: {
      const double a = s[0], b = s[1], c = s[2];
      const double gmax = std::max({b * c, a * c, a * b});
      std::normal_distribution<double> gauss(0.0, 1.0);
      while (cloud.size() < n) {
        double x = gauss(rng), y = gauss(rng), z = gauss(rng);
        const double len = std::sqrt(x * x + y * y + z * z);
        if (len < 1e-12) continue;
        x /= len;
        y /= len;
        z /= len;
        // area element of the mapped sphere, for rejection toward uniform density
        const double g = std::sqrt((b * c * x) * (b * c * x) + (a * c * y) * (a * c * y) +
                                   (a * b * z) * (a * b * z));
        if (unit(rng) * gmax <= g) {
          push(a * x, b * y, c * z);
        }
      }
      break;
    }
    case Category::kLShape:
    case Category::kTShape: {
      const Profile p = raw_profile(spec.category, s);
      std::vector<double> areas;
      for (const auto& rc : p.rects) {
        const double a = (rc[1] - rc[0]) * (rc[3] - rc[2]);
        areas.push_back(a);  // front cap
        areas.push_back(a);  // back cap
      }
      const std::size_t caps = areas.size();
      const std::size_t m = p.outline.size();
      for (std::size_t e = 0; e < m; ++e) {
        const auto& v0 = p.outline[e];
        const auto& v1 = p.outline[(e + 1) % m];
        areas.push_back(std::hypot(v1[0] - v0[0], v1[1] - v0[1]) * 2.0 * p.half_depth);
      }
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t f = pick(areas);
        if (f < caps) {
          const auto& rc = p.rects[f / 2];
          const double x = rc[0] + unit(rng) * (rc[1] - rc[0]);
          const double y = rc[2] + unit(rng) * (rc[3] - rc[2]);
          push(x, y, f % 2 == 0 ? p.half_depth : -p.half_depth);
        } else {
          const std::size_t e = f - caps;
          const auto& v0 = p.outline[e];
          const auto& v1 = p.outline[(e + 1) % m];
          const double u = unit(rng);
          push(v0[0] + u * (v1[0] - v0[0]), v0[1] + u * (v1[1] - v0[1]),
               (2.0 * unit(rng) - 1.0) * p.half_depth);
        }
      }
      break;
    }
  }
  return cloud;
}

}  // namespace posedistill::datagen
