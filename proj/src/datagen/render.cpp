#include "posedistill/datagen/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "posedistill/io.hpp"

namespace posedistill::datagen {

namespace {

using Vec3 = std::array<double, 3>;
constexpr double kMiss = std::numeric_limits<double>::infinity();

struct Ray {
  Vec3 o;
  Vec3 d;
};

// Entry distance into the axis-aligned box |p - c| <= h, or kMiss.
double hit_box(const Ray& ray, const Vec3& c, const Vec3& h) {
  double tnear = -kMiss;
  double tfar = kMiss;
  for (int k = 0; k < 3; ++k) {
    const double o = ray.o[k] - c[k];
    const double d = ray.d[k];
    if (std::abs(d) < 1e-15) {
      if (std::abs(o) > h[k]) return kMiss;
      continue;
    }
    double t1 = (-h[k] - o) / d;
    double t2 = (h[k] - o) / d;
    if (t1 > t2) std::swap(t1, t2);
    tnear = std::max(tnear, t1);
    tfar = std::min(tfar, t2);
  }
  return tnear <= tfar && tnear >= 0.0 ? tnear : kMiss;
}

double hit_cylinder(const Ray& ray, double r, double hh) {
  const auto& o = ray.o;
  const auto& d = ray.d;
  double best = kMiss;
  const double a = d[0] * d[0] + d[1] * d[1];
  if (a > 1e-15) {
    const double b = 2.0 * (o[0] * d[0] + o[1] * d[1]);
    const double c = o[0] * o[0] + o[1] * o[1] - r * r;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double t = (-b - std::sqrt(disc)) / (2.0 * a);
      if (t >= 0.0 && std::abs(o[2] + t * d[2]) <= hh) best = t;
    }
  }
  if (std::abs(d[2]) > 1e-15) {
    for (double zc : {hh, -hh}) {
      const double t = (zc - o[2]) / d[2];
      const double x = o[0] + t * d[0];
      const double y = o[1] + t * d[1];
      if (t >= 0.0 && x * x + y * y <= r * r) best = std::min(best, t);
    }
  }
  return best;
}

// Apex at z = +hh, base disk of radius r at z = -hh.
double hit_cone(const Ray& ray, double r, double h) {
  const double hh = h / 2.0;
  const auto& o = ray.o;
  const auto& d = ray.d;
  const double k2 = (r / h) * (r / h);
  const double w0 = hh - o[2];
  const double a = d[0] * d[0] + d[1] * d[1] - k2 * d[2] * d[2];
  const double b = 2.0 * (o[0] * d[0] + o[1] * d[1] + k2 * w0 * d[2]);
  const double c = o[0] * o[0] + o[1] * o[1] - k2 * w0 * w0;
  double best = kMiss;
  const auto consider = [&](double t) {
    const double z = o[2] + t * d[2];
    if (t >= 0.0 && z >= -hh && z <= hh) best = std::min(best, t);
  };
  if (std::abs(a) > 1e-15) {
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double s = std::sqrt(disc);
      consider((-b - s) / (2.0 * a));
      consider((-b + s) / (2.0 * a));
    }
  } else if (std::abs(b) > 1e-15) {
    consider(-c / b);
  }
  if (std::abs(d[2]) > 1e-15) {
    const double t = (-hh - o[2]) / d[2];
    const double x = o[0] + t * d[0];
    const double y = o[1] + t * d[1];
    if (t >= 0.0 && x * x + y * y <= r * r) best = std::min(best, t);
  }
  return best;
}

double hit_ellipsoid(const Ray& ray, const Vec3& s) {
  Vec3 o{};
  Vec3 d{};
  for (int k = 0; k < 3; ++k) {
    o[k] = ray.o[k] / s[k];
    d[k] = ray.d[k] / s[k];
  }
  const double a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
  const double b = 2.0 * (o[0] * d[0] + o[1] * d[1] + o[2] * d[2]);
  const double c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - 1.0;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return kMiss;
  const double t = (-b - std::sqrt(disc)) / (2.0 * a);
  return t >= 0.0 ? t : kMiss;
}

double hit_shape(const ShapeSpec& spec, const Ray& ray) {
  const auto& s = spec.size;
  switch (spec.category) {
    case Category::kBox:
      return hit_box(ray, {0.0, 0.0, 0.0}, {s[0], s[1], s[2]});
    case Category::kCylinder:
      return hit_cylinder(ray, s[0], s[1] / 2.0);
    case Category::kCone:
      return hit_cone(ray, s[0], s[1]);
    case Category::kEllipsoid:
      return hit_ellipsoid(ray, {s[0], s[1], s[2]});
    case Category::kLShape:
    case Category::kTShape: {
      const Profile p = extrusion_profile(spec);
      double best = kMiss;
      for (const auto& rc : p.rects) {
        const Vec3 c{(rc[0] + rc[1]) / 2.0, (rc[2] + rc[3]) / 2.0, 0.0};
        const Vec3 h{(rc[1] - rc[0]) / 2.0, (rc[3] - rc[2]) / 2.0, p.half_depth};
        best = std::min(best, hit_box(ray, c, h));
      }
      return best;
    }
  }
  return kMiss;
}

// cos/sin with exact values at multiples of 90 degrees.
std::pair<double, double> snapped_cos_sin(double phi) {
  double c = std::cos(phi);
  double s = std::sin(phi);
  for (double* v : {&c, &s}) {
    if (std::abs(*v) < 1e-12) *v = 0.0;
    if (std::abs(std::abs(*v) - 1.0) < 1e-12) *v = std::copysign(1.0, *v);
  }
  return {c, s};
}

}  // namespace

RenderImage render(const ShapeSpec& spec, const posemath::EulerPose& pose, int resolution) {
  if (resolution < 8) {
    throw std::invalid_argument("render: resolution must be at least 8, got " +
                                std::to_string(resolution));
  }
  spec.validate();
  const auto rot = posemath::euler_to_matrix(pose);
  const auto& m = rot.matrix();
  RenderImage img{resolution, resolution,
                  std::vector<float>(static_cast<std::size_t>(resolution * resolution), 0.0f)};
  const double n = resolution;
  const Vec3 dir{-m[2][0], -m[2][1], -m[2][2]};
  for (int j = 0; j < resolution; ++j) {
    const double v = 1.0 - 2.0 * (j + 0.5) / n;
    for (int i = 0; i < resolution; ++i) {
      const double u = 2.0 * (i + 0.5) / n - 1.0;
      // object-frame origin of the ray through camera point (u, v, 2)
      Ray ray{{}, dir};
      for (int k = 0; k < 3; ++k) {
        ray.o[k] = u * m[0][k] + v * m[1][k] + 2.0 * m[2][k];
      }
      const double t = hit_shape(spec, ray);
      if (t < kMiss) {
        const double z = std::clamp(2.0 - t, -1.0, 1.0);
        img.pixels[static_cast<std::size_t>(j * resolution + i)] =
            static_cast<float>(0.1 + 0.9 * (z + 1.0) / 2.0);
      }
    }
  }
  return img;
}

void add_noise(RenderImage& image, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (float& p : image.pixels) {
    p = static_cast<float>(std::clamp(static_cast<double>(p) + gauss(rng), 0.0, 1.0));
  }
}

RenderImage flip_horizontal(const RenderImage& image) {
  RenderImage out = image;
  for (int j = 0; j < image.height; ++j) {
    for (int i = 0; i < image.width; ++i) {
      out.pixels[static_cast<std::size_t>(j * image.width + i)] = image.at(image.width - 1 - i, j);
    }
  }
  return out;
}

RenderImage rotate_nearest(const RenderImage& image, double phi) {
  const auto [c, s] = snapped_cos_sin(phi);
  RenderImage out{image.width, image.height,
                  std::vector<float>(image.pixels.size(), 0.0f)};
  const double hw = image.width / 2.0;
  const double hh = image.height / 2.0;
  for (int j = 0; j < image.height; ++j) {
    const double y = hh - (j + 0.5);
    for (int i = 0; i < image.width; ++i) {
      const double x = (i + 0.5) - hw;
      // inverse rotation finds the source of destination pixel (x, y)
      const double sx = c * x + s * y;
      const double sy = -s * x + c * y;
      const auto si = static_cast<long>(std::floor(sx + hw));
      const auto sj = static_cast<long>(std::floor(hh - sy));
      if (si >= 0 && si < image.width && sj >= 0 && sj < image.height) {
        out.pixels[static_cast<std::size_t>(j * image.width + i)] =
            image.at(static_cast<int>(si), static_cast<int>(sj));
      }
    }
  }
  return out;
}

double mean_abs_diff(const RenderImage& a, const RenderImage& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("mean_abs_diff: image sizes differ");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < a.pixels.size(); ++k) {
    total += std::abs(static_cast<double>(a.pixels[k]) - static_cast<double>(b.pixels[k]));
  }
  return total / static_cast<double>(a.pixels.size());
}

void write_pgm(const std::filesystem::path& path, const RenderImage& image) {
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (float p : image.pixels) {
    bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f)));
  }
  io::write_file(path, bytes);
}

}  // namespace posedistill::datagen
