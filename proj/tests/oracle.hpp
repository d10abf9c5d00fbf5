#pragma once

// Independent reference implementations used only by the tests. Nothing in
// here calls into the library, so agreement with it is meaningful.

#include <array>
#include <cmath>
#include <numbers>

namespace oracle {

using Quat = std::array<double, 4>;  // w, x, y, z

inline Quat axis_angle(double x, double y, double z, double theta) {
  const double s = std::sin(theta / 2.0);
  return {std::cos(theta / 2.0), x * s, y * s, z * s};
}

inline Quat qmul(const Quat& a, const Quat& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

// Viewpoint rotation as a quaternion: in-plane about z, then elevation about
// x (negated), then azimuth about y (negated), composed right to left.
inline Quat viewpoint(double alpha, double beta, double gamma) {
  return qmul(axis_angle(0, 0, 1, gamma),
              qmul(axis_angle(1, 0, 0, -beta), axis_angle(0, 1, 0, -alpha)));
}

inline std::array<std::array<double, 3>, 3> to_matrix(const Quat& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

// Angle between two orientations in degrees, from the quaternion inner product.
inline double angle_between_deg(const Quat& a, const Quat& b) {
  double d = std::fabs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]);
  d = std::min(1.0, d);
  return 2.0 * std::acos(d) * 180.0 / std::numbers::pi;
}

}  // namespace oracle
