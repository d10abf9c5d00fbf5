#include "posedistill/posemath.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace posedistill::posemath {

double wrap_angle(double theta) {
  if (!std::isfinite(theta)) {
    throw std::invalid_argument("wrap_angle: non-finite angle");
  }
  if (theta >= -kPi && theta < kPi) {
    return theta;
  }
  double r = std::fmod(theta + kPi, 2.0 * kPi);
  if (r < 0.0) {
    r += 2.0 * kPi;
  }
  r -= kPi;
  // fmod/addition rounding can land exactly on the open end
  if (r >= kPi) {
    r = -kPi;
  }
  if (r < -kPi) {
    r = -kPi;
  }
  return r;
}

EulerPose::EulerPose(double alpha, double beta, double gamma)
    : alpha_(wrap_angle(alpha)),
      beta_(std::clamp(beta, -kPi / 2.0, kPi / 2.0)),
      gamma_(wrap_angle(gamma)) {
  if (!std::isfinite(beta)) {
    throw std::invalid_argument("EulerPose: non-finite elevation");
  }
}

EulerPose EulerPose::from_degrees(double alpha, double beta, double gamma) {
  return EulerPose(deg2rad(alpha), deg2rad(beta), deg2rad(gamma));
}

Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) {
        s += a[i][k] * b[k][j];
      }
      out[i][j] = s;
    }
  }
  return out;
}

Mat3 transpose(const Mat3& m) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out[i][j] = m[j][i];
    }
  }
  return out;
}

double determinant(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Mat3 rot_x(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return Mat3{{{1.0, 0.0, 0.0}, {0.0, c, -s}, {0.0, s, c}}};
}

Mat3 rot_y(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return Mat3{{{c, 0.0, s}, {0.0, 1.0, 0.0}, {-s, 0.0, c}}};
}

Mat3 rot_z(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return Mat3{{{c, -s, 0.0}, {s, c, 0.0}, {0.0, 0.0, 1.0}}};
}

RotationMatrix::RotationMatrix() : m_{{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}} {}

RotationMatrix::RotationMatrix(const Mat3& m) : m_(m) {
  const double err = orthonormality_error(m);
  if (!(err <= kTolerance)) {
    throw std::invalid_argument("RotationMatrix: not a proper rotation (error " +
                                std::to_string(err) + ")");
  }
}

double RotationMatrix::orthonormality_error(const Mat3& m) {
  const Mat3 mtm = multiply(transpose(m), m);
  double err = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double expected = i == j ? 1.0 : 0.0;
      err = std::max(err, std::abs(mtm[i][j] - expected));
    }
  }
  return std::max(err, std::abs(determinant(m) - 1.0));
}

RotationMatrix RotationMatrix::operator*(const RotationMatrix& other) const {
  return RotationMatrix(multiply(m_, other.m_));
}

RotationMatrix RotationMatrix::transposed() const {
  return RotationMatrix(transpose(m_));
}

std::array<double, 3> RotationMatrix::apply(const std::array<double, 3>& v) const {
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    out[i] = m_[i][0] * v[0] + m_[i][1] * v[1] + m_[i][2] * v[2];
  }
  return out;
}

RotationMatrix euler_to_matrix(const EulerPose& pose) {
  const Mat3 m =
      multiply(rot_z(pose.gamma()), multiply(rot_x(-pose.beta()), rot_y(-pose.alpha())));
  return RotationMatrix(m);
}

double geodesic_error_deg(const RotationMatrix& r1, const RotationMatrix& r2) {
  // relative rotation r1^T r2; atan2 of its sine and cosine stays accurate near 0 and 180
  const Mat3 rel = multiply(transpose(r1.matrix()), r2.matrix());
  const double c = (rel[0][0] + rel[1][1] + rel[2][2] - 1.0) / 2.0;
  const double sx = rel[2][1] - rel[1][2];
  const double sy = rel[0][2] - rel[2][0];
  const double sz = rel[1][0] - rel[0][1];
  const double s = 0.5 * std::sqrt(sx * sx + sy * sy + sz * sz);
  return rad2deg(std::atan2(s, c));
}

int AngleBinSpec::first_index(Angle a) const {
  return a == Angle::kElevation ? elevation_first : azimuth_first;
}

int AngleBinSpec::last_index(Angle a) const {
  return a == Angle::kElevation ? elevation_last : azimuth_last;
}

int AngleBinSpec::total_bins() const {
  return bin_count(Angle::kAzimuth) + bin_count(Angle::kElevation) + bin_count(Angle::kInplane);
}

int AngleBinSpec::block_offset(Angle a) const {
  switch (a) {
    case Angle::kAzimuth:
      return 0;
    case Angle::kElevation:
      return bin_count(Angle::kAzimuth);
    case Angle::kInplane:
      return bin_count(Angle::kAzimuth) + bin_count(Angle::kElevation);
  }
  return 0;
}

namespace {

double angle_of(const EulerPose& p, Angle a) {
  switch (a) {
    case Angle::kAzimuth:
      return p.alpha();
    case Angle::kElevation:
      return p.beta();
    case Angle::kInplane:
      return p.gamma();
  }
  return 0.0;
}

}  // namespace

PoseTarget encode_pose(const EulerPose& pose, const AngleBinSpec& spec) {
  PoseTarget target;
  for (Angle a : kAllAngles) {
    const double scaled = angle_of(pose, a) / spec.bin_width;
    const int bin = std::clamp(static_cast<int>(std::floor(scaled)), spec.first_index(a),
                               spec.last_index(a));
    double offset = scaled - bin;
    offset = std::clamp(offset, 0.0, std::nextafter(1.0, 0.0));
    target[a] = AngleTarget{bin, offset};
  }
  return target;
}

EulerPose decode_pose(const PosePrediction& pred, const AngleBinSpec& spec) {
  std::array<double, 3> angles{};
  for (Angle a : kAllAngles) {
    const auto i = static_cast<std::size_t>(a);
    const auto& scores = pred.bin_scores[i];
    const auto& offsets = pred.offsets[i];
    if (scores.size() != static_cast<std::size_t>(spec.bin_count(a)) ||
        offsets.size() != scores.size()) {
      throw std::invalid_argument("decode_pose: prediction does not match bin layout");
    }
    // max_element returns the first maximum, so ties go to the smaller bin
    const auto best = std::max_element(scores.begin(), scores.end());
    const auto column = static_cast<std::size_t>(best - scores.begin());
    const int bin = static_cast<int>(column) + spec.first_index(a);
    angles[i] = (bin + offsets[column]) * spec.bin_width;
  }
  return EulerPose(angles[0], angles[1], angles[2]);
}

PosePrediction one_hot_prediction(const PoseTarget& target, const AngleBinSpec& spec) {
  PosePrediction pred;
  for (Angle a : kAllAngles) {
    const auto i = static_cast<std::size_t>(a);
    const auto n = static_cast<std::size_t>(spec.bin_count(a));
    pred.bin_scores[i].assign(n, 0.0);
    pred.offsets[i].assign(n, 0.0);
    const auto col = static_cast<std::size_t>(spec.column(a, target[a].bin));
    pred.bin_scores[i][col] = 1.0;
    pred.offsets[i][col] = target[a].offset;
  }
  return pred;
}

double acc30(std::span<const double> errors_deg) {
  if (errors_deg.empty()) {
    throw EmptyEvaluationError();
  }
  const auto hits = std::count_if(errors_deg.begin(), errors_deg.end(),
                                  [](double e) { return e < 30.0; });
  return static_cast<double>(hits) / static_cast<double>(errors_deg.size());
}

double mederr(std::span<const double> errors_deg) {
  if (errors_deg.empty()) {
    throw EmptyEvaluationError();
  }
  std::vector<double> sorted(errors_deg.begin(), errors_deg.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) {
    return sorted[n / 2];
  }
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

EulerPose augment_flip(const EulerPose& pose) {
  return EulerPose(-pose.alpha(), pose.beta(), -pose.gamma());
}

EulerPose augment_rotate(const EulerPose& pose, double phi) {
  return EulerPose(pose.alpha(), pose.beta(), pose.gamma() + phi);
}

}  // namespace posedistill::posemath
