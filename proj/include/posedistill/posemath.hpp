#pragma once

#include <array>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace posedistill::posemath {

inline constexpr double kPi = std::numbers::pi;

/// Wraps an angle into [-pi, pi). Values already in range are returned unchanged.
double wrap_angle(double theta);

/// Viewpoint as (azimuth, elevation, in-plane) Euler angles in radians.
///
/// alpha and gamma are kept wrapped into [-pi, pi); beta is clamped to
/// [-pi/2, pi/2]. The constructor normalizes, so every instance satisfies
/// those ranges.
class EulerPose {
 public:
  EulerPose() = default;
  EulerPose(double alpha, double beta, double gamma);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double gamma() const { return gamma_; }

  static EulerPose from_degrees(double alpha, double beta, double gamma);

  friend bool operator==(const EulerPose&, const EulerPose&) = default;

 private:
  double alpha_ = 0.0;
  double beta_ = 0.0;
  double gamma_ = 0.0;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 multiply(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& m);
double determinant(const Mat3& m);

// Elementary rotations. Each is a right-handed rotation by `theta` about
// the named camera-frame axis:
//   rot_x: [[1,0,0],[0,c,-s],[0,s,c]]
//   rot_y: [[c,0,s],[0,1,0],[-s,0,c]]
//   rot_z: [[c,-s,0],[s,c,0],[0,0,1]]
// The camera looks down -z from +z; image u is +x, image v is +y.
Mat3 rot_x(double theta);
Mat3 rot_y(double theta);
Mat3 rot_z(double theta);

/// Proper rotation matrix. Construction checks orthonormality and det = +1.
class RotationMatrix {
 public:
  static constexpr double kTolerance = 1e-9;

  RotationMatrix();
  explicit RotationMatrix(const Mat3& m);

  const Mat3& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_[r][c]; }

  RotationMatrix operator*(const RotationMatrix& other) const;
  RotationMatrix transposed() const;
  std::array<double, 3> apply(const std::array<double, 3>& v) const;

  /// Max deviation of m^T m from identity and |det - 1|.
  static double orthonormality_error(const Mat3& m);

 private:
  Mat3 m_;
};

/// R = R_inplane(gamma) * R_elev(-beta) * R_azim(-alpha), with
/// R_inplane = rot_z, R_elev = rot_x, R_azim = rot_y.
RotationMatrix euler_to_matrix(const EulerPose& pose);

/// Geodesic distance on SO(3), in degrees within [0, 180].
double geodesic_error_deg(const RotationMatrix& r1, const RotationMatrix& r2);

/// Which Euler angle a bin layout refers to.
enum class Angle { kAzimuth = 0, kElevation = 1, kInplane = 2 };
inline constexpr std::array<Angle, 3> kAllAngles = {Angle::kAzimuth, Angle::kElevation,
                                                   Angle::kInplane};

/// Uniform bin layout: alpha and gamma use indices [-12, 11], beta [-6, 5].
struct AngleBinSpec {
  double bin_width = kPi / 12.0;
  int azimuth_first = -12;
  int azimuth_last = 11;
  int elevation_first = -6;
  int elevation_last = 5;

  int first_index(Angle a) const;
  int last_index(Angle a) const;
  /// Number of bins for an angle (24 for alpha/gamma, 12 for beta by default).
  int bin_count(Angle a) const { return last_index(a) - first_index(a) + 1; }
  /// Column of bin index `bin` within that angle's score vector.
  int column(Angle a, int bin) const { return bin - first_index(a); }
  int total_bins() const;
  /// Offset of angle `a`'s block inside a concatenated [alpha|beta|gamma] vector.
  int block_offset(Angle a) const;
};

struct AngleTarget {
  int bin = 0;
  double offset = 0.0;
};

/// Ground-truth bin and in-bin offset for each angle.
struct PoseTarget {
  std::array<AngleTarget, 3> angles;
  const AngleTarget& operator[](Angle a) const { return angles[static_cast<int>(a)]; }
  AngleTarget& operator[](Angle a) { return angles[static_cast<int>(a)]; }
};

/// Scores and offsets per angle. offsets[a][k] belongs to column k.
struct PosePrediction {
  std::array<std::vector<double>, 3> bin_scores;
  std::array<std::vector<double>, 3> offsets;
};

PoseTarget encode_pose(const EulerPose& pose, const AngleBinSpec& spec = {});
EulerPose decode_pose(const PosePrediction& pred, const AngleBinSpec& spec = {});

/// One-hot scores on the target bins with the target offsets; feeding this to
/// decode_pose reproduces the encoded pose.
PosePrediction one_hot_prediction(const PoseTarget& target, const AngleBinSpec& spec = {});

/// Raised when a metric is asked to summarize an empty evaluation set.
class EmptyEvaluationError : public std::invalid_argument {
 public:
  EmptyEvaluationError() : std::invalid_argument("empty evaluation set") {}
};

/// Fraction of errors strictly below 30 degrees.
double acc30(std::span<const double> errors_deg);
/// Median error; the mean of the two central values for even lengths.
double mederr(std::span<const double> errors_deg);

/// Horizontal image flip: (-alpha, beta, -gamma).
EulerPose augment_flip(const EulerPose& pose);
/// Image rotation by phi: (alpha, beta, gamma + phi).
EulerPose augment_rotate(const EulerPose& pose, double phi);

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace posedistill::posemath
