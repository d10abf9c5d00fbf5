#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "oracle.hpp"
#include "posedistill/posemath.hpp"

using namespace posedistill::posemath;

namespace {

EulerPose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> full(-kPi, kPi);
  std::uniform_real_distribution<double> half(-kPi / 2.0, kPi / 2.0);
  return EulerPose(full(rng), half(rng), full(rng));
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
  double m = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m = std::max(m, std::fabs(a[i][j] - b[i][j]));
  return m;
}

const Mat3 kMirror = {{{-1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

}  // namespace

TEST_CASE("wrap_angle lands in [-pi, pi)") {
  CHECK(wrap_angle(kPi) == -kPi);
  CHECK(wrap_angle(-kPi) == -kPi);
  CHECK(wrap_angle(0.25) == 0.25);
  CHECK(wrap_angle(3.0 * kPi) == doctest::Approx(-kPi));
  CHECK(wrap_angle(-2.5 * kPi) == doctest::Approx(-0.5 * kPi));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> wide(-100.0, 100.0);
  for (int i = 0; i < 2000; ++i) {
    const double t = wide(rng);
    const double w = wrap_angle(t);
    CHECK(w >= -kPi);
    CHECK(w < kPi);
    const double turns = (t - w) / (2.0 * kPi);
    CHECK(std::fabs(turns - std::round(turns)) < 1e-9);
  }
  CHECK_THROWS_AS(wrap_angle(std::nan("")), std::invalid_argument);
}

TEST_CASE("EulerPose clamps elevation") {
  EulerPose p(0.0, 2.0, 0.0);
  CHECK(p.beta() == kPi / 2.0);
  CHECK(EulerPose(0.0, -3.0, 0.0).beta() == -kPi / 2.0);
}

TEST_CASE("euler_to_matrix matches a quaternion composition") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const EulerPose p = random_pose(rng);
    const Mat3 want = oracle::to_matrix(oracle::viewpoint(p.alpha(), p.beta(), p.gamma()));
    CHECK(max_abs_diff(euler_to_matrix(p).matrix(), want) < 1e-12);
  }
}

TEST_CASE("elementary rotations move the basis vectors the right way") {
  const RotationMatrix rz(rot_z(kPi / 2.0));
  const auto ex = rz.apply({1, 0, 0});
  CHECK(ex[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(ex[1] == doctest::Approx(1.0));
  const RotationMatrix rx(rot_x(kPi / 2.0));
  const auto ey = rx.apply({0, 1, 0});
  CHECK(ey[2] == doctest::Approx(1.0));
  const RotationMatrix ry(rot_y(kPi / 2.0));
  const auto ez = ry.apply({0, 0, 1});
  CHECK(ez[0] == doctest::Approx(1.0));
}

TEST_CASE("RotationMatrix rejects non-rotations") {
  CHECK_THROWS_AS(RotationMatrix{kMirror}, std::invalid_argument);
  Mat3 scaled = rot_z(0.3);
  scaled[0][0] *= 1.01;
  CHECK_THROWS_AS(RotationMatrix{scaled}, std::invalid_argument);
}

TEST_CASE("bin layout") {
  const AngleBinSpec spec;
  CHECK(spec.bin_count(Angle::kAzimuth) == 24);
  CHECK(spec.bin_count(Angle::kElevation) == 12);
  CHECK(spec.bin_count(Angle::kInplane) == 24);
  CHECK(spec.total_bins() == 60);
  CHECK(spec.block_offset(Angle::kAzimuth) == 0);
  CHECK(spec.block_offset(Angle::kElevation) == 24);
  CHECK(spec.block_offset(Angle::kInplane) == 36);
}

TEST_CASE("encode_pose bins and offsets at known angles") {
  const double w = kPi / 12.0;
  SUBCASE("zero sits at the start of bin 0") {
    const auto t = encode_pose(EulerPose(0.0, 0.0, 0.0));
    for (Angle a : kAllAngles) {
      CHECK(t[a].bin == 0);
      CHECK(t[a].offset == 0.0);
    }
  }
  SUBCASE("azimuth -pi is the first bin") {
    const auto t = encode_pose(EulerPose(-kPi, 0.0, 0.0));
    CHECK(t[Angle::kAzimuth].bin == -12);
    CHECK(t[Angle::kAzimuth].offset == doctest::Approx(0.0));
  }
  SUBCASE("azimuth just below pi is the last bin") {
    const auto t = encode_pose(EulerPose(kPi - 1e-6, 0.0, 0.0));
    CHECK(t[Angle::kAzimuth].bin == 11);
    CHECK(t[Angle::kAzimuth].offset == doctest::Approx(1.0 - 1e-6 / w));
  }
  SUBCASE("elevation pi/2 stays in the top bin") {
    const auto t = encode_pose(EulerPose(0.0, kPi / 2.0, 0.0));
    CHECK(t[Angle::kElevation].bin == 5);
    CHECK(t[Angle::kElevation].offset < 1.0);
    CHECK(t[Angle::kElevation].offset == doctest::Approx(1.0));
  }
  SUBCASE("negative angles") {
    const auto t = encode_pose(EulerPose(-0.5 * w, -2.25 * w, -11.5 * w));
    CHECK(t[Angle::kAzimuth].bin == -1);
    CHECK(t[Angle::kAzimuth].offset == doctest::Approx(0.5));
    CHECK(t[Angle::kElevation].bin == -3);
    CHECK(t[Angle::kElevation].offset == doctest::Approx(0.75));
    CHECK(t[Angle::kInplane].bin == -12);
    CHECK(t[Angle::kInplane].offset == doctest::Approx(0.5));
  }
}

TEST_CASE("decode(encode(p)) reproduces p over 10000 random poses") {
  std::mt19937_64 rng(20240917);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const EulerPose p = random_pose(rng);
    const EulerPose q = decode_pose(one_hot_prediction(encode_pose(p)));
    worst = std::max({worst, std::fabs(p.alpha() - q.alpha()), std::fabs(p.beta() - q.beta()),
                      std::fabs(p.gamma() - q.gamma())});
    const auto t = encode_pose(p);
    for (Angle a : kAllAngles) {
      CHECK(t[a].offset >= 0.0);
      CHECK(t[a].offset < 1.0);
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("decode breaks score ties toward the smaller bin") {
  PosePrediction pred = one_hot_prediction(encode_pose(EulerPose(0, 0, 0)));
  auto& s = pred.bin_scores[0];
  std::fill(s.begin(), s.end(), 0.0);
  s[3] = 2.0;
  s[17] = 2.0;
  pred.offsets[0][3] = 0.5;
  pred.offsets[0][17] = 0.25;
  const EulerPose q = decode_pose(pred);
  CHECK(q.alpha() == doctest::Approx((3 - 12 + 0.5) * kPi / 12.0));
}

TEST_CASE("decode rejects a prediction with the wrong layout") {
  PosePrediction pred = one_hot_prediction(encode_pose(EulerPose(0, 0, 0)));
  pred.bin_scores[1].pop_back();
  CHECK_THROWS_AS(decode_pose(pred), std::invalid_argument);
}

TEST_CASE("geodesic error agrees with the quaternion angle") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const EulerPose a = random_pose(rng);
    const EulerPose b = random_pose(rng);
    const double want = oracle::angle_between_deg(
        oracle::viewpoint(a.alpha(), a.beta(), a.gamma()),
        oracle::viewpoint(b.alpha(), b.beta(), b.gamma()));
    CHECK(geodesic_error_deg(euler_to_matrix(a), euler_to_matrix(b)) ==
          doctest::Approx(want).epsilon(1e-7));
  }
}

TEST_CASE("geodesic error is a metric on SO(3)") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto a = euler_to_matrix(random_pose(rng));
    const auto b = euler_to_matrix(random_pose(rng));
    const auto c = euler_to_matrix(random_pose(rng));
    const double ab = geodesic_error_deg(a, b);
    CHECK(geodesic_error_deg(a, a) < 1e-5);
    CHECK(ab >= 0.0);
    CHECK(ab <= 180.0);
    CHECK(ab == doctest::Approx(geodesic_error_deg(b, a)).epsilon(1e-12));
    CHECK(geodesic_error_deg(a, c) <= ab + geodesic_error_deg(b, c) + 1e-9);
    // left-invariance
    CHECK(geodesic_error_deg(c * a, c * b) == doctest::Approx(ab).epsilon(1e-9));
  }
  CHECK(geodesic_error_deg(RotationMatrix(), RotationMatrix(rot_z(kPi))) ==
        doctest::Approx(180.0));
  CHECK(geodesic_error_deg(RotationMatrix(), RotationMatrix(rot_x(kPi / 6.0))) ==
        doctest::Approx(30.0));
}

TEST_CASE("flip is an involution and mirrors the rotation") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const EulerPose p = random_pose(rng);
    const EulerPose ff = augment_flip(augment_flip(p));
    CHECK(geodesic_error_deg(euler_to_matrix(p), euler_to_matrix(ff)) < 1e-6);
    const Mat3 mirrored =
        multiply(kMirror, multiply(euler_to_matrix(p).matrix(), kMirror));
    CHECK(max_abs_diff(mirrored, euler_to_matrix(augment_flip(p)).matrix()) < 1e-12);
  }
}

TEST_CASE("in-plane augmentation composes with a camera z rotation") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> phi_dist(-kPi / 6.0, kPi / 6.0);
  for (int i = 0; i < 500; ++i) {
    const EulerPose p = random_pose(rng);
    const double phi = phi_dist(rng);
    const Mat3 want = multiply(rot_z(phi), euler_to_matrix(p).matrix());
    CHECK(max_abs_diff(euler_to_matrix(augment_rotate(p, phi)).matrix(), want) < 1e-12);
  }
}

TEST_CASE("acc30 and mederr") {
  const std::vector<double> e = {10.0, 29.999, 30.0, 45.0, 100.0};
  CHECK(acc30(e) == doctest::Approx(0.4));
  CHECK(mederr(e) == 30.0);
  const std::vector<double> even = {40.0, 10.0, 20.0, 30.0};
  CHECK(mederr(even) == 25.0);
  CHECK(acc30(even) == 0.5);
  const std::vector<double> none;
  CHECK_THROWS_AS(acc30(none), EmptyEvaluationError);
  CHECK_THROWS_AS(mederr(none), EmptyEvaluationError);
}
