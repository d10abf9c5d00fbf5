#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "posedistill/diff/gradcheck.hpp"
#include "posedistill/diff/ops.hpp"
#include "posedistill/errors.hpp"
#include "posedistill/io.hpp"
#include "posedistill/models/models.hpp"

using namespace posedistill;
using namespace posedistill::models;
using diff::Shape;
using diff::Tape;
using diff::Tensor;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.resolution = 8;
  c.points = 16;
  c.teacher_image_hidden = 12;
  c.teacher_image_dim = 8;
  c.point_hidden = 6;
  c.shape_dim = 8;
  c.fuse_hidden = {10, 8, 8};
  c.fused_dim = 4;
  c.student_image_hidden = 12;
  c.student_image_dim = 10;
  c.student_head_hidden = {8, 6};
  return c;
}

Tensor rand_tensor(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("posedistill_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> names_in_group(const Network& n, const std::string& group) {
  std::vector<std::string> out;
  for (const auto& e : n.store().entries()) {
    if (e.group == group) out.push_back(e.name);
  }
  return out;
}

}  // namespace

TEST_CASE("teacher output shapes and ranges") {
  TeacherModel t(tiny(), 1);
  Tape tape;
  auto out = t.forward(tape, tape.constant(rand_tensor({5, 64}, 1)),
                       tape.constant(rand_tensor({5, 48}, 2, -1, 1)), true, true);
  CHECK(out.x_t.shape() == Shape{5, 8});
  CHECK(out.d_t.shape() == Shape{5, 8});
  CHECK(out.h_t.shape() == Shape{5, 4});
  CHECK(out.z_t.shape() == Shape{5, 4});
  CHECK(out.pose.logits.shape() == Shape{5, 60});
  CHECK(out.pose.offsets.shape() == Shape{5, 60});
  for (double v : out.h_t.value().data()) CHECK(std::fabs(v) < 1.0);
  for (double v : out.pose.offsets.value().data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  Tape t2;
  auto no_z = t.forward(t2, t2.constant(rand_tensor({5, 64}, 1)),
                        t2.constant(rand_tensor({5, 48}, 2, -1, 1)), false, false);
  CHECK_FALSE(no_z.z_t.valid());
}

TEST_CASE("student output shapes") {
  StudentModel s(tiny(), 1);
  Tape tape;
  auto out = s.forward(tape, tape.constant(rand_tensor({3, 64}, 4)), true, true);
  CHECK(out.x_s.shape() == Shape{3, 10});
  CHECK(out.h_s.shape() == Shape{3, 4});
  CHECK(out.z_s.shape() == Shape{3, 4});
  CHECK(out.pose.logits.shape() == Shape{3, 60});
}

TEST_CASE("shape features ignore point order") {
  TeacherModel t(tiny(), 2);
  const Tensor clouds = rand_tensor({2, 48}, 5, -1, 1);
  Tensor shuffled = clouds;
  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(6);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 16; ++p)
      for (std::size_t k = 0; k < 3; ++k)
        shuffled[b * 48 + perm[p] * 3 + k] = clouds[b * 48 + p * 3 + k];
  Tape a, b;
  const Tensor da = t.shape_features(a, a.constant(clouds), false).value();
  const Tensor db = t.shape_features(b, b.constant(shuffled), false).value();
  CHECK(da == db);
}

TEST_CASE("parameter groups and layer layout") {
  TeacherModel t(tiny(), 3);
  const auto groups = t.store().groups();
  for (const char* g : {TeacherModel::kImageGroup, TeacherModel::kPointGroup,
                        TeacherModel::kFuseGroup, TeacherModel::kHeadGroup,
                        TeacherModel::kProjGroup}) {
    CHECK(std::find(groups.begin(), groups.end(), g) != groups.end());
  }
  // a linear layer followed by batch norm carries no bias
  CHECK(t.store().contains("teacher.image.l0.w"));
  CHECK_FALSE(t.store().contains("teacher.image.l0.b"));
  CHECK(t.store().contains("teacher.image.l0.bn.gamma"));
  CHECK(t.store().entry("teacher.image.l0.bn.mean").buffer);
  CHECK(t.store().contains("teacher.fuse.l0.b"));
  CHECK_FALSE(t.store().contains("teacher.fuse.l0.bn.gamma"));
  CHECK(t.store().value("teacher.image.l0.w").shape() == Shape{64, 12});
  CHECK(t.store().value("teacher.fuse.l0.w").shape() == Shape{16, 10});
  CHECK(t.store().value("teacher.fuse.l3.w").shape() == Shape{8, 4});

  StudentModel s(tiny(), 3);
  CHECK(names_in_group(s, StudentModel::kStackGroup).size() > 0);
  CHECK(s.store().value("student.image.l1.w").shape() == Shape{12, 10});
}

TEST_CASE("weight init variance follows gain / fan_in") {
  ModelConfig c;  // default widths give enough samples for a variance estimate
  StudentModel s(c, 7);
  const Tensor& w = s.store().value("student.image.l0.w");  // fan_in 1024, ReLU
  double sq = 0.0;
  for (double v : w.data()) sq += v * v;
  CHECK(sq / w.size() == doctest::Approx(2.0 / 1024.0).epsilon(0.05));
  const Tensor& head = s.store().value("student.bins.l0.w");  // fan_in 16, linear
  double hq = 0.0;
  for (double v : head.data()) hq += v * v;
  CHECK(hq / head.size() == doctest::Approx(1.0 / 16.0).epsilon(0.25));
}

TEST_CASE("same seed, same network; different seed, different network") {
  TeacherModel a(tiny(), 9), b(tiny(), 9), c(tiny(), 10);
  for (std::size_t i = 0; i < a.store().entries().size(); ++i) {
    CHECK(a.store().entries()[i].value == b.store().entries()[i].value);
  }
  CHECK_FALSE(a.store().value("teacher.image.l0.w") == c.store().value("teacher.image.l0.w"));
}

TEST_CASE("freezing keeps parameters out of the gradient and BN statistics fixed") {
  StudentModel s(tiny(), 4);
  CHECK_THROWS_AS(s.freeze({"student.nothing"}), std::invalid_argument);
  s.freeze({StudentModel::kImageGroup});
  const Tensor mean_before = s.store().value("student.image.l0.bn.mean");
  const Tensor stack_mean_before = s.store().value("student.stack.l0.bn.mean");
  Tape tape;
  auto out = s.forward(tape, tape.constant(rand_tensor({6, 64}, 8)), true, false);
  tape.backward(diff::sum(out.pose.logits));
  const auto g = tape.parameter_gradients();
  CHECK(g.count("student.image.l0.w") == 0);
  CHECK(g.count("student.stack.l0.w") == 1);
  CHECK(s.store().value("student.image.l0.bn.mean") == mean_before);
  CHECK_FALSE(s.store().value("student.stack.l0.bn.mean") == stack_mean_before);
  s.unfreeze();
  CHECK_FALSE(s.store().group_frozen(StudentModel::kImageGroup));
}

TEST_CASE("eval-mode outputs are differentiable in the input") {
  StudentModel s(tiny(), 5);
  diff::ScalarFn fn = [&s](Tape& tape, std::span<const diff::Var> v) {
    auto out = s.forward(tape, v[0], false, true);
    return diff::add(diff::sum(diff::mul(out.pose.logits, out.pose.logits)),
                     diff::sum(out.z_s));
  };
  const std::vector<Tensor> in = {rand_tensor({2, 64}, 11)};
  CHECK(diff::grad_check(fn, in) < 1e-6);

  TeacherModel t(tiny(), 5);
  diff::ScalarFn tf = [&t](Tape& tape, std::span<const diff::Var> v) {
    auto out = t.forward(tape, v[0], v[1], false, true);
    return diff::add(diff::sum(out.h_t), diff::sum(out.pose.offsets));
  };
  const std::vector<Tensor> tin = {rand_tensor({2, 64}, 12), rand_tensor({2, 48}, 13, -1, 1)};
  CHECK(diff::grad_check(tf, tin) < 1e-6);
}

TEST_CASE("save and load reproduce outputs bitwise") {
  const auto dir = temp_dir("models_rt");
  TeacherModel t(tiny(), 6);
  StudentModel s(tiny(), 6);
  // move the BN statistics away from their init
  {
    Tape tape;
    t.forward(tape, tape.constant(rand_tensor({4, 64}, 1)),
              tape.constant(rand_tensor({4, 48}, 2, -1, 1)), true, false);
    Tape tape2;
    s.forward(tape2, tape2.constant(rand_tensor({4, 64}, 1)), true, false);
  }
  t.save(dir, "teacher", {{"note", "x"}});
  s.save(dir, "student");
  TeacherModel t2 = load_teacher(dir, "teacher");
  StudentModel s2 = load_student(dir, "student");
  CHECK(t2.config() == t.config());
  CHECK(saved_kind(dir, "teacher") == ModelKind::kTeacher);
  CHECK(saved_kind(dir, "student") == ModelKind::kStudent);
  const Tensor img = rand_tensor({3, 64}, 3);
  const Tensor cl = rand_tensor({3, 48}, 4, -1, 1);
  Tape a, b;
  CHECK(t.forward(a, a.constant(img), a.constant(cl), false, true).pose.logits.value() ==
        t2.forward(b, b.constant(img), b.constant(cl), false, true).pose.logits.value());
  Tape c, d;
  CHECK(s.forward(c, c.constant(img), false, false).pose.offsets.value() ==
        s2.forward(d, d.constant(img), false, false).pose.offsets.value());
  t2.save(dir, "teacher_again", {{"note", "x"}});
  CHECK(io::read_file(dir / "teacher.bin") == io::read_file(dir / "teacher_again.bin"));

  CHECK_THROWS_AS(load_student(dir, "teacher"), CompatibilityError);
  CHECK_THROWS_AS(load_teacher(dir, "student"), CompatibilityError);
}

TEST_CASE("model config validation and json") {
  ModelConfig c = tiny();
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  c.fuse_hidden = {8, 8};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.student_image_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("to_predictions splits the concatenated heads") {
  Tensor logits({1, 60}, 0.0), offsets({1, 60}, 0.5);
  logits[3] = 1.0;         // alpha column 3
  logits[24 + 7] = 1.0;    // beta column 7
  logits[36 + 20] = 1.0;   // gamma column 20
  const auto preds = to_predictions(logits, offsets);
  REQUIRE(preds.size() == 1);
  CHECK(preds[0].bin_scores[0].size() == 24);
  CHECK(preds[0].bin_scores[1].size() == 12);
  CHECK(preds[0].bin_scores[1][7] == 1.0);
  CHECK(preds[0].bin_scores[2][20] == 1.0);
}
