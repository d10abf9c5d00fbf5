#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "posedistill/datagen/dataset.hpp"
#include "posedistill/io.hpp"
#include "posedistill/models/models.hpp"

using namespace posedistill;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = POSEDISTILL_FIXTURES;

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("posedistill_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
};

Run cli(const std::string& args, const fs::path& scratch) {
  const fs::path log = scratch / "cli.out";
  const std::string cmd = std::string("'") + POSEDISTILL_CLI + "' " + args + " >" + q(log) + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  if (status != -1 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.output = io::read_text(log);
  return r;
}

const std::string kTinyCfg = " --config " + q(kFixtures / "tiny.cfg");
const std::string kTinyData = " --data " + q(kFixtures / "tiny_data");

// Same numbers up to last-bit differences from a different floating-point
// code path; everything else must match exactly.
void check_json_close(const nlohmann::json& got, const nlohmann::json& want, const std::string& at) {
  CAPTURE(at);
  REQUIRE(got.type() == want.type());
  if (want.is_number_float()) {
    CHECK(std::fabs(got.get<double>() - want.get<double>()) < 1e-9);
  } else if (want.is_object()) {
    REQUIRE(got.size() == want.size());
    for (auto it = want.begin(); it != want.end(); ++it) {
      REQUIRE(got.contains(it.key()));
      check_json_close(got.at(it.key()), it.value(), at + "/" + it.key());
    }
  } else {
    CHECK(got == want);
  }
}

}  // namespace

TEST_CASE("missing config file exits 2 and names the file") {
  const auto dir = temp_dir("missing_cfg");
  const auto r = cli("generate --config " + q(dir / "nope.cfg") + " --out " + q(dir / "d"), dir);
  CHECK(r.code == 2);
  CHECK(r.output.find("nope.cfg") != std::string::npos);
}

TEST_CASE("unknown config key exits 2") {
  const auto dir = temp_dir("unknown_key");
  io::write_text(dir / "bad.cfg", "resolution = 8\nlearning_rate = 0.1\n");
  const auto r = cli("generate --config " + q(dir / "bad.cfg") + " --out " + q(dir / "d"), dir);
  CHECK(r.code == 2);
  CHECK(r.output.find("learning_rate") != std::string::npos);
}

TEST_CASE("generate is reproducible and matches the committed fixture") {
  const auto dir = temp_dir("generate");
  REQUIRE(cli("generate" + kTinyCfg + " --out " + q(dir / "a"), dir).code == 0);
  REQUIRE(cli("generate" + kTinyCfg + " --out " + q(dir / "b"), dir).code == 0);
  CHECK(fs::exists(dir / "a" / "config.txt"));
  for (const char* f : {"manifest.json", "samples.bin", "config.txt"}) {
    CAPTURE(f);
    CHECK(io::read_file(dir / "a" / f) == io::read_file(dir / "b" / f));
  }
  const auto got = datagen::read_dataset(dir / "a");
  const auto want = datagen::read_dataset(kFixtures / "tiny_data");
  CHECK(got.config == want.config);
  CHECK(got.split == want.split);
  REQUIRE(got.samples.size() == want.samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < got.samples.size(); ++i) {
    const auto& a = got.samples[i].image.pixels;
    const auto& b = want.samples[i].image.pixels;
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, double(std::fabs(a[k] - b[k])));
    CHECK(got.samples[i].cloud.size() == want.samples[i].cloud.size());
    CHECK(got.samples[i].pose.alpha() == doctest::Approx(want.samples[i].pose.alpha()).epsilon(1e-12));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("distilling strategies without a teacher exit 2") {
  const auto dir = temp_dir("no_teacher");
  const auto r = cli("train --stage student --strategy 3daug" + kTinyCfg + kTinyData + " --out " +
                         q(dir / "run"),
                     dir);
  CHECK(r.code == 2);
  CHECK(r.output.find("--teacher-ckpt") != std::string::npos);
}

TEST_CASE("missing or corrupted datasets exit 3") {
  const auto dir = temp_dir("bad_data");
  const std::string ckpt = " --ckpt " + q(kFixtures / "tiny_student");
  CHECK(cli("eval" + ckpt + " --data " + q(dir / "absent") + " --report " + q(dir / "m.json"), dir)
            .code == 3);
  fs::copy(kFixtures / "tiny_data", dir / "data");
  auto manifest = io::read_text(dir / "data" / "manifest.json");
  manifest.replace(manifest.find("posedistill.dataset"), 19, "something.else.data");
  io::write_text(dir / "data" / "manifest.json", manifest);
  CHECK(cli("eval" + ckpt + " --data " + q(dir / "data") + " --report " + q(dir / "m.json"), dir)
            .code == 3);
  CHECK_FALSE(fs::exists(dir / "m.json"));
}

TEST_CASE("a checkpoint on a dataset of another resolution exits 4") {
  const auto dir = temp_dir("mismatch");
  auto ds = datagen::read_dataset(kFixtures / "tiny_data");
  auto cfg = ds.config;
  cfg.resolution = 16;
  datagen::write_dataset(dir / "res16", datagen::generate_dataset(cfg));
  const auto r = cli("eval --ckpt " + q(kFixtures / "tiny_student") + " --data " + q(dir / "res16") +
                         " --report " + q(dir / "m.json"),
                     dir);
  CHECK(r.code == 4);
}

TEST_CASE("non-finite training data exits 5 with a divergence record") {
  const auto dir = temp_dir("nan");
  auto ds = datagen::read_dataset(kFixtures / "tiny_data");
  ds.samples[ds.split.train[0]].image.pixels[3] = std::nanf("");
  datagen::write_dataset(dir / "data", ds);
  const auto r = cli("train --stage teacher" + kTinyCfg + " --data " + q(dir / "data") + " --out " +
                         q(dir / "run"),
                     dir);
  CHECK(r.code == 5);
  CHECK(fs::exists(dir / "run" / "divergence.json"));
}

TEST_CASE("eval reproduces the committed metrics") {
  const auto dir = temp_dir("eval");
  const auto r = cli("eval --ckpt " + q(kFixtures / "tiny_student") + kTinyData + " --report " +
                         q(dir / "metrics.json"),
                     dir);
  REQUIRE(r.code == 0);
  check_json_close(nlohmann::json::parse(io::read_text(dir / "metrics.json")),
                   nlohmann::json::parse(io::read_text(kFixtures / "metrics.json")), "");
}

TEST_CASE("teacher, student and joint runs write their checkpoints") {
  const auto dir = temp_dir("train");
  REQUIRE(cli("train --stage teacher" + kTinyCfg + kTinyData + " --out " + q(dir / "teacher"), dir)
              .code == 0);
  CHECK(fs::exists(dir / "teacher" / "teacher.json"));
  CHECK(fs::exists(dir / "teacher" / "config.txt"));
  CHECK(fs::exists(dir / "teacher" / "train.log.jsonl"));
  REQUIRE(cli("train --stage student --strategy 3daug" + kTinyCfg + kTinyData + " --teacher-ckpt " +
                  q(dir / "teacher") + " --out " + q(dir / "student"),
              dir)
              .code == 0);
  CHECK(models::saved_kind(dir / "student", "student") == models::ModelKind::kStudent);

  REQUIRE(cli("train --stage teacher --strategy jointcl" + kTinyCfg + kTinyData + " --out " +
                  q(dir / "joint"),
              dir)
              .code == 0);
  CHECK(fs::exists(dir / "joint" / "teacher.json"));
  CHECK(fs::exists(dir / "joint" / "student.json"));
  CHECK(cli("train --stage student --strategy jointcl" + kTinyCfg + kTinyData + " --teacher-ckpt " +
                q(dir / "joint") + " --out " + q(dir / "joint_ft"),
            dir)
            .code == 0);
}

TEST_CASE("ablate writes a table and resumes from finished runs") {
  const auto dir = temp_dir("ablate");
  const std::string args = "ablate" + kTinyCfg + kTinyData + " --only teacher baseline --out " +
                           q(dir / "out");
  REQUIRE(cli(args, dir).code == 0);
  const auto csv = io::read_text(dir / "out" / "ablation.csv");
  CHECK(csv.rfind("configuration,seed,acc30,mederr\n", 0) == 0);
  CHECK(csv.find("\nteacher,") != std::string::npos);
  CHECK(csv.find("\nbaseline,") != std::string::npos);
  const auto stamp = fs::last_write_time(dir / "out" / "baseline" / "seed3" / "metrics.json");
  REQUIRE(cli(args, dir).code == 0);
  CHECK(io::read_text(dir / "out" / "ablation.csv") == csv);
  CHECK(fs::last_write_time(dir / "out" / "baseline" / "seed3" / "metrics.json") == stamp);
}

TEST_CASE("zero-shot protocol and visualizations through the CLI") {
  const auto dir = temp_dir("fewshot");
  io::write_text(dir / "zs.cfg", io::read_text(kFixtures / "tiny.cfg") +
                                     "split_mode = zero_shot\nunseen = cone\n");
  const std::string cfg = " --config " + q(dir / "zs.cfg");
  REQUIRE(cli("generate" + cfg + " --out " + q(dir / "data"), dir).code == 0);
  REQUIRE(cli("fewshot" + cfg + " --data " + q(dir / "data") + " -k 0 --out " + q(dir / "out"), dir)
              .code == 0);
  const auto m = nlohmann::json::parse(io::read_text(dir / "out" / "metrics.json"));
  CHECK(m.at("per_category").contains("cone"));
  CHECK_FALSE(m.at("per_category").contains("box"));

  REQUIRE(cli("visualize --ckpt " + q(kFixtures / "tiny_student") + kTinyData + " -n 2 --out " +
                  q(dir / "vis"),
              dir)
              .code == 0);
  std::size_t pgm = 0;
  for (const auto& e : fs::directory_iterator(dir / "vis")) pgm += e.path().extension() == ".pgm";
  CHECK(pgm == 6);
}
