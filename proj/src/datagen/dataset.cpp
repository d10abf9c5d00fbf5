#include "posedistill/datagen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "posedistill/errors.hpp"
#include "posedistill/io.hpp"
#include "posedistill/parallel.hpp"
#include "posedistill/rng.hpp"

namespace posedistill::datagen {

using nlohmann::json;

namespace {

json category_list(const std::vector<Category>& cs) {
  json out = json::array();
  for (Category c : cs) out.push_back(std::string(category_name(c)));
  return out;
}

std::vector<Category> parse_category_list(const json& j) {
  std::vector<Category> out;
  for (const auto& e : j) {
    const auto name = e.get<std::string>();
    const auto c = parse_category(name);
    if (!c) throw ConfigError("unknown category '" + name + "'");
    out.push_back(*c);
  }
  return out;
}

bool contains(const std::vector<Category>& cs, Category c) {
  return std::find(cs.begin(), cs.end(), c) != cs.end();
}

void check_range(const char* what, double lo, double hi, double min, double max) {
  if (!(lo >= min && hi <= max && lo <= hi)) {
    throw ConfigError(std::string(what) + " range must satisfy " + std::to_string(min) +
                      " <= min <= max <= " + std::to_string(max));
  }
}

std::size_t record_bytes(const DatasetConfig& c) {
  const auto pixels = static_cast<std::size_t>(c.resolution) * static_cast<std::size_t>(c.resolution);
  return pixels * 4 + static_cast<std::size_t>(c.points) * 3 * 4 + 3 * 8 + 2;
}

Sample make_sample(const DatasetConfig& config, Category c, std::size_t index, bool val_role,
                   int slot_in_category) {
  const std::uint64_t seed = derive_seed(config.seed, index);
  std::mt19937_64 rng(seed);
  const auto draw = [&rng](double lo_deg, double hi_deg) {
    if (lo_deg == hi_deg) return posemath::deg2rad(lo_deg);
    return posemath::deg2rad(std::uniform_real_distribution<double>(lo_deg, hi_deg)(rng));
  };
  const double alpha = draw(config.alpha_min_deg, config.alpha_max_deg);
  const double beta = draw(config.beta_min_deg, config.beta_max_deg);
  const double gamma = draw(config.gamma_min_deg, config.gamma_max_deg);

  Sample s;
  s.category = c;
  s.val_role = val_role;
  s.pose = posemath::EulerPose(alpha, beta, gamma);
  if (config.shapes_per_category > 0) {
    // round-robin over a fixed per-category library shared by both roles
    const auto pool = derive_seed(config.seed, 0x5a4e0000ULL + static_cast<std::uint64_t>(c));
    s.shape = make_shape(c, derive_seed(pool, static_cast<std::uint64_t>(
                                                  slot_in_category % config.shapes_per_category)));
  } else {
    s.shape = make_shape(c, derive_seed(seed, 1));
  }
  const PointCloud cloud = sample_point_cloud(s.shape, static_cast<std::size_t>(config.points));
  s.cloud.assign(cloud.points.begin(), cloud.points.end());
  s.noise_seed = derive_seed(seed, 2);
  s.image = rerender(s, config.resolution, config.noise_sigma);
  return s;
}

}  // namespace

std::string_view split_mode_name(SplitMode m) {
  switch (m) {
    case SplitMode::kFullySupervised:
      return "fully_supervised";
    case SplitMode::kZeroShot:
      return "zero_shot";
    case SplitMode::kFewShot:
      return "few_shot";
  }
  return "unknown";
}

SplitMode parse_split_mode(std::string_view name) {
  for (SplitMode m : {SplitMode::kFullySupervised, SplitMode::kZeroShot, SplitMode::kFewShot}) {
    if (split_mode_name(m) == name) return m;
  }
  throw ConfigError("unknown split mode '" + std::string(name) +
                    "' (expected fully_supervised, zero_shot or few_shot)");
}

void DatasetConfig::validate() const {
  if (categories.empty()) throw ConfigError("dataset needs at least one category");
  if (std::set<Category>(categories.begin(), categories.end()).size() != categories.size()) {
    throw ConfigError("duplicate category in dataset config");
  }
  if (train_per_category < 1 || val_per_category < 1) {
    throw ConfigError("train_per_category and val_per_category must be >= 1");
  }
  if (resolution < 8 || resolution > 512) throw ConfigError("resolution must be in [8, 512]");
  if (points < 8) throw ConfigError("points must be >= 8");
  if (shapes_per_category < 0) throw ConfigError("shapes_per_category must be >= 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise_sigma must be finite and >= 0");
  }
  check_range("alpha", alpha_min_deg, alpha_max_deg, -180.0, 180.0);
  check_range("beta", beta_min_deg, beta_max_deg, -90.0, 90.0);
  check_range("gamma", gamma_min_deg, gamma_max_deg, -180.0, 180.0);
  for (Category c : unseen) {
    if (!contains(categories, c)) {
      throw ConfigError("unseen category '" + std::string(category_name(c)) +
                        "' is not among the dataset categories");
    }
  }
  if (std::set<Category>(unseen.begin(), unseen.end()).size() != unseen.size()) {
    throw ConfigError("duplicate unseen category");
  }
  if (split_mode == SplitMode::kFullySupervised) {
    if (!unseen.empty()) throw ConfigError("fully_supervised split takes no unseen categories");
    return;
  }
  if (unseen.empty()) throw ConfigError("zero_shot and few_shot splits need unseen categories");
  if (unseen.size() >= categories.size()) throw ConfigError("at least one category must be seen");
  if (split_mode == SplitMode::kFewShot &&
      (few_shot_k < 0 || few_shot_k > train_per_category)) {
    throw ConfigError("few_shot_k must be in [0, train_per_category]");
  }
}

json DatasetConfig::to_json() const {
  return {{"categories", category_list(categories)},
          {"train_per_category", train_per_category},
          {"val_per_category", val_per_category},
          {"resolution", resolution},
          {"points", points},
          {"shapes_per_category", shapes_per_category},
          {"noise_sigma", noise_sigma},
          {"alpha_deg", {alpha_min_deg, alpha_max_deg}},
          {"beta_deg", {beta_min_deg, beta_max_deg}},
          {"gamma_deg", {gamma_min_deg, gamma_max_deg}},
          {"split_mode", std::string(split_mode_name(split_mode))},
          {"unseen", category_list(unseen)},
          {"few_shot_k", few_shot_k},
          {"seed", seed}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
  DatasetConfig c;
  c.categories = parse_category_list(j.at("categories"));
  c.train_per_category = j.at("train_per_category").get<int>();
  c.val_per_category = j.at("val_per_category").get<int>();
  c.resolution = j.at("resolution").get<int>();
  c.points = j.at("points").get<int>();
  c.shapes_per_category = j.at("shapes_per_category").get<int>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.alpha_min_deg = j.at("alpha_deg").at(0).get<double>();
  c.alpha_max_deg = j.at("alpha_deg").at(1).get<double>();
  c.beta_min_deg = j.at("beta_deg").at(0).get<double>();
  c.beta_max_deg = j.at("beta_deg").at(1).get<double>();
  c.gamma_min_deg = j.at("gamma_deg").at(0).get<double>();
  c.gamma_max_deg = j.at("gamma_deg").at(1).get<double>();
  c.split_mode = parse_split_mode(j.at("split_mode").get<std::string>());
  c.unseen = parse_category_list(j.at("unseen"));
  c.few_shot_k = j.at("few_shot_k").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

RenderImage rerender(const Sample& sample, int resolution, double noise_sigma) {
  RenderImage img = render(sample.shape, sample.pose, resolution);
  add_noise(img, noise_sigma, sample.noise_seed);
  return img;
}

DatasetSplit make_split(const DatasetConfig& config, const std::vector<Sample>& samples) {
  DatasetSplit split;
  split.mode = config.split_mode;
  split.k = config.split_mode == SplitMode::kFewShot ? config.few_shot_k : 0;
  split.unseen = config.unseen;
  for (Category c : config.categories) {
    if (!contains(config.unseen, c)) split.seen.push_back(c);
  }
  std::vector<int> unseen_taken(kAllCategories.size(), 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const bool unseen = contains(config.unseen, s.category);
    if (s.val_role) {
      if (split.mode == SplitMode::kFullySupervised) {
        split.val.push_back(i);
        split.select.push_back(i);
      } else if (unseen) {
        split.val.push_back(i);
      } else {
        split.select.push_back(i);
      }
    } else if (!unseen) {
      split.train.push_back(i);
    } else if (split.mode == SplitMode::kFewShot) {
      int& taken = unseen_taken[static_cast<std::size_t>(s.category)];
      if (taken < split.k) {
        split.train.push_back(i);
        ++taken;
      }
    }
  }
  return split;
}

Dataset generate_dataset(const DatasetConfig& config) {
  config.validate();
  struct Slot {
    Category category;
    bool val_role;
    int k;
  };
  std::vector<Slot> slots;
  for (Category c : config.categories) {
    for (int i = 0; i < config.train_per_category; ++i) slots.push_back({c, false, i});
    for (int i = 0; i < config.val_per_category; ++i) slots.push_back({c, true, i});
  }
  Dataset ds;
  ds.config = config;
  ds.samples.resize(slots.size());
  parallel_for(slots.size(), [&](std::size_t i) {
    ds.samples[i] = make_sample(config, slots[i].category, i, slots[i].val_role, slots[i].k);
  });
  ds.split = make_split(config, ds.samples);
  return ds;
}

std::uint32_t write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  const DatasetConfig& cfg = ds.config;
  io::ByteWriter blob;
  json meta = json::array();
  for (const Sample& s : ds.samples) {
    if (s.image.width != cfg.resolution || s.image.height != cfg.resolution ||
        s.cloud.size() != static_cast<std::size_t>(cfg.points) * 3) {
      throw io::FormatError("sample does not match the dataset resolution or point count");
    }
    blob.put_f32s(s.image.pixels);
    blob.put_f32s(s.cloud);
    blob.put_f64(s.pose.alpha());
    blob.put_f64(s.pose.beta());
    blob.put_f64(s.pose.gamma());
    blob.put_u16(static_cast<std::uint16_t>(s.category));
    meta.push_back({{"category", std::string(category_name(s.category))},
                    {"role", s.val_role ? "val" : "train"},
                    {"size", s.shape.size},
                    {"instance_seed", s.shape.instance_seed},
                    {"noise_seed", s.noise_seed}});
  }
  const auto bytes = blob.take();
  const std::uint32_t crc = io::crc32(bytes);
  json counts = json::object();
  for (Category c : cfg.categories) {
    counts[std::string(category_name(c))] = std::count_if(
        ds.samples.begin(), ds.samples.end(), [c](const Sample& s) { return s.category == c; });
  }
  const json manifest = {
      {"format", kDatasetFormat},
      {"version", kDatasetVersion},
      {"count", ds.samples.size()},
      {"resolution", cfg.resolution},
      {"points", cfg.points},
      {"categories", category_list(cfg.categories)},
      {"category_counts", counts},
      {"master_seed", cfg.seed},
      {"config", cfg.to_json()},
      {"split",
       {{"mode", std::string(split_mode_name(ds.split.mode))},
        {"k", ds.split.k},
        {"seen", category_list(ds.split.seen)},
        {"unseen", category_list(ds.split.unseen)},
        {"train", ds.split.train},
        {"val", ds.split.val},
        {"select", ds.split.select}}},
      {"record_bytes", record_bytes(cfg)},
      {"blob", "samples.bin"},
      {"blob_bytes", bytes.size()},
      {"crc32", crc},
      {"samples", meta},
  };
  std::filesystem::create_directories(dir);
  io::write_file(dir / "samples.bin", bytes);
  io::write_text(dir / "manifest.json", manifest.dump(1) + "\n");
  return crc;
}

namespace {

json read_manifest(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(io::read_text(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw io::FormatError("malformed dataset manifest: " + std::string(e.what()));
  }
  if (!manifest.is_object() || !manifest.contains("format") ||
      manifest["format"] != kDatasetFormat) {
    throw io::FormatError("bad magic: " + (dir / "manifest.json").string() +
                          " is not a dataset manifest");
  }
  if (manifest.value("version", -1) != kDatasetVersion) {
    throw io::FormatError("unsupported dataset version");
  }
  return manifest;
}

std::vector<std::size_t> index_list(const json& j, std::size_t count) {
  auto out = j.get<std::vector<std::size_t>>();
  for (std::size_t i : out) {
    if (i >= count) throw io::FormatError("split index out of range");
  }
  return out;
}

}  // namespace

std::uint32_t dataset_crc(const std::filesystem::path& dir) {
  try {
    return read_manifest(dir).at("crc32").get<std::uint32_t>();
  } catch (const json::exception& e) {
    throw io::FormatError("malformed dataset manifest: " + std::string(e.what()));
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const json manifest = read_manifest(dir);
  Dataset ds;
  try {
    ds.config = DatasetConfig::from_json(manifest.at("config"));
    const auto count = manifest.at("count").get<std::size_t>();
    const std::size_t rec = record_bytes(ds.config);
    if (manifest.at("resolution").get<int>() != ds.config.resolution ||
        manifest.at("points").get<int>() != ds.config.points ||
        manifest.at("record_bytes").get<std::size_t>() != rec) {
      throw io::FormatError("dataset manifest header fields disagree with its config");
    }
    const auto bytes = io::read_file(dir / manifest.at("blob").get<std::string>());
    if (bytes.size() < count * rec) {
      throw io::FormatError("truncated dataset blob: header declares " + std::to_string(count) +
                            " samples (" + std::to_string(count * rec) + " bytes), blob has " +
                            std::to_string(bytes.size()) + " bytes");
    }
    if (bytes.size() != count * rec ||
        bytes.size() != manifest.at("blob_bytes").get<std::size_t>()) {
      throw io::FormatError("dataset blob size does not match the manifest");
    }
    if (io::crc32(bytes) != manifest.at("crc32").get<std::uint32_t>()) {
      throw io::FormatError("dataset blob checksum mismatch");
    }
    const json& meta = manifest.at("samples");
    if (meta.size() != count) throw io::FormatError("sample metadata count mismatch");

    const auto pixels = static_cast<std::size_t>(ds.config.resolution) *
                        static_cast<std::size_t>(ds.config.resolution);
    io::ByteReader reader(bytes);
    ds.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      Sample& s = ds.samples[i];
      s.image = {ds.config.resolution, ds.config.resolution, std::vector<float>(pixels)};
      reader.get_f32s(s.image.pixels);
      s.cloud.resize(static_cast<std::size_t>(ds.config.points) * 3);
      reader.get_f32s(s.cloud);
      const double a = reader.get_f64();
      const double b = reader.get_f64();
      const double g = reader.get_f64();
      s.pose = posemath::EulerPose(a, b, g);
      if (s.pose.alpha() != a || s.pose.beta() != b || s.pose.gamma() != g) {
        throw io::FormatError("stored pose outside the angle domains");
      }
      const std::uint16_t cat = reader.get_u16();
      if (cat >= kAllCategories.size()) throw io::FormatError("unknown category id in blob");
      s.category = static_cast<Category>(cat);

      const json& m = meta[i];
      const auto named = parse_category(m.at("category").get<std::string>());
      if (!named || *named != s.category) {
        throw io::FormatError("sample " + std::to_string(i) + " category disagrees with manifest");
      }
      s.val_role = m.at("role").get<std::string>() == "val";
      s.shape.category = s.category;
      s.shape.size = m.at("size").get<std::array<double, 4>>();
      s.shape.instance_seed = m.at("instance_seed").get<std::uint64_t>();
      s.noise_seed = m.at("noise_seed").get<std::uint64_t>();
    }
    const json& sp = manifest.at("split");
    ds.split.mode = parse_split_mode(sp.at("mode").get<std::string>());
    ds.split.k = sp.at("k").get<int>();
    ds.split.seen = parse_category_list(sp.at("seen"));
    ds.split.unseen = parse_category_list(sp.at("unseen"));
    ds.split.train = index_list(sp.at("train"), count);
    ds.split.val = index_list(sp.at("val"), count);
    ds.split.select = index_list(sp.at("select"), count);
  } catch (const json::exception& e) {
    throw io::FormatError("malformed dataset manifest: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw io::FormatError("malformed dataset manifest: " + std::string(e.what()));
  }
  return ds;
}

}  // namespace posedistill::datagen
