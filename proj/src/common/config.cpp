#include "posedistill/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "posedistill/errors.hpp"
#include "posedistill/io.hpp"

namespace posedistill {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s) {
  const std::string t = trim(s);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("'" + t + "' is not a valid number");
  }
  return v;
}

bool parse_bool(std::string_view s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError("'" + t + "' is not a boolean (true/false)");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += xs[i];
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

std::vector<int> parse_int_list(std::string_view s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(parse_number<int>(item));
  return out;
}

std::string categories_text(const std::vector<datagen::Category>& cs) {
  std::vector<std::string> names;
  for (auto c : cs) names.emplace_back(datagen::category_name(c));
  return join(names);
}

std::vector<datagen::Category> parse_categories(std::string_view s) {
  std::vector<datagen::Category> out;
  for (const auto& item : split_list(s)) {
    const auto c = datagen::parse_category(item);
    if (!c) throw ConfigError("unknown category '" + item + "'");
    out.push_back(*c);
  }
  return out;
}

void parse_range(std::string_view s, double& lo, double& hi) {
  const auto parts = split_list(s);
  if (parts.size() != 2) throw ConfigError("a range needs two comma-separated numbers");
  lo = parse_number<double>(parts[0]);
  hi = parse_number<double>(parts[1]);
}

struct Key {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename T>
Key number(T RunConfig::*part, auto member) {
  return {[=](const RunConfig& c) {
            const auto v = (c.*part).*member;
            if constexpr (std::is_floating_point_v<decltype(v)>) {
              return fmt(v);
            } else {
              return std::to_string(v);
            }
          },
          [=](RunConfig& c, std::string_view s) {
            auto& field = (c.*part).*member;
            field = parse_number<std::remove_reference_t<decltype(field)>>(s);
          }};
}

template <typename T>
Key flag(T RunConfig::*part, bool T::*member) {
  return {[=](const RunConfig& c) { return std::string((c.*part).*member ? "true" : "false"); },
          [=](RunConfig& c, std::string_view s) { (c.*part).*member = parse_bool(s); }};
}

const std::map<std::string, Key>& registry() {
  using datagen::DatasetConfig;
  using models::ModelConfig;
  using trainer::TrainConfig;
  static const std::map<std::string, Key> keys = [] {
    std::map<std::string, Key> k;
    const auto D = &RunConfig::data;
    const auto M = &RunConfig::model;
    const auto T = &RunConfig::train;
    // dataset
    k["categories"] = {[](const RunConfig& c) { return categories_text(c.data.categories); },
                       [](RunConfig& c, std::string_view s) {
                         c.data.categories = parse_categories(s);
                       }};
    k["train_per_category"] = number(D, &DatasetConfig::train_per_category);
    k["val_per_category"] = number(D, &DatasetConfig::val_per_category);
    k["resolution"] = number(D, &DatasetConfig::resolution);
    k["points"] = number(D, &DatasetConfig::points);
    k["shapes_per_category"] = number(D, &DatasetConfig::shapes_per_category);
    k["noise_sigma"] = number(D, &DatasetConfig::noise_sigma);
    const auto range = [](double DatasetConfig::*lo, double DatasetConfig::*hi) {
      return Key{[=](const RunConfig& c) { return fmt(c.data.*lo) + "," + fmt(c.data.*hi); },
                 [=](RunConfig& c, std::string_view s) { parse_range(s, c.data.*lo, c.data.*hi); }};
    };
    k["alpha_range_deg"] = range(&DatasetConfig::alpha_min_deg, &DatasetConfig::alpha_max_deg);
    k["beta_range_deg"] = range(&DatasetConfig::beta_min_deg, &DatasetConfig::beta_max_deg);
    k["gamma_range_deg"] = range(&DatasetConfig::gamma_min_deg, &DatasetConfig::gamma_max_deg);
    k["split_mode"] = {[](const RunConfig& c) {
                         return std::string(datagen::split_mode_name(c.data.split_mode));
                       },
                       [](RunConfig& c, std::string_view s) {
                         c.data.split_mode = datagen::parse_split_mode(trim(s));
                       }};
    k["unseen"] = {[](const RunConfig& c) { return categories_text(c.data.unseen); },
                   [](RunConfig& c, std::string_view s) { c.data.unseen = parse_categories(s); }};
    k["few_shot_k"] = number(D, &DatasetConfig::few_shot_k);
    k["data_seed"] = number(D, &DatasetConfig::seed);
    // model
    k["teacher_image_hidden"] = number(M, &ModelConfig::teacher_image_hidden);
    k["teacher_image_dim"] = number(M, &ModelConfig::teacher_image_dim);
    k["point_hidden"] = number(M, &ModelConfig::point_hidden);
    k["shape_dim"] = number(M, &ModelConfig::shape_dim);
    k["fused_dim"] = number(M, &ModelConfig::fused_dim);
    k["student_image_hidden"] = number(M, &ModelConfig::student_image_hidden);
    k["student_image_dim"] = number(M, &ModelConfig::student_image_dim);
    k["fuse_hidden"] = {[](const RunConfig& c) { return join(c.model.fuse_hidden); },
                        [](RunConfig& c, std::string_view s) {
                          c.model.fuse_hidden = parse_int_list(s);
                        }};
    k["student_head_hidden"] = {[](const RunConfig& c) { return join(c.model.student_head_hidden); },
                                [](RunConfig& c, std::string_view s) {
                                  c.model.student_head_hidden = parse_int_list(s);
                                }};
    // training
    k["lr0"] = number(T, &TrainConfig::lr0);
    k["epochs_stage1"] = number(T, &TrainConfig::epochs_stage1);
    k["epochs_stage2"] = number(T, &TrainConfig::epochs_stage2);
    k["batch_size"] = number(T, &TrainConfig::batch_size);
    k["finetune_epochs"] = number(T, &TrainConfig::finetune_epochs);
    k["finetune_lr_factor"] = number(T, &TrainConfig::finetune_lr_factor);
    k["eval_every"] = number(T, &TrainConfig::eval_every);
    k["seed"] = number(T, &TrainConfig::seed);
    k["augment_stage1"] = flag(T, &TrainConfig::augment_stage1);
    k["augment_stage2"] = flag(T, &TrainConfig::augment_stage2);
    k["gate_zero_weights"] = flag(T, &TrainConfig::gate_zero_weights);
    const auto weight = [](double losses::LossWeights::*w) {
      return Key{[=](const RunConfig& c) { return fmt(c.train.weights.*w); },
                 [=](RunConfig& c, std::string_view s) {
                   c.train.weights.*w = parse_number<double>(s);
                 }};
    };
    k["kappa1"] = weight(&losses::LossWeights::kappa1);
    k["kappa2"] = weight(&losses::LossWeights::kappa2);
    k["omega1"] = weight(&losses::LossWeights::omega1);
    k["omega2"] = weight(&losses::LossWeights::omega2);
    k["omega3"] = weight(&losses::LossWeights::omega3);
    k["tau"] = weight(&losses::LossWeights::tau);
    k["aug_flip_prob"] = {[](const RunConfig& c) { return fmt(c.train.augment.flip_prob); },
                          [](RunConfig& c, std::string_view s) {
                            c.train.augment.flip_prob = parse_number<double>(s);
                          }};
    k["aug_rotation_deg"] = {
        [](const RunConfig& c) { return fmt(c.train.augment.max_rotation_deg); },
        [](RunConfig& c, std::string_view s) {
          c.train.augment.max_rotation_deg = parse_number<double>(s);
        }};
    k["aug_mode"] = {[](const RunConfig& c) {
                       return std::string(trainer::augment_mode_name(c.train.augment.mode));
                     },
                     [](RunConfig& c, std::string_view s) {
                       c.train.augment.mode = trainer::parse_augment_mode(trim(s));
                     }};
    // harness
    k["seeds"] = {[](const RunConfig& c) { return std::to_string(c.seeds); },
                  [](RunConfig& c, std::string_view s) { c.seeds = parse_number<int>(s); }};
    k["ablation"] = {[](const RunConfig& c) { return join(c.ablation); },
                     [](RunConfig& c, std::string_view s) { c.ablation = split_list(s); }};
    return k;
  }();
  return keys;
}

}  // namespace

void RunConfig::finalize() {
  model.resolution = data.resolution;
  model.points = data.points;
  data.validate();
  model.validate();
  train.validate();
  if (seeds < 1) throw ConfigError("seeds must be >= 1");
}

std::string RunConfig::resolved_text() const {
  std::string out;
  for (const auto& [key, k] : registry()) out += key + "=" + k.get(*this) + "\n";
  return out;
}

std::string RunConfig::hash() const { return io::fnv1a_hex(resolved_text()); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [key, k] : registry()) out.push_back(key);
  return out;
}

RunConfig parse_config(std::string_view text, const std::string& origin) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const auto it = registry().find(key);
    if (it == registry().end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second.set(config, std::string_view(line).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  try {
    config.finalize();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const io::IoError&) {
    throw ConfigError("cannot read config file '" + path.string() + "'");
  }
  return parse_config(text, path.string());
}

RunConfig load_config_or_default(const std::filesystem::path& path) {
  if (path.empty()) {
    RunConfig c;
    c.finalize();
    return c;
  }
  return load_config(path);
}

}  // namespace posedistill
