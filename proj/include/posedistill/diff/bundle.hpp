#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "posedistill/diff/params.hpp"
#include "posedistill/diff/tensor.hpp"

namespace posedistill::diff {

/// Named tensors plus free-form metadata, persisted as a JSON manifest
/// (name -> shape/byte offset) next to one little-endian float64 blob.
struct TensorBundle {
  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
};

inline constexpr const char* kBundleFormat = "posedistill.tensors";
inline constexpr int kBundleVersion = 1;

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`.
void write_bundle(const std::filesystem::path& dir, const std::string& stem,
                  const TensorBundle& bundle);
/// Reads a bundle back. Throws io::FormatError on a malformed manifest, a
/// blob shorter than the manifest claims, or a checksum mismatch.
TensorBundle read_bundle(const std::filesystem::path& dir, const std::string& stem);

/// Parameter values (and optionally Adam moments and step counts) under
/// `param/<name>`, `adam_m/<name>`, `adam_v/<name>`.
void save_store(const ParamStore& store, TensorBundle& bundle, bool with_optimizer);
/// Restores every entry of `store` from the bundle; missing names are a FormatError.
void load_store(ParamStore& store, const TensorBundle& bundle, bool with_optimizer);

}  // namespace posedistill::diff
