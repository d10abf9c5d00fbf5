#include "posedistill/diff/bundle.hpp"

#include "posedistill/io.hpp"

namespace posedistill::diff {

using nlohmann::json;

void TensorBundle::put(const std::string& name, Tensor t) {
  for (auto& [n, v] : tensors) {
    if (n == name) {
      v = std::move(t);
      return;
    }
  }
  tensors.emplace_back(name, std::move(t));
}

bool TensorBundle::has(const std::string& name) const {
  for (const auto& [n, v] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& TensorBundle::get(const std::string& name) const {
  for (const auto& [n, v] : tensors) {
    if (n == name) return v;
  }
  throw io::FormatError("bundle has no tensor '" + name + "'");
}

void write_bundle(const std::filesystem::path& dir, const std::string& stem,
                  const TensorBundle& bundle) {
  io::ByteWriter blob;
  json entries = json::array();
  for (const auto& [name, t] : bundle.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.bytes().size()}});
    blob.put_f64s(t.data());
  }
  const auto bytes = blob.take();
  json manifest = {
      {"format", kBundleFormat},
      {"version", kBundleVersion},
      {"blob", stem + ".bin"},
      {"blob_bytes", bytes.size()},
      {"crc32", io::crc32(bytes)},
      {"tensors", entries},
      {"meta", bundle.meta},
  };
  std::filesystem::create_directories(dir);
  io::write_file(dir / (stem + ".bin"), bytes);
  io::write_text(dir / (stem + ".json"), manifest.dump(2) + "\n");
}

TensorBundle read_bundle(const std::filesystem::path& dir, const std::string& stem) {
  json manifest;
  try {
    manifest = json::parse(io::read_text(dir / (stem + ".json")));
  } catch (const json::parse_error& e) {
    throw io::FormatError("malformed bundle manifest: " + std::string(e.what()));
  }
  TensorBundle bundle;
  try {
    if (manifest.at("format") != kBundleFormat) {
      throw io::FormatError("not a tensor bundle manifest");
    }
    if (manifest.at("version").get<int>() != kBundleVersion) {
      throw io::FormatError("unsupported bundle version");
    }
    const auto bytes = io::read_file(dir / manifest.at("blob").get<std::string>());
    const auto declared = manifest.at("blob_bytes").get<std::size_t>();
    if (bytes.size() < declared) {
      throw io::FormatError("bundle blob truncated: " + std::to_string(bytes.size()) + " of " +
                            std::to_string(declared) + " bytes");
    }
    if (bytes.size() != declared) {
      throw io::FormatError("bundle blob has trailing bytes");
    }
    if (io::crc32(bytes) != manifest.at("crc32").get<std::uint32_t>()) {
      throw io::FormatError("bundle blob checksum mismatch");
    }
    for (const auto& e : manifest.at("tensors")) {
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (offset > bytes.size() || (bytes.size() - offset) / 8 < n) {
        throw io::FormatError("bundle tensor '" + e.at("name").get<std::string>() +
                              "' extends past the blob");
      }
      std::vector<double> values(n);
      io::ByteReader reader(std::span<const std::uint8_t>(bytes).subspan(offset, n * 8));
      reader.get_f64s(values);
      bundle.tensors.emplace_back(e.at("name").get<std::string>(),
                                  Tensor(shape, std::move(values)));
    }
    bundle.meta = manifest.at("meta");
  } catch (const json::exception& e) {
    throw io::FormatError("malformed bundle manifest: " + std::string(e.what()));
  } catch (const ShapeError& e) {
    throw io::FormatError("malformed bundle manifest: " + std::string(e.what()));
  }
  return bundle;
}

void save_store(const ParamStore& store, TensorBundle& bundle, bool with_optimizer) {
  json steps = json::object();
  for (const auto& e : store.entries()) {
    bundle.put("param/" + e.name, e.value);
    if (with_optimizer && !e.buffer) {
      bundle.put("adam_m/" + e.name, e.m);
      bundle.put("adam_v/" + e.name, e.v);
      steps[e.name] = e.step;
    }
  }
  if (with_optimizer) {
    bundle.meta["adam_steps"] = steps;
  }
}

void load_store(ParamStore& store, const TensorBundle& bundle, bool with_optimizer) {
  for (auto& e : store.entries()) {
    const Tensor& v = bundle.get("param/" + e.name);
    if (v.shape() != e.value.shape()) {
      throw io::FormatError("parameter '" + e.name + "' has shape " + shape_string(v.shape()) +
                            ", expected " + shape_string(e.value.shape()));
    }
    e.value = v;
    if (with_optimizer && !e.buffer) {
      e.m = bundle.get("adam_m/" + e.name);
      e.v = bundle.get("adam_v/" + e.name);
      try {
        e.step = bundle.meta.at("adam_steps").at(e.name).get<std::int64_t>();
      } catch (const json::exception&) {
        throw io::FormatError("bundle lacks optimizer step for '" + e.name + "'");
      }
    }
  }
}

}  // namespace posedistill::diff
