#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "posedistill/diff/tensor.hpp"

namespace posedistill::diff {

using Gradients = std::map<std::string, Tensor>;

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named parameters with per-parameter Adam state and per-group freeze flags.
///
/// Entries keep insertion order, so iteration (and therefore every update and
/// every serialized checkpoint) is deterministic. Buffers are non-trainable
/// state such as batch-norm running statistics; the optimizer never touches them.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Tensor value;
    Tensor m;
    Tensor v;
    std::int64_t step = 0;
    bool buffer = false;
  };

  /// Registers a trainable parameter. Duplicate names are an error.
  void add(const std::string& name, const std::string& group, Tensor init);
  /// Registers non-trainable state that lives alongside the parameters.
  void add_buffer(const std::string& name, const std::string& group, Tensor init);

  bool contains(const std::string& name) const;
  const Entry& entry(const std::string& name) const;
  Entry& entry(const std::string& name);
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& mutable_value(const std::string& name) { return entry(name).value; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::vector<std::string> groups() const;

  void freeze(const std::string& group);
  void unfreeze(const std::string& group);
  void freeze_all();
  void unfreeze_all();
  bool group_frozen(const std::string& group) const;
  /// True when `name` is a buffer or belongs to a frozen group.
  bool is_frozen(const std::string& name) const;

  /// One bias-corrected Adam update on every non-frozen parameter that has a
  /// gradient. Parameters without a gradient entry are left alone.
  void adam_step(const Gradients& grads, double lr, const AdamOptions& opts = {});

  /// Copies values (not optimizer state) of every entry present in both stores.
  void copy_values_from(const ParamStore& other);

  std::size_t parameter_count() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::set<std::string> frozen_groups_;
};

}  // namespace posedistill::diff
