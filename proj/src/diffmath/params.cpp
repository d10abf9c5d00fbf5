#include "posedistill/diff/params.hpp"

#include <algorithm>
#include <cmath>

namespace posedistill::diff {

void ParamStore::add(const std::string& name, const std::string& group, Tensor init) {
  if (index_.contains(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  }
  Entry e;
  e.name = name;
  e.group = group;
  e.m = Tensor(init.shape(), 0.0);
  e.v = Tensor(init.shape(), 0.0);
  e.value = std::move(init);
  index_.emplace(name, entries_.size());
  entries_.push_back(std::move(e));
}

void ParamStore::add_buffer(const std::string& name, const std::string& group, Tensor init) {
  add(name, group, std::move(init));
  entries_.back().buffer = true;
}

bool ParamStore::contains(const std::string& name) const {
  return index_.contains(name);
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
  }
  return entries_[it->second];
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
  }
  return entries_[it->second];
}

std::vector<std::string> ParamStore::groups() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (std::find(out.begin(), out.end(), e.group) == out.end()) {
      out.push_back(e.group);
    }
  }
  return out;
}

void ParamStore::freeze(const std::string& group) {
  bool known = false;
  for (const auto& e : entries_) {
    known = known || e.group == group;
  }
  if (!known) {
    throw std::invalid_argument("ParamStore: unknown parameter group '" + group + "'");
  }
  frozen_groups_.insert(group);
}

void ParamStore::unfreeze(const std::string& group) {
  frozen_groups_.erase(group);
}

void ParamStore::freeze_all() {
  for (const auto& g : groups()) {
    frozen_groups_.insert(g);
  }
}

void ParamStore::unfreeze_all() {
  frozen_groups_.clear();
}

bool ParamStore::group_frozen(const std::string& group) const {
  return frozen_groups_.contains(group);
}

bool ParamStore::is_frozen(const std::string& name) const {
  const Entry& e = entry(name);
  return e.buffer || frozen_groups_.contains(e.group);
}

void ParamStore::adam_step(const Gradients& grads, double lr, const AdamOptions& opts) {
  for (const auto& [name, g] : grads) {
    if (!contains(name)) {
      throw std::invalid_argument("adam_step: gradient for unknown parameter '" + name + "'");
    }
    if (entry(name).value.shape() != g.shape()) {
      throw ShapeError("adam_step: gradient shape " + shape_string(g.shape()) +
                       " does not match parameter '" + name + "' " +
                       shape_string(entry(name).value.shape()));
    }
  }
  for (Entry& e : entries_) {
    if (e.buffer || frozen_groups_.contains(e.group)) {
      continue;
    }
    const auto it = grads.find(e.name);
    if (it == grads.end()) {
      continue;
    }
    const auto g = it->second.data();
    auto p = e.value.data();
    auto m = e.m.data();
    auto v = e.v.data();
    e.step += 1;
    const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(e.step));
    const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(e.step));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g[i];
      v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + opts.eps);
    }
  }
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (Entry& e : entries_) {
    if (other.contains(e.name)) {
      const Tensor& src = other.value(e.name);
      if (src.shape() != e.value.shape()) {
        throw ShapeError("copy_values_from: shape mismatch for '" + e.name + "'");
      }
      e.value = src;
    }
  }
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (!e.buffer) {
      n += e.value.size();
    }
  }
  return n;
}

}  // namespace posedistill::diff
