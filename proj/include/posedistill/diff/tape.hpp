#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "posedistill/diff/params.hpp"
#include "posedistill/diff/tensor.hpp"

namespace posedistill::diff {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  /// False for a default-constructed handle (an output that was not computed).
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records forward values in evaluation order and replays them in reverse to
/// accumulate gradients. Node ids are issued in creation order, so the node
/// list is always topologically sorted. Single-threaded.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient (used by grad_check and tests).
  Var variable(Tensor value);
  /// Leaf bound to a stored parameter. Frozen parameters and buffers enter as
  /// constants; the rest report gradients under their name after backward().
  Var parameter(const ParamStore& store, const std::string& name);

  /// Appends an op node. `fn` may be empty when no input requires a gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn, const char* op);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.values().empty(); }

  /// Reverse accumulation from a scalar root. Every node is visited at most once.
  void backward(Var root);

  /// Gradient of a leaf after backward(); zeros when the root did not reach it.
  Tensor gradient(Var v) const;

  /// Gradients of every trainable parameter leaf, keyed by parameter name.
  /// Parameters the root does not depend on map to zero tensors.
  Gradients parameter_gradients() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_name;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace posedistill::diff
