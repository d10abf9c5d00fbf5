#include "posedistill/diff/tape.hpp"

namespace posedistill::diff {

const Tensor& Var::value() const {
  return tape_->value(id_);
}

bool Var::requires_grad() const {
  return tape_->requires_grad(id_);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const ParamStore& store, const std::string& name) {
  Node n;
  n.value = store.value(name);
  n.requires_grad = !store.is_frozen(name);
  if (n.requires_grad) {
    n.param_name = name;
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn, const char* op) {
  if (!value.all_finite()) {
    throw NumericalError(std::string(op) + ": non-finite forward value");
  }
  Node n;
  n.value = std::move(value);
  for (std::size_t in : inputs) {
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) {
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.values().empty()) {
    n.grad = Tensor(n.value.shape(), 0.0);
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (&root.tape() != this) {
    throw std::invalid_argument("Tape::backward: root belongs to another tape");
  }
  if (nodes_[root.id()].value.size() != 1) {
    throw ShapeError("Tape::backward: root of shape " +
                     shape_string(nodes_[root.id()].value.shape()) + " is not a scalar");
  }
  if (backward_done_) {
    throw std::logic_error("Tape::backward: already called on this tape");
  }
  backward_done_ = true;
  if (!nodes_[root.id()].requires_grad) {
    return;
  }
  grad(root.id()).fill(1.0);
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.values().empty() || !n.backward) {
      continue;
    }
    n.backward(*this, id);
    if (!n.grad.all_finite()) {
      throw NumericalError("Tape::backward: non-finite gradient");
    }
  }
}

Tensor Tape::gradient(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.values().empty()) {
    return Tensor(n.value.shape(), 0.0);
  }
  return n.grad;
}

Gradients Tape::parameter_gradients() const {
  Gradients out;
  for (const Node& n : nodes_) {
    if (n.param_name.empty()) {
      continue;
    }
    Tensor g = n.grad.values().empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
    const auto it = out.find(n.param_name);
    if (it == out.end()) {
      out.emplace(n.param_name, std::move(g));
    } else {
      // same parameter placed on the tape twice: gradients add
      auto dst = it->second.data();
      const auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
      }
    }
  }
  return out;
}

}  // namespace posedistill::diff
