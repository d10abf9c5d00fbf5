#include "posedistill/models/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace posedistill::models {

using diff::Tensor;
using diff::Var;

Mlp::Mlp(std::string prefix, std::string group, std::vector<DenseSpec> layers)
    : prefix_(std::move(prefix)), group_(std::move(group)), layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("Mlp " + prefix_ + ": no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].in < 1 || layers_[i].out < 1) {
      throw std::invalid_argument("Mlp " + prefix_ + ": layer widths must be positive");
    }
    if (i > 0 && layers_[i].in != layers_[i - 1].out) {
      throw std::invalid_argument("Mlp " + prefix_ + ": layer widths do not chain");
    }
  }
}

void Mlp::init(diff::ParamStore& store, std::mt19937_64& rng) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const DenseSpec& l = layers_[i];
    const std::string base = prefix_ + ".l" + std::to_string(i);
    const auto in = static_cast<std::size_t>(l.in);
    const auto out = static_cast<std::size_t>(l.out);
    const double gain = l.act == Act::kRelu ? 2.0 : 1.0;
    std::normal_distribution<double> gauss(0.0, std::sqrt(gain / l.in));
    Tensor w({in, out});
    for (double& v : w.data()) v = gauss(rng);
    store.add(base + ".w", group_, std::move(w));
    if (l.batch_norm) {
      store.add(base + ".bn.gamma", group_, Tensor({out}, 1.0));
      store.add(base + ".bn.beta", group_, Tensor({out}, 0.0));
      store.add_buffer(base + ".bn.mean", group_, Tensor({out}, 0.0));
      store.add_buffer(base + ".bn.var", group_, Tensor({out}, 1.0));
    } else {
      store.add(base + ".b", group_, Tensor({out}, 0.0));
    }
  }
}

Var Mlp::forward(diff::Tape& tape, diff::ParamStore& store, Var x, bool training) const {
  const bool bn_training = training && !store.group_frozen(group_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const DenseSpec& l = layers_[i];
    const std::string base = prefix_ + ".l" + std::to_string(i);
    x = diff::matmul(x, tape.parameter(store, base + ".w"));
    if (l.batch_norm) {
      diff::BatchNormState state{&store.mutable_value(base + ".bn.mean"),
                                 &store.mutable_value(base + ".bn.var")};
      x = diff::batch_norm(x, tape.parameter(store, base + ".bn.gamma"),
                           tape.parameter(store, base + ".bn.beta"), state, bn_training);
    } else {
      x = diff::add_bias(x, tape.parameter(store, base + ".b"));
    }
    switch (l.act) {
      case Act::kNone:
        break;
      case Act::kRelu:
        x = diff::relu(x);
        break;
      case Act::kTanh:
        x = diff::tanh(x);
        break;
      case Act::kSigmoid:
        x = diff::sigmoid(x);
        break;
    }
  }
  return x;
}

std::vector<DenseSpec> chain(const std::vector<int>& widths, bool batch_norm, Act act,
                             Act last_act, bool last_batch_norm) {
  std::vector<DenseSpec> out;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    out.push_back({widths[i], widths[i + 1], last ? last_batch_norm : batch_norm,
                   last ? last_act : act});
  }
  return out;
}

}  // namespace posedistill::models
