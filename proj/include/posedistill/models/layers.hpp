#pragma once

#include <random>
#include <string>
#include <vector>

#include "posedistill/diff/ops.hpp"
#include "posedistill/diff/params.hpp"
#include "posedistill/diff/tape.hpp"

namespace posedistill::models {

enum class Act { kNone, kRelu, kTanh, kSigmoid };

struct DenseSpec {
  int in = 0;
  int out = 0;
  bool batch_norm = false;
  Act act = Act::kNone;
};

/// Stack of Linear [+ BatchNorm] + activation layers whose parameters live in
/// a ParamStore under `<prefix>.l<i>.*`, all in one freeze group.
///
/// A Linear followed by batch norm has no bias (the norm's shift replaces it).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, std::string group, std::vector<DenseSpec> layers);

  /// Registers parameters and running-statistics buffers, drawing weights
  /// from N(0, gain/fan_in) with gain 2 before ReLU and 1 otherwise.
  void init(diff::ParamStore& store, std::mt19937_64& rng) const;

  /// `training` selects batch statistics; frozen groups always use running ones.
  diff::Var forward(diff::Tape& tape, diff::ParamStore& store, diff::Var x, bool training) const;

  const std::string& group() const { return group_; }
  int in_width() const { return layers_.front().in; }
  int out_width() const { return layers_.back().out; }

 private:
  std::string prefix_;
  std::string group_;
  std::vector<DenseSpec> layers_;
};

/// Chains widths w0 -> w1 -> ... with one activation/batch-norm choice for
/// every layer, except `last_act` on the final layer.
std::vector<DenseSpec> chain(const std::vector<int>& widths, bool batch_norm, Act act,
                             Act last_act, bool last_batch_norm);

}  // namespace posedistill::models
