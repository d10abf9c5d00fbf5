#include "posedistill/diff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace posedistill::diff {

double evaluate_scalar(const ScalarFn& fn, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    vars.push_back(tape.constant(t));
  }
  return fn(tape, vars).value().item();
}

double grad_check(const ScalarFn& fn, std::span<const Tensor> inputs, double epsilon) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) {
      vars.push_back(tape.variable(t));
    }
    Var root = fn(tape, vars);
    tape.backward(root);
    for (const Var& v : vars) {
      analytic.push_back(tape.gradient(v));
    }
  }

  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double x0 = probe[k][i];
      probe[k][i] = x0 + epsilon;
      const double up = evaluate_scalar(fn, probe);
      probe[k][i] = x0 - epsilon;
      const double down = evaluate_scalar(fn, probe);
      probe[k][i] = x0;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[k][i];
      const double err =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace posedistill::diff
