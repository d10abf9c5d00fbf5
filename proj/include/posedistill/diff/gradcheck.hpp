#pragma once

#include <functional>
#include <span>

#include "posedistill/diff/tape.hpp"

namespace posedistill::diff {

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares reverse-mode gradients of `fn` with central finite differences.
///
/// Returns max over all input coordinates of
///   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double grad_check(const ScalarFn& fn, std::span<const Tensor> inputs, double epsilon = 1e-5);

/// Value of `fn` on a fresh tape with every input as a constant.
double evaluate_scalar(const ScalarFn& fn, std::span<const Tensor> inputs);

}  // namespace posedistill::diff
