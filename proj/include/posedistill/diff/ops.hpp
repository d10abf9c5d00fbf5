#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "posedistill/diff/tape.hpp"

// Differentiable primitives. Every op records its forward value on the tape of
// its first argument and throws ShapeError on incompatible shapes or
// NumericalError on a non-finite result. There is no implicit broadcasting:
// binary elementwise ops need identical shapes, and bias addition is explicit.
namespace posedistill::diff {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// x[..., F] + bias[F] on every leading index.
Var add_bias(Var x, Var bias);
Var scale(Var a, double s);

/// [M, K] x [K, N] -> [M, N].
Var matmul(Var a, Var b);
/// Swaps the two axes of a rank-2 tensor.
Var transpose(Var a);
Var reshape(Var a, Shape shape);
/// Joins tensors that agree on every axis except `axis`.
Var concat(std::span<const Var> parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);

Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
/// Natural log; non-positive inputs are a NumericalError.
Var log(Var a);
Var smooth_l1(Var a);

Var softmax(Var a, std::size_t axis);
Var log_softmax(Var a, std::size_t axis);
/// Maximum along `axis` (axis removed). Gradient goes to the first maximizer.
Var max_over_axis(Var a, std::size_t axis);
/// Sum of all elements, as a scalar.
Var sum(Var a);
/// Sum along `axis` (axis removed).
Var sum(Var a, std::size_t axis);
/// Mean of all elements, as a scalar.
Var mean(Var a);

/// x / ||x|| along `axis`; a zero-norm slice is a NumericalError.
Var l2_normalize(Var a, std::size_t axis);
/// Cosine similarity along the last axis; result drops that axis.
Var cosine_similarity(Var a, Var b);

/// out[i] = a[i, index[i]] for a rank-2 `a`.
Var gather(Var a, std::span<const std::size_t> index);

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalization over axis 0 of a [B, F] input.
///
/// Training mode normalizes with the batch statistics and folds them into the
/// running estimates (momentum-weighted, unbiased variance). Eval mode is the
/// fixed affine map given by the running estimates.
Var batch_norm(Var x, Var gamma, Var beta, const BatchNormState& state, bool training);

}  // namespace posedistill::diff
