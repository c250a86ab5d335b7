#pragma once

#include <cstddef>
#include <span>

#include "ecoenc/autodiff/graph.hpp"

namespace ecoenc::ad {

/// [m,k] x [k,n] -> [m,n].
Var matmul(Var a, Var b);
/// Rank-2 transpose.
Var transpose(Var a);

// Elementwise with numpy-style right-aligned broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double factor);
Var relu(Var a);

/// Normalises each slice along the last axis to zero mean and unit
/// (biased) variance. No affine part.
Var layer_norm(Var x, double eps);

/// Negative axes count from the back.
Var softmax(Var x, int axis);
Var log_softmax(Var x, int axis);

/// Mean along `axis`; the axis is removed from the output shape.
Var mean(Var x, int axis);
/// Sum of all elements, as a scalar.
Var sum(Var x);

Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);

/// Averages consecutive groups of `group` rows of a matrix. The last group
/// may be short when the row count is not a multiple of `group`.
Var group_mean_rows(Var x, std::size_t group);

/// -(1/n) * sum_i sum_c target[i,c] * log_softmax(logits)[i,c].
/// Target rows must be non-negative but need not sum to one.
Var cross_entropy(Var logits, const Tensor& target);

/// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
Var bce_with_logits(Var logits, const Tensor& target);

}  // namespace ecoenc::ad
