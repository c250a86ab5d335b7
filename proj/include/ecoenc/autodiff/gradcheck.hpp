#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ecoenc/autodiff/graph.hpp"

namespace ecoenc::ad {

/// Builds a scalar loss on `graph` from leaves holding the checked inputs.
using LossBuilder = std::function<Var(Graph& graph, std::span<const Var> inputs)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor: |a - n| / max(|a|, |n|, floor). Keeps gradients that
  /// are zero up to rounding from reporting huge relative errors.
  double magnitude_floor = 1e-4;
  /// When non-zero, check only this many randomly chosen coordinates per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  /// "input[i][j]: analytic=..., numeric=..." for the worst coordinate.
  std::string worst;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

double relative_error(double analytic, double numeric, double floor);

/// Compares reverse-mode gradients against central finite differences.
/// The numeric side only re-evaluates the forward pass.
GradCheckReport gradcheck(const LossBuilder& build, const std::vector<Tensor>& inputs,
                          const GradCheckOptions& options = {});

}  // namespace ecoenc::ad
