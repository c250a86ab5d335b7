#pragma once

#include <cstdint>

#include "ecoenc/autodiff/tensor_map.hpp"

namespace ecoenc::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates and the step count.
struct AdamState {
  std::int64_t step = 0;
  TensorMap first_moment;
  TensorMap second_moment;
};

/// One bias-corrected Adam update of every parameter in `params`.
/// Moments are created lazily on the first call. A non-finite gradient
/// throws TrainingError naming the parameter, before anything is modified.
void adam_step(Parameters& params, const Gradients& grads, AdamState& state,
               const AdamConfig& config);

}  // namespace ecoenc::ad
