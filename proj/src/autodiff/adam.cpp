#include "ecoenc/autodiff/adam.hpp"

#include <cmath>

#include "ecoenc/errors.hpp"

namespace ecoenc::ad {

void adam_step(Parameters& params, const Gradients& grads, AdamState& state,
               const AdamConfig& config) {
  for (const auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    if (g.shape() != p.shape()) {
      throw DimensionError("adam_step: gradient shape " + shape_str(g.shape()) +
                           " does not match parameter '" + name + "' " + shape_str(p.shape()));
    }
    if (!g.all_finite()) throw TrainingError("non-finite gradient for parameter '" + name + "'");
  }
  if (state.step == 0) {
    state.first_moment = params.zeros_like();
    state.second_moment = params.zeros_like();
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, p] : params) {
    const auto g = grads.at(name).values();
    auto m = state.first_moment.at(name).values();
    auto v = state.second_moment.at(name).values();
    auto w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

}  // namespace ecoenc::ad
