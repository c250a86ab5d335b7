#include "ecoenc/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "ecoenc/errors.hpp"

namespace ecoenc::ad {

namespace {

double evaluate(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(g.parameter(t, false));
  return build(g, leaves).value().item();
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradcheck(const LossBuilder& build, const std::vector<Tensor>& inputs,
                          const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.parameter(t, true));
    Var loss = build(g, leaves);
    g.backward(loss);
    for (const Var& leaf : leaves) {
      analytic.push_back(g.has_grad(leaf) ? g.grad_tensor(leaf) : Tensor(leaf.shape()));
    }
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  std::vector<Tensor> work = inputs;
  for (std::size_t i = 0; i < work.size(); ++i) {
    std::vector<std::size_t> coords(work[i].numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t j : coords) {
      const double original = work[i][j];
      work[i][j] = original + options.step;
      const double plus = evaluate(build, work);
      work[i][j] = original - options.step;
      const double minus = evaluate(build, work);
      work[i][j] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[i][j];
      const double err = relative_error(a, numeric, options.magnitude_floor);
      ++report.coords_checked;
      if (report.worst.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        std::ostringstream ss;
        ss << "input[" << i << "][" << j << "]: analytic=" << a << ", numeric=" << numeric;
        report.worst = ss.str();
      }
    }
  }
  return report;
}

}  // namespace ecoenc::ad
