#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ecoenc/derived/derived.hpp"
#include "ecoenc/gate/gate.hpp"
#include "ecoenc/model/model.hpp"

namespace ecoenc::cost {

/// Analytic forward FLOPs, multiply-add = 2 FLOPs, averaging = 1 FLOP per
/// averaged element; normalization, softmax and activations are free.
///   per_layer = 8·T·d² + 4·T²·d + 4·T·d·d_ffn
///   backbone  = 2·T·d_in·d + T·d + 2·T'·d²      (projection, f1 averaging, f1 map)
///   head      = 2·T·d·(C + 1)
///   gate      = 2·d·|exits| + T'·d              (linear map, pooling)
struct CostModel {
  std::uint64_t backbone_flops = 0;
  std::uint64_t per_layer_flops = 0;
  std::uint64_t head_flops = 0;
  std::uint64_t gate_flops = 0;

  /// Cost of one example exiting after k layers; the gate runs only for gated policies.
  std::uint64_t total_flops(int k, bool gated) const;
};

CostModel build_cost_model(const model::ModelConfig& cfg, std::size_t gate_exits);
inline CostModel build_cost_model(const model::ModelConfig& cfg) {
  return build_cost_model(cfg, cfg.exit_set.size());
}

/// Gate logits through the autodiff ops so the per-op counter sees them.
std::vector<double> counted_gate_logits(const ad::Tensor& f1, const gate::GateParams& gate);

struct FixedPolicy {
  int k = 0;
};
struct OraclePolicy {
  double beta = 0.0;
  int K_max = 0;  // 0 = last exit
};
struct GatePolicy {
  gate::GateParams params;
  double beta = 0.0;
  gate::LossVariant variant = gate::LossVariant::HardCE;
};
using Policy = std::variant<FixedPolicy, OraclePolicy, GatePolicy>;

std::string policy_kind(const Policy& policy);

struct EvalReport {
  std::string policy;
  double beta = 0.0;
  int K_max = 0;
  std::string variant;
  std::size_t n = 0;
  double mean_quality = 0.0;
  double total_flops_mean = 0.0;
  double encoder_flops_mean = 0.0;
  double mean_exit = 0.0;
  std::vector<int> exits;  // the model's full exit set
  std::vector<std::size_t> exit_histogram;
};

/// Early-exit inference over the set: each example runs only up to its
/// chosen exit. Oracle policies run every exit to learn q first.
EvalReport evaluate_policy(const task::ExampleSet& eval_set, const model::MultiExitModel& model,
                           const Policy& policy, const CostModel& cost, std::size_t threads = 0);

/// Per-example quality at every exit plus the pooled gating feature.
/// Prefix consistency makes q[k] equal to the quality of run_to_depth(k), so
/// policies can be scored from the cache without re-running the parent.
struct EvalCache {
  std::vector<int> exits;
  std::vector<std::vector<double>> q;
  std::vector<std::vector<double>> pooled_f1;
};

EvalCache build_eval_cache(const task::ExampleSet& eval_set, const model::MultiExitModel& model,
                           std::size_t threads = 0);
EvalReport evaluate_cached(const EvalCache& cache, const Policy& policy, const CostModel& cost);

/// Counts of target_exit per exit over the derived records.
std::vector<std::size_t> exit_histogram(const derived::DerivedDataset& derived, double beta,
                                        int K_max = 0);

/// One gate row and one oracle row per β, in β order. The gate is retrained
/// from the cached pooled features for every β.
std::vector<EvalReport> sweep_beta(const derived::DerivedDataset& derived, const EvalCache& cache,
                                   const std::vector<double>& betas,
                                   const gate::GateConfig& base, const CostModel& cost);

std::string report_csv(const std::vector<EvalReport>& reports);
std::string pareto_csv(const std::vector<EvalReport>& reports);
/// Mean quality against encoder FLOPs, one series per policy kind.
std::string pareto_svg(const std::vector<EvalReport>& reports);

inline constexpr const char* kReportFile = "report.csv";
inline constexpr const char* kParetoCsv = "pareto.csv";
inline constexpr const char* kParetoSvg = "pareto.svg";

}  // namespace ecoenc::cost
