#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecoenc/autodiff/graph.hpp"
#include "ecoenc/autodiff/tensor_map.hpp"
#include "ecoenc/model/model.hpp"
#include "ecoenc/task/task.hpp"

namespace ecoenc::train {

/// weighted: γ_k = k/K, strictly increasing. unweighted: γ_k = 1.
/// baseline: only the last exit is supervised.
enum class DepthMode { Weighted, Unweighted, Baseline };

DepthMode parse_depth_mode(const std::string& name);
std::string depth_mode_name(DepthMode mode);

struct StepAConfig {
  double lambda_mask = 5.0;
  double lambda_class = 2.0;
  /// Class-loss weight of background tokens relative to foreground ones.
  double background_weight = 0.1;
  DepthMode mode = DepthMode::Weighted;
  /// Per-exit coefficients in exit_set order; empty means the mode default.
  std::vector<double> gamma;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  std::uint64_t seed = 0;
  /// Worker cap for per-example graphs; 0 uses every core.
  std::size_t threads = 0;

  /// γ for the given exits, after checking the mode's coefficient contract.
  std::vector<double> resolved_gamma(const model::ModelConfig& model) const;
  void validate(const model::ModelConfig& model) const;
};

/// λ_mask · BCE(fg) + λ_class · mean_t w_t · CE_t, with w_t = background_weight
/// on background tokens and 1 elsewhere.
ad::Var exit_loss(const model::ExitVars& pred, const task::Example& example,
                  const StepAConfig& cfg);

/// Σ_k γ_k · exit_loss(pred_k). Exits with γ_k = 0 are skipped.
ad::Var weighted_multiexit_loss(const std::vector<model::ExitVars>& preds,
                                const task::Example& example, const StepAConfig& cfg,
                                const std::vector<double>& gamma);

struct EpochRecord {
  std::size_t epoch = 0;
  double total_loss = 0.0;
  std::vector<double> exit_loss;     // unweighted, per exit
  std::vector<double> exit_quality;  // validation toy_quality, per exit

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainLog {
  std::vector<int> exit_set;
  std::vector<EpochRecord> epochs;

  std::string to_csv() const;
  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

struct TrainResult {
  ad::Parameters params;
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch Adam on the weighted loss. Per-example graphs may run on worker
/// threads; gradients are reduced in batch order so the result is identical
/// for any thread count. Throws TrainingError naming the epoch and batch on a
/// non-finite loss.
TrainResult train_parent(const model::ModelConfig& model_cfg, ad::Parameters params,
                         const task::ExampleSet& train_set, const task::ExampleSet& val_set,
                         const StepAConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean validation toy_quality per exit.
std::vector<double> mean_exit_quality(const model::MultiExitModel& model,
                                      const task::ExampleSet& set, std::size_t threads = 0);

}  // namespace ecoenc::train
