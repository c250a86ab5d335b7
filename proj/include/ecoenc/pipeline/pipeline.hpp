#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ecoenc/cost/cost.hpp"
#include "ecoenc/derived/derived.hpp"
#include "ecoenc/gate/gate.hpp"
#include "ecoenc/model/model.hpp"
#include "ecoenc/task/task.hpp"
#include "ecoenc/train/train.hpp"

namespace ecoenc::pipeline {

/// Everything one run needs. Stages talk to each other only through files
/// under `out`.
struct RunConfig {
  task::TaskConfig task;
  model::ModelConfig model;
  train::StepAConfig stepa;
  gate::GateConfig gate;
  std::filesystem::path out = "run";
  std::size_t threads = 0;

  /// Uses one seed for data, initialization, Step A shuffling and the gate.
  void set_seed(std::uint64_t seed);
  /// Copies the task's T, d_in and C into the model config, then validates all parts.
  void finalize();
};

inline constexpr const char* kTrainFile = "train.jsonl";
inline constexpr const char* kValFile = "val.jsonl";
inline constexpr const char* kTrainLogFile = "train_log.csv";
inline constexpr const char* kRunConfigFile = "run_config.ini";

void gen_data(const RunConfig& rc);

struct ParentStage {
  train::TrainLog log;
  double seconds = 0.0;
};
ParentStage train_parent_stage(const RunConfig& rc, const train::EpochCallback& on_epoch = {});

derived::DerivedDataset build_derived_stage(const RunConfig& rc);

struct GateStage {
  gate::GateTrainResult result;
  double seconds = 0.0;
};
/// Refuses (ProvenanceError) a derived dataset built from a different parent.
GateStage train_gate_stage(const RunConfig& rc);

/// "gate", "oracle" or "fixed:<k>".
cost::Policy parse_policy(const std::string& text, const RunConfig& rc,
                          const std::filesystem::path& out);
/// Evaluates each policy on the validation split and writes report.csv.
std::vector<cost::EvalReport> eval_stage(const RunConfig& rc,
                                         const std::vector<std::string>& policies);

/// Gate and oracle rows per β plus fixed-exit reference rows; writes
/// pareto.csv and pareto.svg.
std::vector<cost::EvalReport> sweep_stage(const RunConfig& rc, const std::vector<double>& betas);

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  bool passed = false;
};
/// Central-difference checks of every op, the Step A losses, all gate loss
/// variants and the model blocks.
std::vector<GradCheckResult> run_gradient_suite(double tolerance = 1e-4);

}  // namespace ecoenc::pipeline
