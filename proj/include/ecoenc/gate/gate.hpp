#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecoenc/autodiff/graph.hpp"
#include "ecoenc/derived/derived.hpp"

namespace ecoenc::gate {

enum class LossVariant { HardCE, UCE, SoftCE, SoftMSE };

LossVariant parse_loss_variant(const std::string& name);
std::string loss_variant_name(LossVariant variant);

inline constexpr double kBetaCoco = 0.0005;
inline constexpr double kBetaCityscapes = 0.003;

struct GateConfig {
  double beta = kBetaCoco;
  /// Largest exit the gate may choose; 0 means the last exit.
  int K_max = 0;
  LossVariant variant = LossVariant::HardCE;
  std::size_t epochs = 300;
  std::size_t batch_size = 64;
  double lr = 0.01;
  std::uint64_t seed = 0;
  /// Every holdout_every-th record (by position) is held out for the
  /// target-accuracy report; 0 disables the split.
  std::size_t holdout_every = 5;

  /// Exits k in exit_set with k <= K_max. Throws ConfigError when K_max is not an exit.
  std::vector<int> effective_exits(const std::vector<int>& exit_set) const;
  void validate(const std::vector<int>& exit_set) const;
};

/// Column-wise mean over the rows of f1.
std::vector<double> pool(const ad::Tensor& f1);

/// u_k = q_k − β·k.
std::vector<double> utility(std::span<const double> q, double beta, std::span<const int> exits);

/// Position of the largest value, ties to the lowest position.
std::size_t argmax_first(std::span<const double> values);

/// argmax_k u_k with ties toward the smallest exit; returns the exit itself.
int target_exit(std::span<const double> q, double beta, std::span<const int> exits);

/// Mean over rows of the variant's loss. logits is [B, E]; q holds B quality
/// vectors over the E effective exits.
ad::Var gate_loss(ad::Var logits, const std::vector<std::vector<double>>& q, double beta,
                  std::span<const int> exits, LossVariant variant);

struct GateParams {
  std::vector<int> exits;
  ad::Tensor W;     // [E, d_model]
  ad::Tensor bias;  // [E]

  friend bool operator==(const GateParams&, const GateParams&) = default;
};

struct GateDecision {
  std::uint64_t example_id = 0;
  std::vector<double> logits;
  int chosen_exit = 0;
};

/// logits = W·pooled + bias; argmax with ties to the smallest exit.
GateDecision select_exit(std::span<const double> pooled_f1, const GateParams& gate,
                         std::uint64_t example_id = 0);

struct GateReport {
  LossVariant variant = LossVariant::HardCE;
  double beta = 0.0;
  int K_max = 0;
  double target_accuracy = 0.0;  // on the held-out records
  std::vector<int> exits;
  std::vector<std::size_t> target_histogram;    // over all records
  std::vector<std::size_t> decision_histogram;  // over all records

  std::string csv_header() const;
  std::string csv_row() const;
};

struct GateTrainResult {
  GateParams params;
  GateReport report;
};

/// Minibatch Adam on the cached pooled features; never touches the parent.
/// When expected_ckpt_hash is given it must equal the dataset's provenance
/// hash, otherwise ProvenanceError.
GateTrainResult train_gate(const derived::DerivedDataset& dataset, const GateConfig& cfg,
                           const std::optional<std::string>& expected_ckpt_hash = std::nullopt);

/// Checkpoint (W, bias) plus a JSON sidecar with the exits and training setup.
void save_gate(const std::filesystem::path& dir, const GateParams& gate, const GateConfig& cfg,
               const std::string& ckpt_hash);
struct LoadedGate {
  GateParams params;
  GateConfig config;
  std::string ckpt_hash;
};
LoadedGate load_gate(const std::filesystem::path& dir);

inline constexpr const char* kGateCheckpoint = "gate.ckpt";
inline constexpr const char* kGateSidecar = "gate.json";
inline constexpr const char* kGateReport = "gate_report.csv";

}  // namespace ecoenc::gate
