#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ecoenc/model/model.hpp"
#include "ecoenc/task/task.hpp"

namespace ecoenc::derived {

struct DerivedRecord {
  std::uint64_t id = 0;
  std::vector<double> q;          // toy_quality per exit, exit_set order
  std::vector<double> pooled_f1;  // [d_model]

  friend bool operator==(const DerivedRecord&, const DerivedRecord&) = default;
};

struct DerivedDataset {
  std::vector<int> exit_set;
  std::string ckpt_hash;
  std::uint64_t task_seed = 0;
  std::vector<DerivedRecord> records;  // sorted by id

  friend bool operator==(const DerivedDataset&, const DerivedDataset&) = default;
};

/// toy_quality of the decoded prediction at every exit, from one pass.
std::vector<double> evaluate_exits(const model::MultiExitModel& model,
                                   const task::Example& example);

/// One record per example, sorted by id. threads == 0 uses every core; the
/// result does not depend on the thread count.
DerivedDataset build_derived_dataset(const task::ExampleSet& train_set,
                                     const model::MultiExitModel& model,
                                     const std::string& ckpt_hash, std::uint64_t task_seed,
                                     std::size_t threads = 0);

/// JSONL: a header line {"exit_set", "ckpt_hash", "task_seed"}, then one
/// {"id", "q", "pooled_f1"} object per record.
void write_derived(const std::filesystem::path& path, const DerivedDataset& dataset);
DerivedDataset read_derived(const std::filesystem::path& path);

inline constexpr const char* kDerivedFile = "derived.jsonl";

}  // namespace ecoenc::derived
