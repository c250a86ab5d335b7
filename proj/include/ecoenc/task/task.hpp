#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ecoenc/autodiff/tensor.hpp"

namespace ecoenc::task {

struct TaskConfig {
  std::size_t T = 32;
  std::size_t d_in = 16;
  std::size_t C = 5;
  std::size_t D_max = 5;
  std::size_t n_train = 1000;
  std::size_t n_val = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One token sequence. Class 0 is background and fg_mask[t] == (labels[t] != 0).
struct Example {
  std::uint64_t id = 0;
  ad::Tensor tokens;  // [T, d_in]
  std::vector<int> labels;
  std::vector<int> fg_mask;
  int difficulty = 1;

  friend bool operator==(const Example&, const Example&) = default;
};

using ExampleSet = std::vector<Example>;

struct TaskSplits {
  ExampleSet train;
  ExampleSet val;
};

/// Pure function of the config. Train ids are 0..n_train-1, validation ids
/// continue from n_train.
///
/// Each token carries content features z and a difficulty signature. The
/// label of a token is argmax(R · φ^(d-1)(z)) where φ is a fixed orthogonal
/// rotation followed by an absolute-value fold of some coordinates, so higher
/// difficulty needs more nonlinear processing to decode.
TaskSplits generate(const TaskConfig& config);

/// 100 × mean IoU over the foreground classes present in the example or the
/// prediction (background only when neither has any). A token counts as
/// predicted class c only where pred_fg agrees with fg_mask. Tokens falsely
/// predicted foreground count against every foreground class.
double toy_quality(std::span<const int> pred_labels, std::span<const int> pred_fg,
                   const Example& example);

void write_jsonl(const std::filesystem::path& path, const ExampleSet& set);
ExampleSet read_jsonl(const std::filesystem::path& path);

}  // namespace ecoenc::task
