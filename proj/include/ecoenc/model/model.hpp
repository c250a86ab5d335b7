#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ecoenc/autodiff/graph.hpp"
#include "ecoenc/autodiff/tensor_map.hpp"
#include "ecoenc/task/task.hpp"

namespace ecoenc::model {

struct ModelConfig {
  std::size_t K = 6;
  std::vector<int> exit_set{2, 3, 4, 5, 6};
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 64;
  std::size_t C = 5;
  std::size_t T = 32;
  std::size_t d_in = 16;
  /// Tokens averaged into one row of the low-resolution feature f1.
  std::size_t f1_group = 4;
  double pos_init_std = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t f1_rows() const { return (T + f1_group - 1) / f1_group; }
  bool is_exit(int k) const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

/// Fresh parameters. Names:
///   backbone.{in.weight,in.bias,pos,f1.weight,f1.bias}
///   layer<k>.{ln1,ln2}.{gain,bias}, layer<k>.attn.{q,k,v,o}.{weight,bias},
///   layer<k>.ffn.{in,out}.{weight,bias}
///   head.{class,fg}.{weight,bias}
ad::Parameters init_parameters(const ModelConfig& cfg);

/// Throws ModelError if a name is missing or a shape disagrees with cfg.
void check_parameters(const ModelConfig& cfg, const ad::Parameters& params);

struct LayerVars {
  ad::Var ln1_gain, ln1_bias, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  ad::Var ln2_gain, ln2_bias, ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
};

/// Parameters bound as leaves of one graph, without copying.
struct ModelVars {
  ad::Var in_w, in_b, pos, f1_w, f1_b;
  std::vector<LayerVars> layers;
  ad::Var class_w, class_b, fg_w, fg_b;
};

ModelVars bind_parameters(ad::Graph& graph, const ModelConfig& cfg, const ad::Parameters& params,
                          bool requires_grad);

/// Gradient of every parameter after graph.backward(); parameters the loss
/// never reached get zeros.
ad::Gradients collect_gradients(const ad::Graph& graph, const ModelVars& vars,
                                const ad::Parameters& params);

struct BackboneVars {
  ad::Var tokens;  // [T, d_model]
  ad::Var f1;      // [T', d_model]
};

struct ExitVars {
  int exit = 0;
  ad::Var class_logits;  // [T, C]
  ad::Var fg_logits;     // [T, 1]
};

/// Optional instrumentation filled by the forward functions.
struct ForwardTrace {
  std::size_t layers_evaluated = 0;
  std::vector<ad::Tensor> layer_outputs;
  /// One [T, T] attention matrix per (layer, head), layer-major.
  std::vector<ad::Tensor> attention;
};

BackboneVars backbone_forward(const ModelConfig& cfg, const ModelVars& vars,
                              const ad::Tensor& tokens);
/// Pre-norm layer; layer_index counts from 1.
ad::Var encoder_layer_forward(const ModelConfig& cfg, const ModelVars& vars, ad::Var x,
                              std::size_t layer_index, ForwardTrace* trace = nullptr);
ExitVars head_forward(const ModelVars& vars, ad::Var x, int exit);

/// Backbone, layers 1..depth, and the shared head at every exit <= depth
/// (or only at depth when all_exits is false).
std::vector<ExitVars> forward_graph(const ModelConfig& cfg, const ModelVars& vars,
                                    const ad::Tensor& tokens, int depth, bool all_exits,
                                    ForwardTrace* trace = nullptr);

struct BackboneFeatures {
  ad::Tensor tokens;
  ad::Tensor f1;
};

struct ExitPrediction {
  int exit = 0;
  ad::Tensor class_logits;
  ad::Tensor fg_logits;

  friend bool operator==(const ExitPrediction&, const ExitPrediction&) = default;
};

struct Decoded {
  std::vector<int> labels;
  std::vector<int> fg;
};

/// class = argmax with ties to the lower index; foreground iff logit > 0.
Decoded decode(const ExitPrediction& pred);

/// Column-wise mean of the rows.
std::vector<double> pool_rows(const ad::Tensor& rows);

/// Frozen-parameter inference. Methods are const and safe to call
/// concurrently.
class MultiExitModel {
 public:
  MultiExitModel(ModelConfig cfg, ad::Parameters params);

  const ModelConfig& config() const noexcept { return cfg_; }
  const ad::Parameters& parameters() const noexcept { return params_; }

  BackboneFeatures backbone_forward(const task::Example& example) const;
  /// Throws PolicyError when k is not an allowed exit. Layers past k never run.
  ExitPrediction run_to_depth(const task::Example& example, int k,
                              ForwardTrace* trace = nullptr) const;
  std::vector<ExitPrediction> forward_all_exits(const task::Example& example,
                                                ForwardTrace* trace = nullptr) const;
  /// Gating feature: pool_rows of the backbone's f1.
  std::vector<double> pooled_f1(const task::Example& example) const;

  void save(const std::filesystem::path& dir) const;
  static MultiExitModel load(const std::filesystem::path& dir);

 private:
  void check_example(const task::Example& example) const;

  ModelConfig cfg_;
  ad::Parameters params_;
};

inline constexpr const char* kParentCheckpoint = "parent.ckpt";
inline constexpr const char* kModelConfigFile = "model_config.json";

}  // namespace ecoenc::model
