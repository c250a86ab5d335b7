#include "ecoenc/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "ecoenc/autodiff/checkpoint.hpp"
#include "ecoenc/autodiff/ops.hpp"
#include "ecoenc/errors.hpp"

namespace ecoenc::model {

using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string layer_name(std::size_t k, const char* rest) {
  return "layer" + std::to_string(k) + "." + rest;
}

struct ParamSpec {
  std::string name;
  Shape shape;
};

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  std::vector<ParamSpec> specs{
      {"backbone.in.weight", {cfg.d_in, d}}, {"backbone.in.bias", {d}},
      {"backbone.pos", {cfg.T, d}},          {"backbone.f1.weight", {d, d}},
      {"backbone.f1.bias", {d}},
  };
  for (std::size_t k = 1; k <= cfg.K; ++k) {
    for (const char* p : {"ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias"})
      specs.push_back({layer_name(k, p), {d}});
    for (const char* p : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
      specs.push_back({layer_name(k, p) + std::string(".weight"), {d, d}});
      specs.push_back({layer_name(k, p) + std::string(".bias"), {d}});
    }
    specs.push_back({layer_name(k, "ffn.in.weight"), {d, cfg.d_ffn}});
    specs.push_back({layer_name(k, "ffn.in.bias"), {cfg.d_ffn}});
    specs.push_back({layer_name(k, "ffn.out.weight"), {cfg.d_ffn, d}});
    specs.push_back({layer_name(k, "ffn.out.bias"), {d}});
  }
  specs.push_back({"head.class.weight", {d, cfg.C}});
  specs.push_back({"head.class.bias", {cfg.C}});
  specs.push_back({"head.fg.weight", {d, 1}});
  specs.push_back({"head.fg.bias", {1}});
  return specs;
}

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Var affine(Var x, Var w, Var b) { return ad::add(ad::matmul(x, w), b); }

Var norm(Var x, Var gain, Var bias) {
  return ad::add(ad::mul(ad::layer_norm(x, kLayerNormEps), gain), bias);
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(K > 0 && d_model > 0 && n_heads > 0 && d_ffn > 0 && C > 1 && T > 0 && d_in > 0 &&
              f1_group > 0,
          "sizes must be positive");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(!exit_set.empty(), "exit_set is empty");
  require(std::is_sorted(exit_set.begin(), exit_set.end()) &&
              std::adjacent_find(exit_set.begin(), exit_set.end()) == exit_set.end(),
          "exit_set must be strictly increasing");
  require(exit_set.front() >= 1 && exit_set.back() == static_cast<int>(K),
          "exit_set must lie in 1..K and end at K");
  require(pos_init_std >= 0.0, "pos_init_std must be non-negative");
}

bool ModelConfig::is_exit(int k) const {
  return std::binary_search(exit_set.begin(), exit_set.end(), k);
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = {{"K", cfg.K},         {"exit_set", cfg.exit_set}, {"d_model", cfg.d_model},
       {"n_heads", cfg.n_heads}, {"d_ffn", cfg.d_ffn},  {"C", cfg.C},
       {"T", cfg.T},         {"d_in", cfg.d_in},         {"f1_group", cfg.f1_group},
       {"pos_init_std", cfg.pos_init_std}, {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  j.at("K").get_to(cfg.K);
  j.at("exit_set").get_to(cfg.exit_set);
  j.at("d_model").get_to(cfg.d_model);
  j.at("n_heads").get_to(cfg.n_heads);
  j.at("d_ffn").get_to(cfg.d_ffn);
  j.at("C").get_to(cfg.C);
  j.at("T").get_to(cfg.T);
  j.at("d_in").get_to(cfg.d_in);
  j.at("f1_group").get_to(cfg.f1_group);
  j.at("pos_init_std").get_to(cfg.pos_init_std);
  j.at("seed").get_to(cfg.seed);
}

ad::Parameters init_parameters(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n01;
  ad::Parameters params;
  for (auto& spec : parameter_specs(cfg)) {
    Tensor t(spec.shape);
    const auto& name = spec.name;
    if (name == "backbone.pos") {
      for (auto& v : t.values()) v = cfg.pos_init_std * n01(rng);
    } else if (ends_with(name, "gain")) {
      t = Tensor::filled(spec.shape, 1.0);
    } else if (name.find(".attn.") != std::string::npos) {
      // Projections get Glorot bounds, their biases start at zero.
      if (ends_with(name, "weight")) t = uniform(spec.shape, std::sqrt(6.0 / (2.0 * spec.shape[0])), rng);
    } else if (ends_with(name, "weight")) {
      t = uniform(spec.shape, 1.0 / std::sqrt(static_cast<double>(spec.shape[0])), rng);
    } else if (!ends_with(name, "ln1.bias") && !ends_with(name, "ln2.bias")) {
      // Linear biases share the fan-in bound of the weight registered just before.
      const auto& w = params.at(name.substr(0, name.size() - 4) + "weight");
      t = uniform(spec.shape, 1.0 / std::sqrt(static_cast<double>(w.dim(0))), rng);
    }
    params.add(name, std::move(t));
  }
  return params;
}

void check_parameters(const ModelConfig& cfg, const ad::Parameters& params) {
  const auto specs = parameter_specs(cfg);
  for (const auto& spec : specs) {
    if (!params.contains(spec.name)) throw ModelError("missing parameter '" + spec.name + "'");
    if (params.at(spec.name).shape() != spec.shape) {
      throw ModelError("parameter '" + spec.name + "' has shape " +
                       ad::shape_str(params.at(spec.name).shape()) + ", expected " +
                       ad::shape_str(spec.shape));
    }
  }
  if (params.size() != specs.size()) throw ModelError("checkpoint has unexpected parameters");
}

ModelVars bind_parameters(ad::Graph& graph, const ModelConfig& cfg, const ad::Parameters& params,
                          bool requires_grad) {
  auto p = [&](const std::string& name) { return graph.parameter(params.at(name), requires_grad); };
  ModelVars v;
  v.in_w = p("backbone.in.weight");
  v.in_b = p("backbone.in.bias");
  v.pos = p("backbone.pos");
  v.f1_w = p("backbone.f1.weight");
  v.f1_b = p("backbone.f1.bias");
  for (std::size_t k = 1; k <= cfg.K; ++k) {
    auto q = [&](const char* rest) { return p(layer_name(k, rest)); };
    v.layers.push_back({q("ln1.gain"), q("ln1.bias"), q("attn.q.weight"), q("attn.q.bias"),
                        q("attn.k.weight"), q("attn.k.bias"), q("attn.v.weight"),
                        q("attn.v.bias"), q("attn.o.weight"), q("attn.o.bias"), q("ln2.gain"),
                        q("ln2.bias"), q("ffn.in.weight"), q("ffn.in.bias"), q("ffn.out.weight"),
                        q("ffn.out.bias")});
  }
  v.class_w = p("head.class.weight");
  v.class_b = p("head.class.bias");
  v.fg_w = p("head.fg.weight");
  v.fg_b = p("head.fg.bias");
  return v;
}

ad::Gradients collect_gradients(const ad::Graph& graph, const ModelVars& vars,
                                const ad::Parameters& params) {
  std::vector<std::pair<const char*, Var>> fixed{
      {"backbone.in.weight", vars.in_w}, {"backbone.in.bias", vars.in_b},
      {"backbone.pos", vars.pos},        {"backbone.f1.weight", vars.f1_w},
      {"backbone.f1.bias", vars.f1_b},   {"head.class.weight", vars.class_w},
      {"head.class.bias", vars.class_b}, {"head.fg.weight", vars.fg_w},
      {"head.fg.bias", vars.fg_b}};
  ad::Gradients grads;
  auto put = [&](const std::string& name, Var v) {
    grads.add(name, graph.has_grad(v) ? graph.grad_tensor(v) : Tensor(params.at(name).shape()));
  };
  for (auto& [name, v] : fixed) put(name, v);
  for (std::size_t i = 0; i < vars.layers.size(); ++i) {
    const auto& L = vars.layers[i];
    const std::size_t k = i + 1;
    put(layer_name(k, "ln1.gain"), L.ln1_gain);
    put(layer_name(k, "ln1.bias"), L.ln1_bias);
    put(layer_name(k, "ln2.gain"), L.ln2_gain);
    put(layer_name(k, "ln2.bias"), L.ln2_bias);
    put(layer_name(k, "attn.q.weight"), L.q_w);
    put(layer_name(k, "attn.q.bias"), L.q_b);
    put(layer_name(k, "attn.k.weight"), L.k_w);
    put(layer_name(k, "attn.k.bias"), L.k_b);
    put(layer_name(k, "attn.v.weight"), L.v_w);
    put(layer_name(k, "attn.v.bias"), L.v_b);
    put(layer_name(k, "attn.o.weight"), L.o_w);
    put(layer_name(k, "attn.o.bias"), L.o_b);
    put(layer_name(k, "ffn.in.weight"), L.ffn_in_w);
    put(layer_name(k, "ffn.in.bias"), L.ffn_in_b);
    put(layer_name(k, "ffn.out.weight"), L.ffn_out_w);
    put(layer_name(k, "ffn.out.bias"), L.ffn_out_b);
  }
  return grads;
}

BackboneVars backbone_forward(const ModelConfig& cfg, const ModelVars& vars,
                              const Tensor& tokens) {
  if (tokens.rank() != 2 || tokens.cols() != cfg.d_in || tokens.rows() != cfg.T) {
    throw ModelError("backbone: tokens have shape " + ad::shape_str(tokens.shape()) +
                     ", expected [" + std::to_string(cfg.T) + ", " + std::to_string(cfg.d_in) +
                     "]");
  }
  ad::Graph& g = vars.in_w.graph();
  Var x = g.constant(tokens);
  Var h = ad::add(ad::relu(affine(x, vars.in_w, vars.in_b)), vars.pos);
  Var f1 = affine(ad::group_mean_rows(h, cfg.f1_group), vars.f1_w, vars.f1_b);
  return {h, f1};
}

Var encoder_layer_forward(const ModelConfig& cfg, const ModelVars& vars, Var x,
                          std::size_t layer_index, ForwardTrace* trace) {
  if (layer_index < 1 || layer_index > cfg.K) {
    throw ModelError("encoder layer " + std::to_string(layer_index) + " outside 1.." +
                     std::to_string(cfg.K));
  }
  const LayerVars& L = vars.layers[layer_index - 1];
  const std::size_t dh = cfg.d_model / cfg.n_heads;
  Var h = norm(x, L.ln1_gain, L.ln1_bias);
  Var q = ad::scale(affine(h, L.q_w, L.q_b), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var k = affine(h, L.k_w, L.k_b);
  Var v = affine(h, L.v_w, L.v_b);
  std::vector<Var> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t i = 0; i < cfg.n_heads; ++i) {
    Var qi = ad::slice_cols(q, i * dh, dh);
    Var ki = ad::slice_cols(k, i * dh, dh);
    Var vi = ad::slice_cols(v, i * dh, dh);
    Var attn = ad::softmax(ad::matmul(qi, ad::transpose(ki)), 1);
    if (trace) trace->attention.push_back(attn.value());
    heads.push_back(ad::matmul(attn, vi));
  }
  x = ad::add(x, affine(ad::concat_cols(heads), L.o_w, L.o_b));
  Var f = ad::relu(affine(norm(x, L.ln2_gain, L.ln2_bias), L.ffn_in_w, L.ffn_in_b));
  x = ad::add(x, affine(f, L.ffn_out_w, L.ffn_out_b));
  if (trace) {
    ++trace->layers_evaluated;
    trace->layer_outputs.push_back(x.value());
  }
  return x;
}

ExitVars head_forward(const ModelVars& vars, Var x, int exit) {
  return {exit, affine(x, vars.class_w, vars.class_b), affine(x, vars.fg_w, vars.fg_b)};
}

std::vector<ExitVars> forward_graph(const ModelConfig& cfg, const ModelVars& vars,
                                    const Tensor& tokens, int depth, bool all_exits,
                                    ForwardTrace* trace) {
  Var x = backbone_forward(cfg, vars, tokens).tokens;
  std::vector<ExitVars> outs;
  for (int k = 1; k <= depth; ++k) {
    x = encoder_layer_forward(cfg, vars, x, static_cast<std::size_t>(k), trace);
    if (k == depth || (all_exits && cfg.is_exit(k))) outs.push_back(head_forward(vars, x, k));
  }
  return outs;
}

Decoded decode(const ExitPrediction& pred) {
  const auto& logits = pred.class_logits;
  Decoded out;
  out.labels.resize(logits.rows());
  out.fg.resize(logits.rows());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(t, c) > logits.at(t, best)) best = c;
    out.labels[t] = static_cast<int>(best);
    out.fg[t] = pred.fg_logits[t] > 0.0 ? 1 : 0;
  }
  return out;
}

std::vector<double> pool_rows(const Tensor& rows) {
  if (rows.rank() != 2 || rows.rows() == 0) {
    throw DimensionError("pool: expected a non-empty matrix, got " + ad::shape_str(rows.shape()));
  }
  std::vector<double> out(rows.cols(), 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r)
    for (std::size_t c = 0; c < rows.cols(); ++c) out[c] += rows.at(r, c);
  for (auto& v : out) v /= static_cast<double>(rows.rows());
  return out;
}

MultiExitModel::MultiExitModel(ModelConfig cfg, ad::Parameters params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  check_parameters(cfg_, params_);
}

void MultiExitModel::check_example(const task::Example& example) const {
  if (example.tokens.rank() != 2 || example.tokens.rows() != cfg_.T ||
      example.tokens.cols() != cfg_.d_in) {
    throw ModelError("example " + std::to_string(example.id) + " has token shape " +
                     ad::shape_str(example.tokens.shape()));
  }
}

BackboneFeatures MultiExitModel::backbone_forward(const task::Example& example) const {
  check_example(example);
  ad::Graph g;
  const auto vars = bind_parameters(g, cfg_, params_, false);
  auto out = model::backbone_forward(cfg_, vars, example.tokens);
  return {out.tokens.value(), out.f1.value()};
}

ExitPrediction MultiExitModel::run_to_depth(const task::Example& example, int k,
                                            ForwardTrace* trace) const {
  if (!cfg_.is_exit(k)) throw PolicyError("exit " + std::to_string(k) + " is not in the exit set");
  check_example(example);
  ad::Graph g;
  const auto vars = bind_parameters(g, cfg_, params_, false);
  auto outs = forward_graph(cfg_, vars, example.tokens, k, false, trace);
  return {k, outs.back().class_logits.value(), outs.back().fg_logits.value()};
}

std::vector<ExitPrediction> MultiExitModel::forward_all_exits(const task::Example& example,
                                                              ForwardTrace* trace) const {
  check_example(example);
  ad::Graph g;
  const auto vars = bind_parameters(g, cfg_, params_, false);
  std::vector<ExitPrediction> preds;
  for (auto& e : forward_graph(cfg_, vars, example.tokens, static_cast<int>(cfg_.K), true, trace))
    preds.push_back({e.exit, e.class_logits.value(), e.fg_logits.value()});
  return preds;
}

std::vector<double> MultiExitModel::pooled_f1(const task::Example& example) const {
  return pool_rows(backbone_forward(example).f1);
}

void MultiExitModel::save(const std::filesystem::path& dir) const {
  ad::save_checkpoint(dir / kParentCheckpoint, params_);
  ad::write_file(dir / kModelConfigFile, nlohmann::json(cfg_).dump(2) + "\n");
}

MultiExitModel MultiExitModel::load(const std::filesystem::path& dir) {
  const auto text = ad::read_file(dir / kModelConfigFile);
  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(text).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / kModelConfigFile).string() + ": " + e.what());
  }
  return MultiExitModel(std::move(cfg), ad::load_checkpoint(dir / kParentCheckpoint));
}

}  // namespace ecoenc::model
