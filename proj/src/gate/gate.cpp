#include "ecoenc/gate/gate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ecoenc/autodiff/adam.hpp"
#include "ecoenc/autodiff/checkpoint.hpp"
#include "ecoenc/autodiff/ops.hpp"
#include "ecoenc/errors.hpp"
#include "ecoenc/model/model.hpp"
#include "ecoenc/util/format.hpp"
#include "ecoenc/util/rng.hpp"

namespace ecoenc::gate {

using ad::Tensor;
using ad::Var;

LossVariant parse_loss_variant(const std::string& name) {
  if (name == "hard-CE") return LossVariant::HardCE;
  if (name == "u-CE") return LossVariant::UCE;
  if (name == "soft-CE") return LossVariant::SoftCE;
  if (name == "soft-MSE") return LossVariant::SoftMSE;
  throw ConfigError("unknown gate loss variant '" + name +
                    "' (hard-CE, u-CE, soft-CE, soft-MSE)");
}

std::string loss_variant_name(LossVariant variant) {
  switch (variant) {
    case LossVariant::HardCE: return "hard-CE";
    case LossVariant::UCE: return "u-CE";
    case LossVariant::SoftCE: return "soft-CE";
    case LossVariant::SoftMSE: return "soft-MSE";
  }
  return "?";
}

std::vector<int> GateConfig::effective_exits(const std::vector<int>& exit_set) const {
  if (exit_set.empty()) throw ConfigError("empty exit set");
  const int cap = K_max == 0 ? exit_set.back() : K_max;
  if (!std::binary_search(exit_set.begin(), exit_set.end(), cap))
    throw ConfigError("K_max " + std::to_string(cap) + " is not an allowed exit");
  std::vector<int> out;
  for (int k : exit_set)
    if (k <= cap) out.push_back(k);
  return out;
}

void GateConfig::validate(const std::vector<int>& exit_set) const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be finite and >= 0");
  if (epochs == 0 || batch_size == 0) throw ConfigError("gate epochs and batch_size must be positive");
  if (!(lr >= 0.0)) throw ConfigError("gate lr must be >= 0");
  effective_exits(exit_set);
}

std::vector<double> pool(const Tensor& f1) { return model::pool_rows(f1); }

std::vector<double> utility(std::span<const double> q, double beta, std::span<const int> exits) {
  if (q.size() != exits.size())
    throw DimensionError("utility: q has " + std::to_string(q.size()) + " entries for " +
                         std::to_string(exits.size()) + " exits");
  std::vector<double> u(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) u[i] = q[i] - beta * exits[i];
  return u;
}

std::size_t argmax_first(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

int target_exit(std::span<const double> q, double beta, std::span<const int> exits) {
  return exits[argmax_first(utility(q, beta, exits))];
}

namespace {

std::vector<double> softmax_values(const std::vector<double>& u) {
  const double mx = *std::max_element(u.begin(), u.end());
  std::vector<double> p(u.size());
  double z = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) z += (p[i] = std::exp(u[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace

Var gate_loss(Var logits, const std::vector<std::vector<double>>& q, double beta,
              std::span<const int> exits, LossVariant variant) {
  const auto& shape = logits.shape();
  if (shape.size() != 2 || shape[0] != q.size() || shape[1] != exits.size()) {
    throw DimensionError("gate_loss: logits " + ad::shape_str(shape) + " for " +
                         std::to_string(q.size()) + " records over " +
                         std::to_string(exits.size()) + " exits");
  }
  const std::size_t B = shape[0], E = shape[1];
  Tensor target({B, E});
  for (std::size_t b = 0; b < B; ++b) {
    const auto u = utility(q[b], beta, exits);
    switch (variant) {
      case LossVariant::HardCE: target.at(b, argmax_first(u)) = 1.0; break;
      case LossVariant::UCE:
        for (std::size_t k = 0; k < E; ++k) target.at(b, k) = u[k];
        break;
      case LossVariant::SoftCE:
      case LossVariant::SoftMSE: {
        const auto p = softmax_values(u);
        for (std::size_t k = 0; k < E; ++k) target.at(b, k) = p[k];
        break;
      }
    }
  }
  ad::Graph& g = logits.graph();
  switch (variant) {
    case LossVariant::HardCE:
    case LossVariant::SoftCE: return ad::cross_entropy(logits, target);
    case LossVariant::UCE:
      return ad::scale(ad::sum(ad::mul(ad::log_softmax(logits, 1), g.constant(target))),
                       -1.0 / static_cast<double>(B));
    case LossVariant::SoftMSE: {
      Var diff = ad::sub(g.constant(target), ad::softmax(logits, 1));
      return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(B));
    }
  }
  throw ConfigError("unknown gate loss variant");
}

GateDecision select_exit(std::span<const double> pooled_f1, const GateParams& gate,
                         std::uint64_t example_id) {
  const std::size_t E = gate.exits.size(), d = gate.W.cols();
  if (pooled_f1.size() != d)
    throw DimensionError("select_exit: feature has " + std::to_string(pooled_f1.size()) +
                         " entries, gate expects " + std::to_string(d));
  GateDecision out;
  out.example_id = example_id;
  out.logits.resize(E);
  for (std::size_t k = 0; k < E; ++k) {
    double s = gate.bias[k];
    for (std::size_t j = 0; j < d; ++j) s += gate.W.at(k, j) * pooled_f1[j];
    out.logits[k] = s;
  }
  out.chosen_exit = gate.exits[argmax_first(out.logits)];
  return out;
}

std::string GateReport::csv_header() const {
  std::ostringstream out;
  out << "variant,beta,K_max,target_accuracy";
  for (int k : exits) out << ",target_exit_" << k;
  for (int k : exits) out << ",decision_exit_" << k;
  return out.str();
}

std::string GateReport::csv_row() const {
  std::ostringstream out;
  out << loss_variant_name(variant) << ',' << util::format_double(beta) << ',' << K_max << ','
      << util::format_double(target_accuracy);
  for (auto c : target_histogram) out << ',' << c;
  for (auto c : decision_histogram) out << ',' << c;
  return out.str();
}

GateTrainResult train_gate(const derived::DerivedDataset& dataset, const GateConfig& cfg,
                           const std::optional<std::string>& expected_ckpt_hash) {
  if (expected_ckpt_hash && *expected_ckpt_hash != dataset.ckpt_hash) {
    throw ProvenanceError("derived dataset was built from parent " + dataset.ckpt_hash +
                          " but the parent checkpoint hashes to " + *expected_ckpt_hash);
  }
  cfg.validate(dataset.exit_set);
  if (dataset.records.empty()) throw ConfigError("derived dataset has no records");
  const auto exits = cfg.effective_exits(dataset.exit_set);
  const std::size_t E = exits.size();
  const std::size_t d = dataset.records.front().pooled_f1.size();
  for (const auto& r : dataset.records) {
    if (r.pooled_f1.size() != d || r.q.size() != dataset.exit_set.size())
      throw DimensionError("derived record " + std::to_string(r.id) + " has inconsistent sizes");
  }

  std::vector<std::size_t> train_idx, held_idx;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const bool held = cfg.holdout_every > 1 && i % cfg.holdout_every == cfg.holdout_every - 1;
    (held ? held_idx : train_idx).push_back(i);
  }
  auto effective_q = [&](std::size_t i) {
    const auto& q = dataset.records[i].q;
    return std::vector<double>(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(E));
  };

  ad::Parameters params;
  params.add("gate.W", Tensor({E, d}));
  params.add("gate.bias", Tensor({E}));
  ad::AdamState adam;
  const ad::AdamConfig adam_cfg{.lr = cfg.lr};
  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(util::derive_seed(cfg.seed, {epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, order.size() - start);
      Tensor z({B, d});
      std::vector<std::vector<double>> q;
      q.reserve(B);
      for (std::size_t b = 0; b < B; ++b) {
        const auto& r = dataset.records[order[start + b]];
        std::copy(r.pooled_f1.begin(), r.pooled_f1.end(), z.values().begin() + b * d);
        q.push_back(effective_q(order[start + b]));
      }
      ad::Graph g;
      Var W = g.parameter(params.at("gate.W"));
      Var bias = g.parameter(params.at("gate.bias"));
      Var logits = ad::add(ad::matmul(g.constant(std::move(z)), ad::transpose(W)), bias);
      g.backward(gate_loss(logits, q, cfg.beta, exits, cfg.variant));
      ad::Gradients grads;
      grads.add("gate.W", g.grad_tensor(W));
      grads.add("gate.bias", g.grad_tensor(bias));
      ad::adam_step(params, grads, adam, adam_cfg);
    }
  }

  GateTrainResult result;
  result.params = {exits, params.at("gate.W"), params.at("gate.bias")};
  auto& rep = result.report;
  rep.variant = cfg.variant;
  rep.beta = cfg.beta;
  rep.K_max = exits.back();
  rep.exits = exits;
  rep.target_histogram.assign(E, 0);
  rep.decision_histogram.assign(E, 0);
  auto position = [&](int exit) {
    return static_cast<std::size_t>(std::find(exits.begin(), exits.end(), exit) - exits.begin());
  };
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    ++rep.target_histogram[position(target_exit(effective_q(i), cfg.beta, exits))];
    ++rep.decision_histogram[position(
        select_exit(dataset.records[i].pooled_f1, result.params).chosen_exit)];
  }
  // Without a held-out slice, accuracy is reported on the training records.
  const auto& eval_idx = held_idx.empty() ? train_idx : held_idx;
  std::size_t hits = 0;
  for (std::size_t i : eval_idx) {
    hits += select_exit(dataset.records[i].pooled_f1, result.params).chosen_exit ==
            target_exit(effective_q(i), cfg.beta, exits);
  }
  rep.target_accuracy = static_cast<double>(hits) / static_cast<double>(eval_idx.size());
  return result;
}

void save_gate(const std::filesystem::path& dir, const GateParams& gate, const GateConfig& cfg,
               const std::string& ckpt_hash) {
  ad::TensorMap tensors;
  tensors.add("gate.W", gate.W);
  tensors.add("gate.bias", gate.bias);
  ad::save_checkpoint(dir / kGateCheckpoint, tensors);
  const nlohmann::json sidecar{{"exits", gate.exits},
                               {"beta", cfg.beta},
                               {"K_max", gate.exits.back()},
                               {"loss_variant", loss_variant_name(cfg.variant)},
                               {"epochs", cfg.epochs},
                               {"batch_size", cfg.batch_size},
                               {"lr", cfg.lr},
                               {"seed", cfg.seed},
                               {"holdout_every", cfg.holdout_every},
                               {"ckpt_hash", ckpt_hash}};
  ad::write_file(dir / kGateSidecar, sidecar.dump(2) + "\n");
}

LoadedGate load_gate(const std::filesystem::path& dir) {
  const auto text = ad::read_file(dir / kGateSidecar);
  auto tensors = ad::load_checkpoint(dir / kGateCheckpoint);
  LoadedGate out;
  try {
    const auto j = nlohmann::json::parse(text);
    j.at("exits").get_to(out.params.exits);
    j.at("beta").get_to(out.config.beta);
    j.at("K_max").get_to(out.config.K_max);
    out.config.variant = parse_loss_variant(j.at("loss_variant").get<std::string>());
    j.at("epochs").get_to(out.config.epochs);
    j.at("batch_size").get_to(out.config.batch_size);
    j.at("lr").get_to(out.config.lr);
    j.at("seed").get_to(out.config.seed);
    j.at("holdout_every").get_to(out.config.holdout_every);
    j.at("ckpt_hash").get_to(out.ckpt_hash);
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / kGateSidecar).string() + ": " + e.what());
  }
  if (!tensors.contains("gate.W") || !tensors.contains("gate.bias"))
    throw IoError((dir / kGateCheckpoint).string() + ": missing gate tensors");
  out.params.W = tensors.at("gate.W");
  out.params.bias = tensors.at("gate.bias");
  if (out.params.W.rank() != 2 || out.params.W.rows() != out.params.exits.size() ||
      out.params.bias.numel() != out.params.exits.size()) {
    throw IoError((dir / kGateCheckpoint).string() + ": gate shape does not match its exits");
  }
  return out;
}

}  // namespace ecoenc::gate
