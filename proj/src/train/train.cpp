#include "ecoenc/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "ecoenc/autodiff/adam.hpp"
#include "ecoenc/autodiff/ops.hpp"
#include "ecoenc/derived/derived.hpp"
#include "ecoenc/errors.hpp"
#include "ecoenc/util/parallel.hpp"
#include "ecoenc/util/rng.hpp"

namespace ecoenc::train {

using ad::Tensor;
using ad::Var;

DepthMode parse_depth_mode(const std::string& name) {
  if (name == "weighted") return DepthMode::Weighted;
  if (name == "unweighted") return DepthMode::Unweighted;
  if (name == "baseline") return DepthMode::Baseline;
  throw ConfigError("unknown depth mode '" + name + "' (weighted, unweighted, baseline)");
}

std::string depth_mode_name(DepthMode mode) {
  switch (mode) {
    case DepthMode::Weighted: return "weighted";
    case DepthMode::Unweighted: return "unweighted";
    case DepthMode::Baseline: return "baseline";
  }
  return "?";
}

std::vector<double> StepAConfig::resolved_gamma(const model::ModelConfig& model) const {
  const auto& exits = model.exit_set;
  std::vector<double> g = gamma;
  if (g.empty()) {
    for (int k : exits) {
      switch (mode) {
        case DepthMode::Weighted: g.push_back(static_cast<double>(k) / model.K); break;
        case DepthMode::Unweighted: g.push_back(1.0); break;
        case DepthMode::Baseline: g.push_back(k == exits.back() ? 1.0 : 0.0); break;
      }
    }
  }
  if (g.size() != exits.size()) {
    throw ConfigError("gamma has " + std::to_string(g.size()) + " entries for " +
                      std::to_string(exits.size()) + " exits");
  }
  for (double v : g)
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("gamma entries must be finite and >= 0");
  if (mode == DepthMode::Weighted) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i] <= 0.0 || (i > 0 && g[i] <= g[i - 1]))
        throw ConfigError("weighted mode needs positive, strictly increasing gamma");
    }
  }
  if (g.back() <= 0.0) throw ConfigError("the last exit must be supervised");
  return g;
}

void StepAConfig::validate(const model::ModelConfig& model) const {
  if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
  if (!(lr >= 0.0) || !(lambda_mask >= 0.0) || !(lambda_class >= 0.0) ||
      !(background_weight >= 0.0)) {
    throw ConfigError("lr and loss weights must be non-negative");
  }
  resolved_gamma(model);
}

Var exit_loss(const model::ExitVars& pred, const task::Example& example, const StepAConfig& cfg) {
  const auto& logits = pred.class_logits.value();
  const std::size_t T = example.labels.size();
  if (logits.rank() != 2 || logits.rows() != T || pred.fg_logits.value().numel() != T) {
    throw DimensionError("exit_loss: prediction shape " + ad::shape_str(logits.shape()) +
                         " does not match example with " + std::to_string(T) + " tokens");
  }
  Tensor class_target(logits.shape());
  Tensor fg_target({T, 1});
  for (std::size_t t = 0; t < T; ++t) {
    const int label = example.labels[t];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols())
      throw DimensionError("exit_loss: label out of range");
    class_target.at(t, static_cast<std::size_t>(label)) = label == 0 ? cfg.background_weight : 1.0;
    fg_target[t] = example.fg_mask[t];
  }
  Var mask = ad::bce_with_logits(pred.fg_logits, fg_target);
  Var cls = ad::cross_entropy(pred.class_logits, class_target);
  return ad::add(ad::scale(mask, cfg.lambda_mask), ad::scale(cls, cfg.lambda_class));
}

namespace {

Var combine(const std::vector<Var>& losses, const std::vector<double>& gamma) {
  Var total;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (gamma[i] == 0.0) continue;
    Var term = ad::scale(losses[i], gamma[i]);
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

struct ExampleStep {
  double loss = 0.0;
  std::vector<double> exit_losses;
  ad::Gradients grads;
};

ExampleStep example_step(const model::ModelConfig& model_cfg, const ad::Parameters& params,
                         const task::Example& ex, const StepAConfig& cfg,
                         const std::vector<double>& gamma) {
  ad::Graph g;
  const auto vars = model::bind_parameters(g, model_cfg, params, true);
  const auto preds =
      model::forward_graph(model_cfg, vars, ex.tokens, static_cast<int>(model_cfg.K), true);
  std::vector<Var> losses;
  ExampleStep out;
  for (const auto& p : preds) {
    losses.push_back(exit_loss(p, ex, cfg));
    out.exit_losses.push_back(losses.back().value().item());
  }
  Var total = combine(losses, gamma);
  out.loss = total.value().item();
  g.backward(total);
  out.grads = model::collect_gradients(g, vars, params);
  return out;
}

}  // namespace

Var weighted_multiexit_loss(const std::vector<model::ExitVars>& preds,
                            const task::Example& example, const StepAConfig& cfg,
                            const std::vector<double>& gamma) {
  if (gamma.size() != preds.size()) {
    throw ConfigError("gamma has " + std::to_string(gamma.size()) + " entries for " +
                      std::to_string(preds.size()) + " exits");
  }
  std::vector<Var> losses;
  for (const auto& p : preds) losses.push_back(exit_loss(p, example, cfg));
  Var total = combine(losses, gamma);
  if (!total.valid()) throw ConfigError("every gamma is zero");
  return total;
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,total_loss";
  for (int k : exit_set) out << ",loss_exit_" << k;
  for (int k : exit_set) out << ",q_exit_" << k;
  out << '\n';
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.total_loss;
    for (double v : e.exit_loss) out << ',' << v;
    for (double v : e.exit_quality) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::vector<double> mean_exit_quality(const model::MultiExitModel& model,
                                      const task::ExampleSet& set, std::size_t threads) {
  std::vector<std::vector<double>> per(set.size());
  util::parallel_for(set.size(), threads,
                     [&](std::size_t i) { per[i] = derived::evaluate_exits(model, set[i]); });
  std::vector<double> mean(model.config().exit_set.size(), 0.0);
  for (const auto& q : per)
    for (std::size_t k = 0; k < q.size(); ++k) mean[k] += q[k];
  for (auto& v : mean) v /= static_cast<double>(std::max<std::size_t>(1, set.size()));
  return mean;
}

TrainResult train_parent(const model::ModelConfig& model_cfg, ad::Parameters params,
                         const task::ExampleSet& train_set, const task::ExampleSet& val_set,
                         const StepAConfig& cfg, const EpochCallback& on_epoch) {
  model_cfg.validate();
  cfg.validate(model_cfg);
  model::check_parameters(model_cfg, params);
  if (train_set.empty()) throw ConfigError("empty training set");
  const auto gamma = cfg.resolved_gamma(model_cfg);
  const std::size_t n_exits = model_cfg.exit_set.size();

  TrainResult result;
  result.log.exit_set = model_cfg.exit_set;
  ad::AdamState adam;
  const ad::AdamConfig adam_cfg{.lr = cfg.lr};
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(util::derive_seed(cfg.seed, {epoch}));
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.exit_loss.assign(n_exits, 0.0);
    for (std::size_t start = 0, batch = 1; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<ExampleStep> steps(n);
      try {
        util::parallel_for(n, cfg.threads, [&](std::size_t i) {
          steps[i] = example_step(model_cfg, params, train_set[order[start + i]], cfg, gamma);
        });
      } catch (const NumericError& e) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch) + ": " + e.what());
      }
      ad::Gradients grads = std::move(steps[0].grads);
      for (std::size_t i = 1; i < n; ++i) grads.accumulate(steps[i].grads);
      grads.scale(1.0 / static_cast<double>(n));
      for (const auto& s : steps) {
        rec.total_loss += s.loss;
        for (std::size_t k = 0; k < n_exits; ++k) rec.exit_loss[k] += s.exit_losses[k];
      }
      try {
        ad::adam_step(params, grads, adam, adam_cfg);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch) + ": " + e.what());
      }
    }
    const double count = static_cast<double>(train_set.size());
    rec.total_loss /= count;
    for (auto& v : rec.exit_loss) v /= count;
    if (!val_set.empty()) {
      rec.exit_quality = mean_exit_quality(model::MultiExitModel(model_cfg, params), val_set,
                                           cfg.threads);
    }
    if (on_epoch) on_epoch(rec);
    result.log.epochs.push_back(std::move(rec));
  }
  result.params = std::move(params);
  return result;
}

}  // namespace ecoenc::train
