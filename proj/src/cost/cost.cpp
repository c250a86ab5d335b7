#include "ecoenc/cost/cost.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ecoenc/autodiff/ops.hpp"
#include "ecoenc/errors.hpp"
#include "ecoenc/util/format.hpp"
#include "ecoenc/util/parallel.hpp"

namespace ecoenc::cost {

using util::format_double;

std::uint64_t CostModel::total_flops(int k, bool gated) const {
  return backbone_flops + static_cast<std::uint64_t>(k) * per_layer_flops + head_flops +
         (gated ? gate_flops : 0);
}

CostModel build_cost_model(const model::ModelConfig& cfg, std::size_t gate_exits) {
  cfg.validate();
  const std::uint64_t T = cfg.T, d = cfg.d_model, f = cfg.d_ffn, t1 = cfg.f1_rows();
  CostModel c;
  c.per_layer_flops = 8 * T * d * d + 4 * T * T * d + 4 * T * d * f;
  c.backbone_flops = 2 * T * cfg.d_in * d + T * d + 2 * t1 * d * d;
  c.head_flops = 2 * T * d * (cfg.C + 1);
  c.gate_flops = 2 * d * gate_exits + t1 * d;
  return c;
}

std::vector<double> counted_gate_logits(const ad::Tensor& f1, const gate::GateParams& gate) {
  ad::Graph g;
  auto pooled = ad::group_mean_rows(g.constant(f1), f1.rows());
  auto logits = ad::add(ad::matmul(pooled, ad::transpose(g.constant(gate.W))),
                        g.constant(gate.bias));
  const auto v = logits.value().values();
  return {v.begin(), v.end()};
}

std::string policy_kind(const Policy& policy) {
  if (std::holds_alternative<FixedPolicy>(policy))
    return "fixed:" + std::to_string(std::get<FixedPolicy>(policy).k);
  if (std::holds_alternative<OraclePolicy>(policy)) return "oracle";
  return "gate";
}

namespace {

std::size_t exit_position(const std::vector<int>& exits, int k) {
  const auto it = std::find(exits.begin(), exits.end(), k);
  if (it == exits.end()) throw PolicyError("exit " + std::to_string(k) + " is not in the exit set");
  return static_cast<std::size_t>(it - exits.begin());
}

std::vector<double> prefix(const std::vector<double>& q, std::size_t n) {
  return {q.begin(), q.begin() + static_cast<std::ptrdiff_t>(n)};
}

EvalReport header(const Policy& policy, const std::vector<int>& exits) {
  EvalReport r;
  r.policy = policy_kind(policy);
  r.exits = exits;
  if (const auto* f = std::get_if<FixedPolicy>(&policy)) {
    exit_position(exits, f->k);
    r.K_max = f->k;
  } else if (const auto* o = std::get_if<OraclePolicy>(&policy)) {
    gate::GateConfig gc;
    gc.K_max = o->K_max;
    r.K_max = gc.effective_exits(exits).back();
    r.beta = o->beta;
  } else {
    const auto& gp = std::get<GatePolicy>(policy);
    r.K_max = gp.params.exits.back();
    r.beta = gp.beta;
    r.variant = gate::loss_variant_name(gp.variant);
  }
  return r;
}

// Oracle choice among the effective exits for one quality vector.
int oracle_exit(const OraclePolicy& o, const std::vector<int>& exits, const std::vector<double>& q) {
  gate::GateConfig gc;
  gc.K_max = o.K_max;
  const auto eff = gc.effective_exits(exits);
  return gate::target_exit(prefix(q, eff.size()), o.beta, eff);
}

void aggregate(EvalReport& r, const std::vector<int>& chosen, const std::vector<double>& quality,
               const CostModel& cost, bool gated) {
  r.n = chosen.size();
  r.exit_histogram.assign(r.exits.size(), 0);
  double q_sum = 0.0, k_sum = 0.0;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    ++r.exit_histogram[exit_position(r.exits, chosen[i])];
    q_sum += quality[i];
    k_sum += chosen[i];
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, r.n));
  r.mean_quality = q_sum / n;
  r.mean_exit = k_sum / n;
  r.encoder_flops_mean = static_cast<double>(cost.per_layer_flops) * k_sum / n;
  r.total_flops_mean = static_cast<double>(cost.backbone_flops + cost.head_flops +
                                           (gated ? cost.gate_flops : 0)) +
                       r.encoder_flops_mean;
}

}  // namespace

EvalReport evaluate_policy(const task::ExampleSet& eval_set, const model::MultiExitModel& model,
                           const Policy& policy, const CostModel& cost, std::size_t threads) {
  const auto& exits = model.config().exit_set;
  EvalReport report = header(policy, exits);
  std::vector<int> chosen(eval_set.size());
  std::vector<double> quality(eval_set.size());
  util::parallel_for(eval_set.size(), threads, [&](std::size_t i) {
    const auto& ex = eval_set[i];
    if (const auto* o = std::get_if<OraclePolicy>(&policy)) {
      const auto q = derived::evaluate_exits(model, ex);
      chosen[i] = oracle_exit(*o, exits, q);
      quality[i] = q[exit_position(exits, chosen[i])];
      return;
    }
    if (const auto* f = std::get_if<FixedPolicy>(&policy)) {
      chosen[i] = f->k;
    } else {
      const auto& gp = std::get<GatePolicy>(policy);
      chosen[i] = gate::select_exit(model.pooled_f1(ex), gp.params, ex.id).chosen_exit;
    }
    const auto d = model::decode(model.run_to_depth(ex, chosen[i]));
    quality[i] = task::toy_quality(d.labels, d.fg, ex);
  });
  aggregate(report, chosen, quality, cost, std::holds_alternative<GatePolicy>(policy));
  return report;
}

EvalCache build_eval_cache(const task::ExampleSet& eval_set, const model::MultiExitModel& model,
                           std::size_t threads) {
  EvalCache cache;
  cache.exits = model.config().exit_set;
  cache.q.resize(eval_set.size());
  cache.pooled_f1.resize(eval_set.size());
  util::parallel_for(eval_set.size(), threads, [&](std::size_t i) {
    cache.q[i] = derived::evaluate_exits(model, eval_set[i]);
    cache.pooled_f1[i] = model.pooled_f1(eval_set[i]);
  });
  return cache;
}

EvalReport evaluate_cached(const EvalCache& cache, const Policy& policy, const CostModel& cost) {
  EvalReport report = header(policy, cache.exits);
  std::vector<int> chosen(cache.q.size());
  std::vector<double> quality(cache.q.size());
  for (std::size_t i = 0; i < cache.q.size(); ++i) {
    if (const auto* f = std::get_if<FixedPolicy>(&policy)) {
      chosen[i] = f->k;
    } else if (const auto* o = std::get_if<OraclePolicy>(&policy)) {
      chosen[i] = oracle_exit(*o, cache.exits, cache.q[i]);
    } else {
      chosen[i] = gate::select_exit(cache.pooled_f1[i], std::get<GatePolicy>(policy).params)
                      .chosen_exit;
    }
    quality[i] = cache.q[i][exit_position(cache.exits, chosen[i])];
  }
  aggregate(report, chosen, quality, cost, std::holds_alternative<GatePolicy>(policy));
  return report;
}

std::vector<std::size_t> exit_histogram(const derived::DerivedDataset& derived, double beta,
                                        int K_max) {
  gate::GateConfig gc;
  gc.K_max = K_max;
  const auto eff = gc.effective_exits(derived.exit_set);
  std::vector<std::size_t> counts(eff.size(), 0);
  for (const auto& r : derived.records)
    ++counts[exit_position(eff, gate::target_exit(prefix(r.q, eff.size()), beta, eff))];
  return counts;
}

std::vector<EvalReport> sweep_beta(const derived::DerivedDataset& derived, const EvalCache& cache,
                                   const std::vector<double>& betas,
                                   const gate::GateConfig& base, const CostModel& cost) {
  if (derived.exit_set != cache.exits)
    throw ProvenanceError("derived dataset and evaluation cache use different exit sets");
  std::vector<EvalReport> rows;
  for (double beta : betas) {
    gate::GateConfig gc = base;
    gc.beta = beta;
    const auto trained = gate::train_gate(derived, gc);
    rows.push_back(evaluate_cached(cache, GatePolicy{trained.params, beta, gc.variant}, cost));
    rows.push_back(evaluate_cached(cache, OraclePolicy{beta, gc.K_max}, cost));
  }
  return rows;
}

std::string report_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "policy,beta,K_max,loss_variant,n,mean_quality,mean_exit,total_flops_mean,"
         "encoder_flops_mean";
  if (!reports.empty())
    for (int k : reports.front().exits) out << ",exit_" << k;
  out << '\n';
  for (const auto& r : reports) {
    out << r.policy << ',' << format_double(r.beta) << ',' << r.K_max << ',' << r.variant << ','
        << r.n << ',' << format_double(r.mean_quality) << ',' << format_double(r.mean_exit) << ','
        << format_double(r.total_flops_mean) << ',' << format_double(r.encoder_flops_mean);
    for (auto c : r.exit_histogram) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

std::string pareto_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "beta,policy,mean_quality,total_flops_mean,encoder_flops_mean";
  if (!reports.empty())
    for (int k : reports.front().exits) out << ",exit_" << k;
  out << '\n';
  for (const auto& r : reports) {
    out << format_double(r.beta) << ',' << r.policy << ',' << format_double(r.mean_quality) << ','
        << format_double(r.total_flops_mean) << ',' << format_double(r.encoder_flops_mean);
    for (auto c : r.exit_histogram) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

std::string pareto_svg(const std::vector<EvalReport>& reports) {
  constexpr double W = 640, H = 420, L = 70, R = 150, Tp = 30, B = 60;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& r : reports) {
    x0 = std::min(x0, r.encoder_flops_mean);
    x1 = std::max(x1, r.encoder_flops_mean);
    y0 = std::min(y0, r.mean_quality);
    y1 = std::max(y1, r.mean_quality);
  }
  if (reports.empty()) x0 = y0 = 0, x1 = y1 = 1;
  if (x1 - x0 < 1e-9) x0 -= 1, x1 += 1;
  if (y1 - y0 < 1e-9) y0 -= 1, y1 += 1;
  const double px = (x1 - x0) * 0.05, py = (y1 - y0) * 0.05;
  x0 -= px, x1 += px, y0 -= py, y1 += py;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - Tp - B); };

  std::ostringstream out;
  out.precision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << Tp << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15
      << "\" text-anchor=\"middle\">mean encoder FLOPs per example</text>\n"
      << "<text x=\"15\" y=\"" << (Tp + H - B) / 2 << "\" transform=\"rotate(-90 15 "
      << (Tp + H - B) / 2 << ")\" text-anchor=\"middle\">mean quality</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    out << "<text x=\"" << sx(xv) << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\">"
        << std::llround(xv) << "</text>\n"
        << "<text x=\"" << L - 5 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">"
        << std::round(yv * 10) / 10 << "</text>\n";
  }
  const std::vector<std::pair<std::string, std::string>> series{{"gate", "#1f77b4"},
                                                                {"oracle", "#d62728"}};
  double legend_y = Tp + 10;
  for (const auto& [kind, color] : series) {
    std::string points;
    for (const auto& r : reports) {
      if (r.policy != kind) continue;
      const double x = sx(r.encoder_flops_mean), y = sy(r.mean_quality);
      out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\"" << color << "\"/>\n"
          << "<text x=\"" << x + 6 << "\" y=\"" << y - 6 << "\" fill=\"" << color << "\">"
          << format_double(r.beta) << "</text>\n";
      points += std::to_string(x) + "," + std::to_string(y) + " ";
    }
    if (!points.empty()) {
      out << "<polyline points=\"" << points << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-opacity=\"0.5\"/>\n";
    }
    out << "<circle cx=\"" << W - R + 20 << "\" cy=\"" << legend_y << "\" r=\"4\" fill=\""
        << color << "\"/>\n<text x=\"" << W - R + 30 << "\" y=\"" << legend_y + 4 << "\">"
        << kind << " (labels: beta)</text>\n";
    legend_y += 18;
  }
  for (const auto& r : reports) {
    if (r.policy.rfind("fixed:", 0) != 0) continue;
    const double x = sx(r.encoder_flops_mean), y = sy(r.mean_quality);
    out << "<rect x=\"" << x - 4 << "\" y=\"" << y - 4
        << "\" width=\"8\" height=\"8\" fill=\"#555\"/>\n<text x=\"" << x + 6 << "\" y=\""
        << y + 14 << "\" fill=\"#555\">" << r.policy << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace ecoenc::cost
