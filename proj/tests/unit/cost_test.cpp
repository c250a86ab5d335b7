#include <gtest/gtest.h>

#include "ecoenc/autodiff/flop_counter.hpp"
#include "ecoenc/cost/cost.hpp"
#include "ecoenc/errors.hpp"

namespace ecoenc::cost {
namespace {

TEST(CostModel, DefaultPerLayerFlops) {
  const auto c = build_cost_model(model::ModelConfig{});
  EXPECT_EQ(c.per_layer_flops, 8u * 32 * 1024 + 4u * 1024 * 32 + 4u * 32 * 32 * 64);
  EXPECT_EQ(c.per_layer_flops, 655360u);
  EXPECT_EQ(c.gate_flops, 2u * 32 * 5 + 8u * 32);
  EXPECT_LT(c.gate_flops * 100, c.per_layer_flops);
  EXPECT_EQ(c.head_flops, 2u * 32 * 32 * 6);
  EXPECT_EQ(c.backbone_flops, 2u * 32 * 16 * 32 + 32u * 32 + 2u * 8 * 32 * 32);
}

TEST(CostModel, AttentionTermIsQuadratic) {
  model::ModelConfig cfg;
  const auto a = build_cost_model(cfg);
  cfg.T = 64;
  EXPECT_GT(build_cost_model(cfg).per_layer_flops, 2 * a.per_layer_flops);
}

task::ExampleSet examples(const model::ModelConfig& cfg, std::size_t n) {
  task::TaskConfig tc;
  tc.T = cfg.T;
  tc.n_train = 50;
  tc.n_val = n;
  return task::generate(tc).val;
}

TEST(CostModel, MatchesInstrumentedCounter) {
  const model::ModelConfig cfg;
  const model::MultiExitModel m(cfg, model::init_parameters(cfg));
  const auto cost = build_cost_model(cfg);
  const auto ex = examples(cfg, 1).front();
  gate::GateParams g{cfg.exit_set, ad::Tensor::filled({5, 32}, 0.01), ad::Tensor({5})};
  const auto f1 = m.backbone_forward(ex).f1;
  for (int k : cfg.exit_set) {
    ad::FlopScope scope;
    m.run_to_depth(ex, k);
    const auto logits = counted_gate_logits(f1, g);
    EXPECT_EQ(scope.elapsed(), cost.total_flops(k, true)) << k;
    const auto direct = gate::select_exit(gate::pool(f1), g);
    EXPECT_EQ(logits, direct.logits);
  }
}

struct Fixture {
  model::ModelConfig cfg;
  task::ExampleSet set;
  CostModel cost;
  std::unique_ptr<model::MultiExitModel> m;

  Fixture() {
    cfg.T = 8;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ffn = 8;
    cfg.seed = 4;
    set = examples(cfg, 40);
    cost = build_cost_model(cfg);
    m = std::make_unique<model::MultiExitModel>(cfg, model::init_parameters(cfg));
  }
};

void expect_same(const EvalReport& a, const EvalReport& b) {
  EXPECT_EQ(a.policy, b.policy);
  EXPECT_EQ(a.mean_quality, b.mean_quality);
  EXPECT_EQ(a.total_flops_mean, b.total_flops_mean);
  EXPECT_EQ(a.encoder_flops_mean, b.encoder_flops_mean);
  EXPECT_EQ(a.exit_histogram, b.exit_histogram);
}

TEST(EvaluatePolicy, FixedOracleAndGateAgreeWithCache) {
  Fixture f;
  const auto cache = build_eval_cache(f.set, *f.m);
  gate::GateParams g{f.cfg.exit_set, ad::Tensor({5, 8}), ad::Tensor::vector({0, 0, 1, 0, 0})};
  g.W.at(4, 2) = 5.0;
  const std::vector<Policy> policies{FixedPolicy{6}, FixedPolicy{3}, OraclePolicy{0.0, 0},
                                     OraclePolicy{2.0, 5}, GatePolicy{g, 0.5}};
  for (const auto& p : policies) {
    const auto direct = evaluate_policy(f.set, *f.m, p, f.cost, 2);
    expect_same(direct, evaluate_cached(cache, p, f.cost));
    EXPECT_EQ(direct.n, f.set.size());
    std::size_t total = 0;
    for (auto c : direct.exit_histogram) total += c;
    EXPECT_EQ(total, f.set.size());
    EXPECT_DOUBLE_EQ(direct.encoder_flops_mean, f.cost.per_layer_flops * direct.mean_exit);
  }
}

TEST(EvaluatePolicy, FixedLastExitReproducesFullModel) {
  Fixture f;
  double full = 0.0;
  for (const auto& ex : f.set) full += derived::evaluate_exits(*f.m, ex).back();
  const auto r = evaluate_policy(f.set, *f.m, FixedPolicy{6}, f.cost);
  EXPECT_NEAR(r.mean_quality, full / f.set.size(), 1e-12);
  EXPECT_EQ(r.exit_histogram.back(), f.set.size());
  EXPECT_THROW(evaluate_policy(f.set, *f.m, FixedPolicy{1}, f.cost), PolicyError);
}

TEST(EvaluatePolicy, OracleDominatesFixedAndGateIsCheaper) {
  Fixture f;
  const auto cache = build_eval_cache(f.set, *f.m);
  const auto oracle = evaluate_cached(cache, OraclePolicy{0.0, 0}, f.cost);
  const auto full = evaluate_cached(cache, FixedPolicy{6}, f.cost);
  for (int k : f.cfg.exit_set)
    EXPECT_GE(oracle.mean_quality, evaluate_cached(cache, FixedPolicy{k}, f.cost).mean_quality);
  gate::GateParams g{f.cfg.exit_set, ad::Tensor({5, 8}), ad::Tensor::vector({0.1, 0, 0.3, 0, 0})};
  EXPECT_LE(evaluate_cached(cache, GatePolicy{g, 0.0}, f.cost).encoder_flops_mean,
            full.encoder_flops_mean);
}

TEST(ExitHistogram, CountsEveryRecord) {
  Fixture f;
  const auto ds = derived::build_derived_dataset(f.set, *f.m, "h", 0);
  for (double beta : {0.0, 0.5, 50.0}) {
    const auto h = exit_histogram(ds, beta);
    std::size_t total = 0;
    for (auto c : h) total += c;
    EXPECT_EQ(total, ds.records.size());
  }
  EXPECT_EQ(exit_histogram(ds, 1e6)[0], ds.records.size());
  EXPECT_EQ(exit_histogram(ds, 0.0, 4).size(), 3u);
}

TEST(SweepBeta, OracleRowsAreMonotoneAndOutputIsDeterministic) {
  Fixture f;
  const auto ds = derived::build_derived_dataset(f.set, *f.m, "h", 0);
  const auto cache = build_eval_cache(f.set, *f.m);
  gate::GateConfig gc;
  gc.epochs = 5;
  const std::vector<double> betas{0.0, 0.05, 0.5, 5.0, 50.0};
  const auto rows = sweep_beta(ds, cache, betas, gc, f.cost);
  ASSERT_EQ(rows.size(), 2 * betas.size());
  for (std::size_t i = 3; i < rows.size(); i += 2) {
    EXPECT_EQ(rows[i].policy, "oracle");
    EXPECT_LE(rows[i].mean_exit, rows[i - 2].mean_exit);
    EXPECT_LE(rows[i].mean_quality, rows[i - 2].mean_quality);
  }
  const auto again = sweep_beta(ds, cache, betas, gc, f.cost);
  EXPECT_EQ(pareto_csv(rows), pareto_csv(again));
  EXPECT_EQ(report_csv(rows), report_csv(again));
  const auto csv = pareto_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "beta,policy,mean_quality,total_flops_mean,encoder_flops_mean,exit_2,exit_3,exit_4,"
            "exit_5,exit_6");
  const auto svg = pareto_svg(rows);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

}  // namespace
}  // namespace ecoenc::cost
