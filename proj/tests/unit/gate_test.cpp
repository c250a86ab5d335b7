#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "../support/separable.hpp"
#include "ecoenc/autodiff/gradcheck.hpp"
#include "ecoenc/autodiff/ops.hpp"
#include "ecoenc/errors.hpp"
#include "ecoenc/gate/gate.hpp"

namespace ecoenc::gate {
namespace {

const std::vector<int> kExits{2, 3, 4, 5, 6};

TEST(Pool, ColumnMeans) {
  EXPECT_EQ(pool(ad::Tensor::from_rows({{1, -2, 5}})), (std::vector<double>{1, -2, 5}));
  EXPECT_EQ(pool(ad::Tensor::from_rows({{1, 3}, {3, 1}})), (std::vector<double>{2, 2}));
  EXPECT_THROW(pool(ad::Tensor::vector({1, 2})), DimensionError);
}

TEST(Pool, PermutationInvariant) {
  const auto a = ad::Tensor::from_rows({{0.5, 2}, {4, -1}, {0.25, 8}});
  const auto b = ad::Tensor::from_rows({{0.25, 8}, {0.5, 2}, {4, -1}});
  EXPECT_EQ(pool(a), pool(b));
}

TEST(Utility, Examples) {
  const std::vector<double> q{50, 52, 52.5, 52.8, 52.9};
  EXPECT_EQ(utility(q, 0.0, kExits), q);
  const auto u = utility(q, 0.1, kExits);
  const std::vector<double> expected{49.8, 51.7, 52.1, 52.3, 52.3};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(u[i], expected[i], 1e-12);
  EXPECT_EQ(target_exit(q, 0.1, kExits), 5);
  EXPECT_EQ(target_exit(q, 0.0, kExits), 6);
  EXPECT_THROW(utility(std::vector<double>{1, 2}, 0.1, kExits), DimensionError);
}

TEST(TargetExit, LargeBetaPicksSmallestExit) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> dist(0.0, 100.0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> q(5);
    for (auto& v : q) v = dist(rng);
    const double spread = *std::max_element(q.begin(), q.end()) - *std::min_element(q.begin(), q.end());
    EXPECT_EQ(target_exit(q, spread + 1e-6, kExits), 2);
  }
}

// Quality and β on a dyadic grid keep every utility exactly representable,
// so ties are real ties.
std::vector<double> dyadic_q(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(0, 40);
  std::vector<double> q(5);
  for (auto& v : q) v = dist(rng) * 0.5;
  return q;
}

TEST(TargetExit, NonIncreasingInBetaAndShiftInvariant) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> shift(-100, 100);
  for (int trial = 0; trial < 3000; ++trial) {
    const auto q = dyadic_q(rng);
    int previous = 7;
    for (int step = 0; step <= 100; ++step) {
      const double beta = step * 0.25;
      const int t = target_exit(q, beta, kExits);
      EXPECT_LE(t, previous);
      previous = t;
      auto shifted = q;
      const double c = shift(rng);
      for (auto& v : shifted) v += c;
      EXPECT_EQ(target_exit(shifted, beta, kExits), t);
    }
  }
}

TEST(GateLoss, Minima) {
  const std::vector<std::vector<double>> q{{50, 52, 52.5, 52.8, 52.9}};
  ad::Graph g;
  auto on_target = g.constant(ad::Tensor::from_rows({{0, 0, 0, 20, 0}}));
  EXPECT_LT(gate_loss(on_target, q, 0.1, kExits, LossVariant::HardCE).value().item(), 1e-3);

  const auto u = utility(q[0], 0.1, kExits);
  auto proportional = g.constant(ad::Tensor({1, 5}, u));
  double entropy = 0.0, z = 0.0;
  for (double v : u) z += std::exp(v);
  for (double v : u) entropy -= std::exp(v) / z * (v - std::log(z));
  EXPECT_NEAR(gate_loss(proportional, q, 0.1, kExits, LossVariant::SoftCE).value().item(), entropy,
              1e-9);
  std::vector<double> shifted = u;
  for (auto& v : shifted) v += 3.0;
  auto same_softmax = g.constant(ad::Tensor({1, 5}, shifted));
  EXPECT_NEAR(gate_loss(same_softmax, q, 0.1, kExits, LossVariant::SoftMSE).value().item(), 0.0,
              1e-20);
  EXPECT_THROW(parse_loss_variant("focal"), ConfigError);
}

TEST(GateLoss, UtilityCrossEntropyRewardsHighUtility) {
  const std::vector<std::vector<double>> q{{10, 90, 10, 10, 10}};
  ad::Graph g;
  auto toward = g.constant(ad::Tensor::from_rows({{0, 3, 0, 0, 0}}));
  auto away = g.constant(ad::Tensor::from_rows({{3, 0, 0, 0, 0}}));
  EXPECT_LT(gate_loss(toward, q, 0.0, kExits, LossVariant::UCE).value().item(),
            gate_loss(away, q, 0.0, kExits, LossVariant::UCE).value().item());
}

TEST(GateLoss, EveryVariantMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> qd(30, 60);
  const std::size_t B = 4, d = 3;
  std::vector<std::vector<double>> q(B, std::vector<double>(5));
  for (auto& row : q)
    for (auto& v : row) v = qd(rng);
  ad::Tensor z({B, d}), W({5, d}), b({5});
  for (auto* t : {&z, &W, &b})
    for (auto& v : t->values()) v = n01(rng);
  for (auto variant : {LossVariant::HardCE, LossVariant::UCE, LossVariant::SoftCE,
                       LossVariant::SoftMSE}) {
    // Small β keeps softmax(u) away from one-hot so soft variants have curvature.
    const double beta = variant == LossVariant::UCE ? 0.5 : 0.05;
    auto report = ad::gradcheck(
        [&](ad::Graph& g, std::span<const ad::Var> in) {
          auto logits = ad::add(ad::matmul(g.constant(z), ad::transpose(in[0])), in[1]);
          return gate_loss(logits, q, beta, kExits, variant);
        },
        {W, b});
    EXPECT_LT(report.max_rel_error, 1e-4) << loss_variant_name(variant) << ": " << report.worst;
  }
}

TEST(SelectExit, TieBreaksAndBias) {
  GateParams gate{kExits, ad::Tensor({5, 3}), ad::Tensor::vector({1, 0, 0, 0, 0})};
  const std::vector<double> feature{0.3, -2.0, 7.0};
  EXPECT_EQ(select_exit(feature, gate).chosen_exit, 2);
  gate.bias = ad::Tensor({5});
  EXPECT_EQ(select_exit(feature, gate).chosen_exit, 2);
  gate.bias = ad::Tensor::vector({0, 0, 1, 1, 0});
  EXPECT_EQ(select_exit(feature, gate).chosen_exit, 4);
}

TEST(GateConfig, EffectiveExits) {
  GateConfig cfg;
  EXPECT_EQ(cfg.effective_exits(kExits), kExits);
  cfg.K_max = 4;
  EXPECT_EQ(cfg.effective_exits(kExits), (std::vector<int>{2, 3, 4}));
  cfg.K_max = 1;
  EXPECT_THROW(cfg.effective_exits(kExits), ConfigError);
  cfg = GateConfig{};
  cfg.beta = -1.0;
  EXPECT_THROW(cfg.validate(kExits), ConfigError);
}

TEST(TrainGate, SeparableTargetsAreLearned) {
  const auto ds = testing::separable_dataset(600, 6, kExits, 11);
  GateConfig cfg;
  cfg.beta = 0.0;
  const auto result = train_gate(ds, cfg);
  EXPECT_GE(result.report.target_accuracy, 0.95);
  std::size_t total = 0;
  for (auto c : result.report.decision_histogram) total += c;
  EXPECT_EQ(total, 600u);
}

TEST(TrainGate, DegenerateTargetsCollapseToSmallestExit) {
  auto ds = testing::separable_dataset(300, 6, kExits, 12);
  GateConfig cfg;
  cfg.beta = 100.0;
  const auto result = train_gate(ds, cfg);
  EXPECT_EQ(result.report.target_histogram[0], 300u);
  EXPECT_GE(result.report.decision_histogram[0], 297u);
}

TEST(TrainGate, DeterministicAndBudgetCapped) {
  const auto ds = testing::separable_dataset(200, 4, kExits, 13);
  GateConfig cfg;
  cfg.epochs = 20;
  EXPECT_EQ(train_gate(ds, cfg).params, train_gate(ds, cfg).params);
  cfg.K_max = 4;
  const auto capped = train_gate(ds, cfg);
  EXPECT_EQ(capped.params.W.rows(), 3u);
  EXPECT_EQ(capped.report.decision_histogram.size(), 3u);
  for (const auto& r : ds.records) EXPECT_LE(select_exit(r.pooled_f1, capped.params).chosen_exit, 4);
}

TEST(TrainGate, ProvenanceMismatchIsRejected) {
  const auto ds = testing::separable_dataset(50, 4, kExits, 14);
  EXPECT_THROW(train_gate(ds, GateConfig{}, std::string("0123")), ProvenanceError);
  GateConfig cfg;
  cfg.epochs = 1;
  EXPECT_NO_THROW(train_gate(ds, cfg, std::string("separable")));
}

TEST(TrainGate, SaveLoadRoundTrip) {
  const auto ds = testing::separable_dataset(50, 4, kExits, 15);
  GateConfig cfg;
  cfg.epochs = 3;
  cfg.K_max = 5;
  cfg.variant = LossVariant::SoftMSE;
  const auto trained = train_gate(ds, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "ecoenc_gate_test";
  save_gate(dir, trained.params, cfg, "abc");
  const auto loaded = load_gate(dir);
  EXPECT_EQ(loaded.params, trained.params);
  EXPECT_EQ(loaded.config.K_max, 5);
  EXPECT_EQ(loaded.config.variant, LossVariant::SoftMSE);
  EXPECT_EQ(loaded.ckpt_hash, "abc");
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace ecoenc::gate
