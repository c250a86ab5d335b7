#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "ecoenc/errors.hpp"
#include "ecoenc/task/task.hpp"

namespace ecoenc::task {
namespace {

TEST(Generate, SameSeedIsBitIdentical) {
  TaskConfig cfg;
  cfg.n_train = 60;
  cfg.n_val = 20;
  cfg.seed = 7;
  const auto a = generate(cfg);
  const auto b = generate(cfg);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  cfg.seed = 8;
  EXPECT_NE(generate(cfg).train, a.train);
}

TEST(Generate, ShapesIdsAndMaskInvariant) {
  TaskConfig cfg;
  cfg.n_train = 50;
  cfg.n_val = 12;
  const auto splits = generate(cfg);
  ASSERT_EQ(splits.train.size(), 50u);
  ASSERT_EQ(splits.val.size(), 12u);
  std::set<std::uint64_t> ids;
  for (const auto* set : {&splits.train, &splits.val}) {
    for (const auto& ex : *set) {
      ids.insert(ex.id);
      EXPECT_EQ(ex.tokens.shape(), (ad::Shape{cfg.T, cfg.d_in}));
      ASSERT_EQ(ex.labels.size(), cfg.T);
      for (std::size_t t = 0; t < cfg.T; ++t) {
        EXPECT_GE(ex.labels[t], 0);
        EXPECT_LT(ex.labels[t], static_cast<int>(cfg.C));
        EXPECT_EQ(ex.fg_mask[t], ex.labels[t] != 0 ? 1 : 0);
      }
      EXPECT_GE(ex.difficulty, 1);
      EXPECT_LE(ex.difficulty, static_cast<int>(cfg.D_max));
    }
  }
  EXPECT_EQ(ids.size(), 62u);
  EXPECT_EQ(*ids.rbegin(), 61u);
}

TEST(Generate, RejectsInvalidConfig) {
  TaskConfig cfg;
  cfg.n_train = 10;
  EXPECT_THROW(generate(cfg), ConfigError);
  cfg = TaskConfig{};
  cfg.T = 0;
  EXPECT_THROW(generate(cfg), ConfigError);
}

TEST(Generate, DifficultyLevelsAreBalanced) {
  TaskConfig cfg;
  cfg.n_train = 5000;
  cfg.n_val = 1;
  cfg.T = 4;
  const auto splits = generate(cfg);
  std::vector<int> counts(cfg.D_max + 1, 0);
  for (const auto& ex : splits.train) ++counts[ex.difficulty];
  for (std::size_t d = 1; d <= cfg.D_max; ++d) {
    EXPECT_GE(counts[d], 900) << d;
    EXPECT_LE(counts[d], 1100) << d;
  }
}

// Per-token softmax regression on raw tokens, trained by full-batch gradient
// descent. Returns held-out token accuracy.
double linear_probe_accuracy(const ExampleSet& train, const ExampleSet& test, std::size_t C) {
  const std::size_t d = train.front().tokens.cols() + 1;
  std::vector<double> w(C * d, 0.0);
  auto features = [&](const Example& ex, std::size_t t, std::vector<double>& x) {
    for (std::size_t j = 0; j + 1 < d; ++j) x[j] = ex.tokens.at(t, j);
    x[d - 1] = 1.0;
  };
  std::vector<double> x(d), p(C), grad(C * d);
  std::size_t n = 0;
  for (const auto& ex : train) n += ex.labels.size();
  for (int iter = 0; iter < 400; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& ex : train) {
      for (std::size_t t = 0; t < ex.labels.size(); ++t) {
        features(ex, t, x);
        double mx = -INFINITY;
        for (std::size_t c = 0; c < C; ++c) {
          p[c] = 0.0;
          for (std::size_t j = 0; j < d; ++j) p[c] += w[c * d + j] * x[j];
          mx = std::max(mx, p[c]);
        }
        double z = 0.0;
        for (auto& v : p) z += (v = std::exp(v - mx));
        for (std::size_t c = 0; c < C; ++c) {
          const double r = p[c] / z - (ex.labels[t] == static_cast<int>(c) ? 1.0 : 0.0);
          for (std::size_t j = 0; j < d; ++j) grad[c * d + j] += r * x[j];
        }
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 2.0 * grad[i] / static_cast<double>(n);
  }
  std::size_t correct = 0, total = 0;
  for (const auto& ex : test) {
    for (std::size_t t = 0; t < ex.labels.size(); ++t) {
      features(ex, t, x);
      std::size_t best = 0;
      double best_score = -INFINITY;
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += w[c * d + j] * x[j];
        if (s > best_score) best_score = s, best = c;
      }
      correct += static_cast<int>(best) == ex.labels[t];
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

TEST(Generate, LinearProbeDecodesEasyButNotHardLabels) {
  TaskConfig cfg;
  cfg.n_train = 1000;
  cfg.n_val = 500;
  const auto splits = generate(cfg);
  auto only = [](const ExampleSet& set, int difficulty) {
    ExampleSet out;
    for (const auto& ex : set)
      if (ex.difficulty == difficulty) out.push_back(ex);
    return out;
  };
  const double easy = linear_probe_accuracy(only(splits.train, 1), only(splits.val, 1), cfg.C);
  const double hard =
      linear_probe_accuracy(only(splits.train, static_cast<int>(cfg.D_max)),
                            only(splits.val, static_cast<int>(cfg.D_max)), cfg.C);
  EXPECT_GT(easy, 0.9);
  EXPECT_LT(hard, 1.0 / static_cast<double>(cfg.C) + 0.15);
}

TEST(Generate, JsonlRoundTrip) {
  TaskConfig cfg;
  cfg.n_train = 50;
  cfg.n_val = 3;
  const auto splits = generate(cfg);
  const auto path = std::filesystem::temp_directory_path() / "ecoenc_task_test" / "val.jsonl";
  write_jsonl(path, splits.val);
  EXPECT_EQ(read_jsonl(path), splits.val);
  std::filesystem::remove_all(path.parent_path());
  EXPECT_THROW(read_jsonl(path), MissingArtifactError);
}

Example make_example(std::vector<int> labels) {
  Example ex;
  ex.tokens = ad::Tensor({labels.size(), 1});
  ex.labels = labels;
  for (int l : labels) ex.fg_mask.push_back(l != 0);
  return ex;
}

// Brute-force set oracle: for each considered class c, |P_c ∩ G_c| / |P_c ∪ G_c ∪ F|.
double quality_oracle(const std::vector<int>& pl, const std::vector<int>& pf, const Example& ex) {
  std::set<int> classes;
  std::set<std::size_t> false_fg;
  for (std::size_t t = 0; t < pl.size(); ++t) {
    if (ex.labels[t] != 0) classes.insert(ex.labels[t]);
    if (pf[t] == ex.fg_mask[t] && pl[t] != 0) classes.insert(pl[t]);
    if (ex.fg_mask[t] == 0 && pf[t] == 1) false_fg.insert(t);
  }
  const bool background_only = classes.empty();
  if (background_only) classes.insert(0);
  double total = 0.0;
  for (int c : classes) {
    std::set<std::size_t> P, G, U;
    for (std::size_t t = 0; t < pl.size(); ++t) {
      if (pl[t] == c && pf[t] == ex.fg_mask[t]) P.insert(t);
      if (ex.labels[t] == c) G.insert(t);
    }
    U = P;
    U.insert(G.begin(), G.end());
    if (!background_only) U.insert(false_fg.begin(), false_fg.end());
    std::size_t inter = 0;
    for (auto t : P) inter += G.count(t);
    total += static_cast<double>(inter) / static_cast<double>(U.size());
  }
  return 100.0 * total / static_cast<double>(classes.size());
}

TEST(ToyQuality, PerfectAndAllBackground) {
  const auto ex = make_example({0, 2, 2, 0, 3, 0});
  EXPECT_EQ(toy_quality(ex.labels, ex.fg_mask, ex), 100.0);
  const std::vector<int> zeros(6, 0);
  EXPECT_EQ(toy_quality(zeros, zeros, ex), 0.0);
}

TEST(ToyQuality, HalfOfOneClassCorrect) {
  const auto ex = make_example({1, 1, 1, 1, 0, 0, 0, 0});
  const std::vector<int> pl{1, 1, 0, 0, 0, 0, 0, 0};
  const std::vector<int> pf{1, 1, 0, 0, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(toy_quality(pl, pf, ex), quality_oracle(pl, pf, ex));
  EXPECT_DOUBLE_EQ(toy_quality(pl, pf, ex), 50.0);
}

TEST(ToyQuality, LengthMismatch) {
  const auto ex = make_example({0, 1});
  const std::vector<int> one{0};
  const std::vector<int> two{0, 1};
  EXPECT_THROW(toy_quality(one, two, ex), DimensionError);
}

TEST(ToyQuality, MatchesSetOracleAndRangeOnRandomPredictions) {
  std::mt19937 rng(4);
  std::uniform_int_distribution<int> cls(0, 4), bit(0, 1), len(1, 12);
  for (int trial = 0; trial < 3000; ++trial) {
    const int T = len(rng);
    std::vector<int> labels(T), pl(T), pf(T);
    // Mix in background-only examples.
    const bool bg_only = trial % 7 == 0;
    for (int t = 0; t < T; ++t) labels[t] = bg_only ? 0 : cls(rng);
    const auto ex = make_example(labels);
    for (int t = 0; t < T; ++t) {
      // Bias toward the truth so exact predictions actually occur.
      const bool copy = bit(rng) || bit(rng);
      pl[t] = copy ? labels[t] : cls(rng);
      pf[t] = copy ? ex.fg_mask[t] : bit(rng);
    }
    const double q = toy_quality(pl, pf, ex);
    EXPECT_NEAR(q, quality_oracle(pl, pf, ex), 1e-9);
    EXPECT_GE(q, 0.0);
    EXPECT_LE(q, 100.0);
    const bool exact = pl == ex.labels && pf == ex.fg_mask;
    EXPECT_EQ(q == 100.0, exact) << trial;
  }
}

}  // namespace
}  // namespace ecoenc::task
