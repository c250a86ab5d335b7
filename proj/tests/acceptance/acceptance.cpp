// Runs the ten acceptance criteria end to end and prints one PASS/FAIL line
// per criterion. Usage: acceptance [--known-failure N]... [work_dir]
// A listed criterion still reports FAIL but does not fail the process.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "../support/separable.hpp"
#include "ecoenc/autodiff/checkpoint.hpp"
#include "ecoenc/autodiff/flop_counter.hpp"
#include "ecoenc/cost/cost.hpp"
#include "ecoenc/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ecoenc;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::set<int> known_failures;
std::vector<int> failed;

void report(int id, const char* title, const Outcome& o) {
  std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) failed.push_back(id);
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void run(int id, const char* title, const std::function<Outcome()>& body) {
  try {
    report(id, title, body());
  } catch (const std::exception& e) {
    report(id, title, {false, std::string("exception: ") + e.what()});
  }
}

Outcome gradient_suite() {
  const auto start = Clock::now();
  const auto results = pipeline::run_gradient_suite(1e-4);
  const double secs = since(start);
  double worst = 0.0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  const bool pass = failed.empty() && secs < 60.0;
  return {pass, fmt("%zu checks, worst rel err %.2e, %.2f s%s%s", results.size(), worst, secs,
                    failed.empty() ? "" : ", failed:", failed.c_str())};
}

std::string qs(const std::vector<double>& q) {
  std::string s;
  for (double v : q) s += fmt("%s%.1f", s.empty() ? "" : " ", v);
  return s;
}

// Brute force: collect all utilities, find the maximum, then the first exit attaining it.
int brute_force_target(const std::vector<double>& q, double beta, const std::vector<int>& exits) {
  std::vector<double> u;
  for (std::size_t i = 0; i < exits.size(); ++i) u.push_back(q[i] - beta * exits[i]);
  const double best = *std::max_element(u.begin(), u.end());
  for (std::size_t i = 0; i < u.size(); ++i)
    if (u[i] == best) return exits[i];
  return -1;
}

Outcome oracle_correctness() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> qi(0, 12), pick(0, 3), nexit(1, 6);
  std::uniform_real_distribution<double> qr(0.0, 100.0), br(0.0, 20.0);
  const double grid_beta[] = {0.0, 0.5, 1.0, 2.0, 4.0};
  std::size_t mismatches = 0, ties = 0;
  for (int n = 0; n < 10000; ++n) {
    // Integer q with half-integer β produces exact ties.
    const bool tie_prone = pick(rng) < 3;
    std::vector<int> pool{1, 2, 3, 4, 5, 6, 7, 8};
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<int> exits(pool.begin(), pool.begin() + nexit(rng));
    std::sort(exits.begin(), exits.end());
    std::vector<double> q;
    for (std::size_t i = 0; i < exits.size(); ++i) q.push_back(tie_prone ? qi(rng) : qr(rng));
    const double beta = tie_prone ? grid_beta[pick(rng)] : br(rng);
    std::vector<double> u;
    for (std::size_t i = 0; i < exits.size(); ++i) u.push_back(q[i] - beta * exits[i]);
    if (std::count(u.begin(), u.end(), *std::max_element(u.begin(), u.end())) > 1) ++ties;
    if (gate::target_exit(q, beta, exits) != brute_force_target(q, beta, exits)) ++mismatches;
  }
  return {mismatches == 0 && ties > 0,
          fmt("10000 instances, %zu with tied maxima, %zu mismatches", ties, mismatches)};
}

Outcome beta_monotonicity(const derived::DerivedDataset& ds) {
  double lo = 1e300, hi = -1e300;
  for (const auto& r : ds.records)
    for (double v : r.q) lo = std::min(lo, v), hi = std::max(hi, v);
  const double beta_max = 2.0 * (hi - lo);
  const int steps = 200;
  double prev_exit = 1e300, prev_q = 1e300;
  std::size_t violations = 0;
  double first_exit = 0, last_exit = 0;
  for (int s = 0; s <= steps; ++s) {
    const double beta = beta_max * s / steps;
    double exit_sum = 0.0, q_sum = 0.0;
    for (const auto& r : ds.records) {
      const int k = gate::target_exit(r.q, beta, ds.exit_set);
      exit_sum += k;
      const auto at = std::find(ds.exit_set.begin(), ds.exit_set.end(), k) - ds.exit_set.begin();
      q_sum += r.q[at];
    }
    const double n = static_cast<double>(ds.records.size());
    const double mean_exit = exit_sum / n, mean_q = q_sum / n;
    if (mean_exit > prev_exit || mean_q > prev_q) ++violations;
    prev_exit = mean_exit;
    prev_q = mean_q;
    if (s == 0) first_exit = mean_exit;
    last_exit = mean_exit;
  }
  return {violations == 0,
          fmt("%d-point grid over [0, %.1f], mean exit %.3f -> %.3f, %zu violations", steps + 1,
              beta_max, first_exit, last_exit, violations)};
}

const cost::EvalReport& find_row(const std::vector<cost::EvalReport>& rows,
                                 const std::string& policy, double beta) {
  for (const auto& r : rows)
    if (r.policy == policy && (policy.rfind("fixed:", 0) == 0 || r.beta == beta)) return r;
  throw std::runtime_error("no " + policy + " row");
}

Outcome cost_exactness() {
  const model::ModelConfig cfg;
  const model::MultiExitModel m(cfg, model::init_parameters(cfg));
  const auto cost_model = cost::build_cost_model(cfg);
  task::TaskConfig tc;
  tc.n_train = 50;
  tc.n_val = 1;
  const auto ex = task::generate(tc).val.front();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  gate::GateParams g{cfg.exit_set, ad::Tensor({cfg.exit_set.size(), cfg.d_model}),
                     ad::Tensor({cfg.exit_set.size()})};
  for (auto& v : g.W.values()) v = n01(rng);
  const auto f1 = m.backbone_forward(ex).f1;
  double worst = 0.0;
  for (int k : cfg.exit_set) {
    ad::FlopScope scope;
    m.run_to_depth(ex, k);
    cost::counted_gate_logits(f1, g);
    const double counted = static_cast<double>(scope.elapsed());
    const double analytic = static_cast<double>(cost_model.total_flops(k, true));
    worst = std::max(worst, std::abs(counted - analytic) / analytic);
  }
  const double overhead =
      static_cast<double>(cost_model.gate_flops) / static_cast<double>(cost_model.per_layer_flops);
  return {worst < 1e-3 && overhead < 0.01,
          fmt("max relative gap %.2e over exits, gate = %.3f%% of one layer (%llu vs %llu FLOPs)",
              worst, 100.0 * overhead, static_cast<unsigned long long>(cost_model.gate_flops),
              static_cast<unsigned long long>(cost_model.per_layer_flops))};
}

Outcome variant_parity() {
  const auto ds = testing::separable_dataset(1000, 32, {2, 3, 4, 5, 6}, 21);
  std::string detail = fmt("default variant %s;",
                           gate::loss_variant_name(gate::GateConfig{}.variant).c_str());
  bool pass = gate::GateConfig{}.variant == gate::LossVariant::HardCE;
  for (auto v : {gate::LossVariant::HardCE, gate::LossVariant::UCE, gate::LossVariant::SoftCE,
                 gate::LossVariant::SoftMSE}) {
    gate::GateConfig cfg;
    cfg.variant = v;
    const double acc = gate::train_gate(ds, cfg).report.target_accuracy;
    pass = pass && acc >= 0.90;
    detail += fmt(" %s %.3f", gate::loss_variant_name(v).c_str(), acc);
  }
  return {pass, detail};
}

struct PipelineRun {
  pipeline::ParentStage parent;
  std::vector<cost::EvalReport> sweep;
};

const std::vector<double> kSweepBetas{0.0, 0.05, 0.5, 5.0};

PipelineRun run_pipeline(const pipeline::RunConfig& rc) {
  PipelineRun out;
  pipeline::gen_data(rc);
  out.parent = pipeline::train_parent_stage(rc, [](const train::EpochRecord& r) {
    std::printf("    epoch %2zu loss %.4f q: %s\n", r.epoch, r.total_loss, qs(r.exit_quality).c_str());
    std::fflush(stdout);
  });
  pipeline::build_derived_stage(rc);
  pipeline::train_gate_stage(rc);
  pipeline::eval_stage(rc, {"gate", "oracle", "fixed:K"});
  out.sweep = pipeline::sweep_stage(rc, kSweepBetas);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "ecoenc_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--known-failure" && i + 1 < argc) {
      known_failures.insert(std::stoi(argv[++i]));
    } else {
      work = arg;
    }
  }
  fs::remove_all(work);
  fs::create_directories(work);

  run(1, "gradient suite", gradient_suite);
  run(4, "oracle target vs brute force", oracle_correctness);
  run(8, "cost model vs instrumented counter", cost_exactness);
  run(9, "gate loss variant parity", variant_parity);

  pipeline::RunConfig base;
  base.finalize();

  std::printf("  pipeline run A (weighted, seed 0)\n");
  pipeline::RunConfig rc_a = base;
  rc_a.out = work / "a";
  PipelineRun a;
  bool have_a = false;
  try {
    a = run_pipeline(rc_a);
    have_a = true;
  } catch (const std::exception& e) {
    std::printf("  pipeline run A failed: %s\n", e.what());
  }

  std::printf("  baseline Step A (last exit only, seed 0)\n");
  pipeline::RunConfig rc_b = base;
  rc_b.out = work / "baseline";
  rc_b.stepa.mode = train::DepthMode::Baseline;
  rc_b.finalize();
  pipeline::ParentStage baseline;
  bool have_baseline = false;
  try {
    pipeline::gen_data(rc_b);
    baseline = pipeline::train_parent_stage(rc_b);
    have_baseline = true;
  } catch (const std::exception& e) {
    std::printf("  baseline run failed: %s\n", e.what());
  }

  run(2, "weighted vs baseline exit-2 quality", [&]() -> Outcome {
    if (!have_a || !have_baseline) return {false, "training did not complete"};
    const auto& w = a.parent.log.epochs.back().exit_quality;
    const auto& b = baseline.log.epochs.back().exit_quality;
    const bool pass = w.front() >= 0.85 * w.back() && b.front() <= 0.5 * b.back() &&
                      a.parent.seconds < 900 && baseline.seconds < 900;
    return {pass, fmt("weighted q2/q6 = %.1f/%.1f (%.3f, %.0f s), baseline q2/q6 = %.1f/%.1f "
                      "(%.3f, %.0f s)",
                      w.front(), w.back(), w.front() / w.back(), a.parent.seconds, b.front(),
                      b.back(), b.front() / b.back(), baseline.seconds)};
  });

  run(3, "monotone quality across exits", [&]() -> Outcome {
    if (!have_a) return {false, "training did not complete"};
    const auto& q = a.parent.log.epochs.back().exit_quality;
    bool pass = true;
    for (std::size_t i = 1; i < q.size(); ++i) pass = pass && q[i] >= q[i - 1] - 1.0;
    return {pass, "weighted validation q: " + qs(q)};
  });

  run(5, "oracle beta monotonicity", [&]() -> Outcome {
    if (!have_a) return {false, "pipeline did not complete"};
    return beta_monotonicity(derived::read_derived(rc_a.out / derived::kDerivedFile));
  });

  run(6, "trained gate trade-off", [&]() -> Outcome {
    if (!have_a) return {false, "pipeline did not complete"};
    const auto& g0 = find_row(a.sweep, "gate", 0.0);
    const auto& g5 = find_row(a.sweep, "gate", 5.0);
    const auto& fixed = find_row(a.sweep, "fixed:6", 0.0);
    const bool pass = g5.encoder_flops_mean < g0.encoder_flops_mean &&
                      std::abs(g0.mean_quality - fixed.mean_quality) <= 2.0;
    std::string detail = fmt("fixed:6 q %.2f;", fixed.mean_quality);
    for (double b : kSweepBetas) {
      const auto& r = find_row(a.sweep, "gate", b);
      detail += fmt(" beta %g: q %.2f, exit %.2f, enc %.0f;", b, r.mean_quality, r.mean_exit,
                    r.encoder_flops_mean);
    }
    return {pass, detail};
  });

  std::printf("  pipeline run B (same seed)\n");
  pipeline::RunConfig rc_b2 = base;
  rc_b2.out = work / "b";
  bool have_b = false;
  try {
    run_pipeline(rc_b2);
    have_b = true;
  } catch (const std::exception& e) {
    std::printf("  pipeline run B failed: %s\n", e.what());
  }

  run(10, "determinism", [&]() -> Outcome {
    if (!have_a || !have_b) return {false, "pipeline did not complete"};
    std::string detail;
    bool pass = true;
    for (const char* f : {derived::kDerivedFile, cost::kReportFile, cost::kParetoCsv}) {
      const bool same = ad::read_file(rc_a.out / f) == ad::read_file(rc_b2.out / f);
      pass = pass && same;
      detail += fmt("%s%s %s", detail.empty() ? "" : ", ", f, same ? "identical" : "DIFFERS");
    }
    return {pass, detail};
  });

  run(7, "K_max = 4 gate-only retrain", [&]() -> Outcome {
    if (!have_a) return {false, "pipeline did not complete"};
    pipeline::RunConfig rc = rc_a;
    rc.gate.K_max = 4;
    const auto parent = rc.out / model::kParentCheckpoint;
    const std::string before = ad::file_sha256(parent);
    const auto start = Clock::now();
    const auto stage = pipeline::train_gate_stage(rc);
    const double secs = since(start);
    const std::string after = ad::file_sha256(parent);
    const auto eval = pipeline::eval_stage(rc, {"gate"}).front();
    std::size_t deep = 0;
    for (std::size_t i = 0; i < eval.exits.size(); ++i)
      if (eval.exits[i] > 4) deep += eval.exit_histogram[i];
    for (std::size_t i = 0; i < stage.result.report.exits.size(); ++i)
      if (stage.result.report.exits[i] > 4) deep += stage.result.report.decision_histogram[i];
    const double ratio = secs / a.parent.seconds;
    const bool pass = before == after && deep == 0 && ratio < 0.02;
    return {pass, fmt("parent hash %s, %zu decisions above exit 4, gate %.2f s = %.2f%% of Step A",
                      before == after ? "unchanged" : "CHANGED", deep, secs, 100.0 * ratio)};
  });

  int unexpected = 0;
  std::string list;
  for (int id : failed) {
    const bool known = known_failures.count(id) > 0;
    if (!known) ++unexpected;
    list += fmt(" %d%s", id, known ? " (known)" : "");
  }
  std::printf("%zu of 10 criteria failed%s%s\n", failed.size(), list.empty() ? "" : ":",
              list.c_str());
  return unexpected == 0 ? 0 : 1;
}
