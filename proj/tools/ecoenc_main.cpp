#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ecoenc/autodiff/checkpoint.hpp"
#include "ecoenc/errors.hpp"
#include "ecoenc/pipeline/pipeline.hpp"
#include "ecoenc/util/format.hpp"

namespace {

using ecoenc::pipeline::RunConfig;
namespace pl = ecoenc::pipeline;

struct Cli {
  RunConfig rc;
  std::uint64_t seed = 0;
  std::string out = "run";
  std::string depth_mode = "weighted";
  std::string loss_variant = "hard-CE";
  std::vector<std::string> gamma;
  std::vector<std::string> policies{"gate"};
  std::vector<double> betas{0.0, 0.05, 0.5, 5.0};
};

void add_pipeline_options(CLI::App& app, Cli& cli) {
  auto& t = cli.rc.task;
  auto& m = cli.rc.model;
  auto& a = cli.rc.stepa;
  auto& g = cli.rc.gate;
  app.add_option("--out", cli.out, "Output directory for every artifact")->capture_default_str();
  app.add_option("--seed", cli.seed, "Seed for data, init, Step A and the gate")
      ->capture_default_str();
  app.add_option("--threads", cli.rc.threads, "Worker cap; 0 uses every core")
      ->capture_default_str();

  auto* task = app.add_option_group("task", "Synthetic task");
  task->add_option("--tokens", t.T, "Tokens per sequence")->capture_default_str();
  task->add_option("--d-in", t.d_in, "Token feature width")->capture_default_str();
  task->add_option("--classes", t.C, "Classes including background")->capture_default_str();
  task->add_option("--d-max", t.D_max, "Largest difficulty level")->capture_default_str();
  task->add_option("--n-train", t.n_train)->capture_default_str();
  task->add_option("--n-val", t.n_val)->capture_default_str();

  auto* model = app.add_option_group("model", "Multi-exit encoder");
  model->add_option("--layers", m.K, "Encoder depth K")->capture_default_str();
  model->add_option("--exits", m.exit_set, "Exit layers")->capture_default_str()->delimiter(',');
  model->add_option("--d-model", m.d_model)->capture_default_str();
  model->add_option("--heads", m.n_heads)->capture_default_str();
  model->add_option("--d-ffn", m.d_ffn)->capture_default_str();
  model->add_option("--pos-init-std", m.pos_init_std)->capture_default_str();

  auto* stepa = app.add_option_group("train", "Parent training");
  stepa->add_option("--depth-mode", cli.depth_mode)
      ->check(CLI::IsMember({"weighted", "unweighted", "baseline"}))
      ->capture_default_str();
  stepa->add_option("--gamma", cli.gamma, "Explicit per-exit coefficients")->delimiter(',');
  stepa->add_option("--epochs", a.epochs)->capture_default_str();
  stepa->add_option("--batch-size", a.batch_size)->capture_default_str();
  stepa->add_option("--lr", a.lr)->capture_default_str();
  stepa->add_option("--lambda-mask", a.lambda_mask)->capture_default_str();
  stepa->add_option("--lambda-class", a.lambda_class)->capture_default_str();
  stepa->add_option("--background-weight", a.background_weight)->capture_default_str();

  auto* gate = app.add_option_group("gate", "Gating network");
  gate->add_option("--beta", g.beta, "Utility cost weight")->capture_default_str();
  gate->add_option("--k-max", g.K_max, "Deepest exit allowed; 0 means K")->capture_default_str();
  gate->add_option("--loss-variant", cli.loss_variant)
      ->check(CLI::IsMember({"hard-CE", "u-CE", "soft-CE", "soft-MSE"}))
      ->capture_default_str();
  gate->add_option("--gate-epochs", g.epochs)->capture_default_str();
  gate->add_option("--gate-batch-size", g.batch_size)->capture_default_str();
  gate->add_option("--gate-lr", g.lr)->capture_default_str();
  gate->add_option("--holdout-every", g.holdout_every)->capture_default_str();
}

void print_reports(const std::vector<ecoenc::cost::EvalReport>& reports) {
  std::cout << ecoenc::cost::report_csv(reports);
}

int run_gradcheck() {
  bool ok = true;
  for (const auto& r : pl::run_gradient_suite()) {
    std::printf("%-28s %s  max_rel_err=%.3e  coords=%zu\n", r.name.c_str(),
                r.passed ? "ok  " : "FAIL", r.max_rel_error, r.coords);
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

void print_epoch(const ecoenc::train::EpochRecord& rec) {
  std::printf("epoch %zu  loss %.4f  q:", rec.epoch, rec.total_loss);
  for (double q : rec.exit_quality) std::printf(" %.1f", q);
  std::printf("\n");
  std::fflush(stdout);
}

void check_gate_flags(const CLI::App& app, const RunConfig& rc,
                      const std::vector<std::string>& policies) {
  if (std::find(policies.begin(), policies.end(), "gate") == policies.end()) return;
  const bool explicit_gate_flags =
      app.count("--beta") + app.count("--k-max") + app.count("--loss-variant") > 0;
  if (!explicit_gate_flags) return;
  const auto path = rc.out / ecoenc::gate::kGateSidecar;
  if (!std::filesystem::exists(path)) return;
  const auto saved = ecoenc::gate::load_gate(rc.out).config;
  if (saved.beta != rc.gate.beta || saved.K_max != rc.gate.K_max ||
      saved.variant != rc.gate.variant) {
    throw ecoenc::ConfigError(
        "the saved gate was trained with beta=" + ecoenc::util::format_double(saved.beta) +
        ", k-max=" + std::to_string(saved.K_max) + ", loss-variant=" +
        ecoenc::gate::loss_variant_name(saved.variant) + "; retrain it with train-gate or drop the conflicting flags");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-exit encoder training, gating and cost evaluation"};
  app.set_config("--config", "", "INI file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();
  Cli cli;
  add_pipeline_options(app, cli);

  auto* gen = app.add_subcommand("gen-data", "Write train.jsonl and val.jsonl");
  auto* parent = app.add_subcommand("train-parent", "Step A: weighted multi-exit training");
  auto* derived = app.add_subcommand("build-derived", "Step B: per-exit quality vectors");
  auto* gate = app.add_subcommand("train-gate", "Step C: train the gate on the derived set");
  auto* eval = app.add_subcommand("eval", "Evaluate policies on the validation split");
  eval->add_option("--policy", cli.policies, "gate, oracle or fixed:<k> (repeatable)")
      ->capture_default_str();
  auto* sweep = app.add_subcommand("sweep-beta", "Gate and oracle trade-off over a beta grid");
  sweep->add_option("--betas", cli.betas)->delimiter(',')->capture_default_str();
  auto* run_all = app.add_subcommand("run-all", "Every stage in order, then eval and sweep");
  run_all->add_option("--betas", cli.betas)->delimiter(',')->capture_default_str();
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gradcheck->parsed()) return run_gradcheck();

    RunConfig& rc = cli.rc;
    rc.out = cli.out;
    rc.set_seed(cli.seed);
    rc.stepa.mode = ecoenc::train::parse_depth_mode(cli.depth_mode);
    for (const auto& g : cli.gamma) {
      if (g.empty()) continue;
      try {
        rc.stepa.gamma.push_back(std::stod(g));
      } catch (const std::exception&) {
        throw ecoenc::ConfigError("gamma entry '" + g + "' is not a number");
      }
    }
    rc.gate.variant = ecoenc::gate::parse_loss_variant(cli.loss_variant);
    rc.finalize();
    std::filesystem::create_directories(rc.out);
    ecoenc::ad::write_file(rc.out / pl::kRunConfigFile, app.config_to_str(true, true));

    if (gen->parsed() || run_all->parsed()) pl::gen_data(rc);
    if (parent->parsed() || run_all->parsed()) {
      const auto stage = pl::train_parent_stage(rc, print_epoch);
      std::printf("Step A finished in %.1f s\n", stage.seconds);
    }
    if (derived->parsed() || run_all->parsed()) {
      const auto ds = pl::build_derived_stage(rc);
      std::printf("derived dataset: %zu records, parent %s\n", ds.records.size(),
                  ds.ckpt_hash.c_str());
    }
    if (gate->parsed() || run_all->parsed()) {
      const auto stage = pl::train_gate_stage(rc);
      const auto& rep = stage.result.report;
      std::cout << rep.csv_header() << "\n" << rep.csv_row() << "\n";
      std::printf("gate trained in %.2f s\n", stage.seconds);
    }
    if (eval->parsed()) {
      check_gate_flags(app, rc, cli.policies);
      print_reports(pl::eval_stage(rc, cli.policies));
    }
    if (run_all->parsed()) print_reports(pl::eval_stage(rc, {"gate", "oracle", "fixed:K"}));
    if (sweep->parsed() || run_all->parsed()) {
      std::cout << ecoenc::cost::pareto_csv(pl::sweep_stage(rc, cli.betas));
    }
    return 0;
  } catch (const ecoenc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ecoenc::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 3;
  } catch (const ecoenc::ProvenanceError& e) {
    std::cerr << "provenance mismatch: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
