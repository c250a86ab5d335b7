#include "ecoenc/pipeline/pipeline.hpp"

#include <chrono>
#include <optional>
#include <random>

#include "ecoenc/autodiff/checkpoint.hpp"
#include "ecoenc/autodiff/gradcheck.hpp"
#include "ecoenc/autodiff/ops.hpp"
#include "ecoenc/errors.hpp"

namespace ecoenc::pipeline {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::filesystem::path require(const std::filesystem::path& path, const char* producer) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("missing " + path.string() + " (run `ecoenc " + producer +
                               "` first)");
  }
  return path;
}

std::string parent_hash(const std::filesystem::path& out) {
  return ad::file_sha256(require(out / model::kParentCheckpoint, "train-parent"));
}

task::ExampleSet load_split(const std::filesystem::path& out, const char* file) {
  return task::read_jsonl(require(out / file, "gen-data"));
}

model::MultiExitModel load_parent(const std::filesystem::path& out) {
  require(out / model::kParentCheckpoint, "train-parent");
  require(out / model::kModelConfigFile, "train-parent");
  return model::MultiExitModel::load(out);
}

derived::DerivedDataset load_derived(const std::filesystem::path& out) {
  return derived::read_derived(require(out / derived::kDerivedFile, "build-derived"));
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  task.seed = model.seed = stepa.seed = gate.seed = seed;
}

void RunConfig::finalize() {
  model.T = task.T;
  model.d_in = task.d_in;
  model.C = task.C;
  stepa.threads = threads;
  task.validate();
  model.validate();
  stepa.validate(model);
  gate.validate(model.exit_set);
}

void gen_data(const RunConfig& rc) {
  std::filesystem::create_directories(rc.out);
  const auto splits = task::generate(rc.task);
  task::write_jsonl(rc.out / kTrainFile, splits.train);
  task::write_jsonl(rc.out / kValFile, splits.val);
}

ParentStage train_parent_stage(const RunConfig& rc, const train::EpochCallback& on_epoch) {
  const auto train_set = load_split(rc.out, kTrainFile);
  const auto val_set = load_split(rc.out, kValFile);
  const auto start = std::chrono::steady_clock::now();
  auto result = train::train_parent(rc.model, model::init_parameters(rc.model), train_set,
                                    val_set, rc.stepa, on_epoch);
  ParentStage stage{std::move(result.log), seconds_since(start)};
  model::MultiExitModel(rc.model, std::move(result.params)).save(rc.out);
  ad::write_file(rc.out / kTrainLogFile, stage.log.to_csv());
  return stage;
}

derived::DerivedDataset build_derived_stage(const RunConfig& rc) {
  const auto model = load_parent(rc.out);
  const auto train_set = load_split(rc.out, kTrainFile);
  auto ds = derived::build_derived_dataset(train_set, model, parent_hash(rc.out), rc.task.seed,
                                           rc.threads);
  derived::write_derived(rc.out / derived::kDerivedFile, ds);
  return ds;
}

GateStage train_gate_stage(const RunConfig& rc) {
  const auto ds = load_derived(rc.out);
  const auto hash = parent_hash(rc.out);
  const auto start = std::chrono::steady_clock::now();
  GateStage stage{gate::train_gate(ds, rc.gate, hash), 0.0};
  stage.seconds = seconds_since(start);
  gate::save_gate(rc.out, stage.result.params, rc.gate, hash);
  const auto& rep = stage.result.report;
  ad::write_file(rc.out / gate::kGateReport, rep.csv_header() + "\n" + rep.csv_row() + "\n");
  return stage;
}

namespace {

std::optional<int> fixed_exit(const std::string& text, const RunConfig& rc) {
  if (text.rfind("fixed:", 0) != 0) return std::nullopt;
  const std::string k = text.substr(6);
  if (k == "K") return static_cast<int>(rc.model.K);
  try {
    std::size_t used = 0;
    const int value = std::stoi(k, &used);
    if (used == k.size()) return value;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

void check_policy_name(const std::string& text, const RunConfig& rc) {
  if (text != "oracle" && text != "gate" && !fixed_exit(text, rc))
    throw ConfigError("unknown policy '" + text + "' (gate, oracle, fixed:<k>)");
}

}  // namespace

cost::Policy parse_policy(const std::string& text, const RunConfig& rc,
                          const std::filesystem::path& out) {
  check_policy_name(text, rc);
  if (text == "oracle") return cost::OraclePolicy{rc.gate.beta, rc.gate.K_max};
  if (text == "gate") {
    require(out / gate::kGateCheckpoint, "train-gate");
    require(out / gate::kGateSidecar, "train-gate");
    auto loaded = gate::load_gate(out);
    if (loaded.ckpt_hash != parent_hash(out)) {
      throw ProvenanceError("gate was trained against parent " + loaded.ckpt_hash +
                            ", which is not the current parent checkpoint");
    }
    return cost::GatePolicy{std::move(loaded.params), loaded.config.beta, loaded.config.variant};
  }
  return cost::FixedPolicy{*fixed_exit(text, rc)};
}

std::vector<cost::EvalReport> eval_stage(const RunConfig& rc,
                                         const std::vector<std::string>& policies) {
  for (const auto& p : policies) check_policy_name(p, rc);
  const auto model = load_parent(rc.out);
  const auto val_set = load_split(rc.out, kValFile);
  const auto cost_model = cost::build_cost_model(model.config());
  std::vector<cost::EvalReport> reports;
  for (const auto& p : policies) {
    reports.push_back(cost::evaluate_policy(val_set, model, parse_policy(p, rc, rc.out),
                                            cost_model, rc.threads));
  }
  ad::write_file(rc.out / cost::kReportFile, cost::report_csv(reports));
  return reports;
}

std::vector<cost::EvalReport> sweep_stage(const RunConfig& rc, const std::vector<double>& betas) {
  const auto model = load_parent(rc.out);
  const auto ds = load_derived(rc.out);
  if (ds.ckpt_hash != parent_hash(rc.out))
    throw ProvenanceError("derived dataset does not belong to the current parent checkpoint");
  const auto val_set = load_split(rc.out, kValFile);
  const auto cost_model = cost::build_cost_model(model.config());
  const auto cache = cost::build_eval_cache(val_set, model, rc.threads);
  auto rows = cost::sweep_beta(ds, cache, betas, rc.gate, cost_model);
  for (int k : model.config().exit_set)
    rows.push_back(cost::evaluate_cached(cache, cost::FixedPolicy{k}, cost_model));
  ad::write_file(rc.out / cost::kParetoCsv, cost::pareto_csv(rows));
  ad::write_file(rc.out / cost::kParetoSvg, cost::pareto_svg(rows));
  return rows;
}

namespace {

using ad::Graph;
using ad::Tensor;
using ad::Var;

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(double tolerance) {
  std::mt19937_64 rng(20240601);
  std::vector<GradCheckResult> results;
  auto check = [&](std::string name, std::vector<Tensor> inputs, const ad::LossBuilder& build) {
    const auto report = ad::gradcheck(build, inputs);
    results.push_back({std::move(name), report.max_rel_error, report.coords_checked,
                       report.passed(tolerance)});
  };
  const Tensor w34 = random_tensor({3, 4}, rng);
  auto weighted = [&](Graph& g, Var v) { return ad::sum(ad::mul(v, g.constant(w34))); };
  auto unary = [&](const char* name, ad::Shape shape, auto op) {
    check(name, {random_tensor(shape, rng)},
          [&, op](Graph& g, std::span<const Var> in) { return weighted(g, op(in[0])); });
  };

  const Tensor w32 = random_tensor({3, 2}, rng);
  check("matmul", {random_tensor({3, 5}, rng), random_tensor({5, 2}, rng)},
        [&](Graph& g, std::span<const Var> in) {
          return ad::sum(ad::mul(ad::matmul(in[0], in[1]), g.constant(w32)));
        });
  unary("transpose", {4, 3}, [](Var x) { return ad::transpose(x); });
  check("add (broadcast row)", {random_tensor({3, 4}, rng), random_tensor({4}, rng)},
        [&](Graph& g, std::span<const Var> in) { return weighted(g, ad::add(in[0], in[1])); });
  check("sub (broadcast column)", {random_tensor({3, 4}, rng), random_tensor({3, 1}, rng)},
        [&](Graph& g, std::span<const Var> in) { return weighted(g, ad::sub(in[0], in[1])); });
  check("mul", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
        [&](Graph& g, std::span<const Var> in) { return weighted(g, ad::mul(in[0], in[1])); });
  unary("scale", {3, 4}, [](Var x) { return ad::scale(x, -1.7); });
  unary("relu", {3, 4}, [](Var x) { return ad::relu(x); });
  unary("layer_norm", {3, 4}, [](Var x) { return ad::layer_norm(x, 1e-5); });
  unary("softmax", {3, 4}, [](Var x) { return ad::softmax(x, 1); });
  unary("log_softmax", {3, 4}, [](Var x) { return ad::log_softmax(x, -1); });
  unary("mean", {3, 6, 4}, [](Var x) { return ad::mean(x, 1); });
  check("sum", {random_tensor({2, 3}, rng)},
        [](Graph&, std::span<const Var> in) { return ad::sum(ad::mul(in[0], in[0])); });
  unary("slice_cols/concat_cols", {3, 6}, [](Var x) {
    const Var parts[] = {ad::slice_cols(x, 4, 2), ad::slice_cols(x, 0, 2)};
    return ad::concat_cols(parts);
  });
  unary("group_mean_rows", {10, 4}, [](Var x) { return ad::group_mean_rows(x, 4); });
  Tensor soft({3, 4});
  for (auto& v : soft.values()) v = std::abs(std::normal_distribution<double>()(rng));
  check("cross_entropy", {random_tensor({3, 4}, rng)},
        [&](Graph&, std::span<const Var> in) { return ad::cross_entropy(in[0], soft); });
  Tensor bits({3, 4});
  for (std::size_t i = 0; i < bits.numel(); ++i) bits[i] = static_cast<double>(i % 2);
  check("bce_with_logits", {random_tensor({3, 4}, rng, 3.0)},
        [&](Graph&, std::span<const Var> in) { return ad::bce_with_logits(in[0], bits); });

  // Step A losses on a small example.
  task::TaskConfig tc;
  tc.T = 6;
  tc.n_train = 50;
  tc.n_val = 1;
  const auto ex = task::generate(tc).val.front();
  const train::StepAConfig stepa;
  check("exit loss", {random_tensor({6, 5}, rng), random_tensor({6, 1}, rng)},
        [&](Graph&, std::span<const Var> in) {
          return train::exit_loss({2, in[0], in[1]}, ex, stepa);
        });
  {
    std::vector<Tensor> inputs;
    for (int i = 0; i < 3; ++i) {
      inputs.push_back(random_tensor({6, 5}, rng));
      inputs.push_back(random_tensor({6, 1}, rng));
    }
    check("weighted multi-exit loss", inputs, [&](Graph&, std::span<const Var> in) {
      const std::vector<model::ExitVars> preds{{2, in[0], in[1]}, {3, in[2], in[3]},
                                               {4, in[4], in[5]}};
      return train::weighted_multiexit_loss(preds, ex, stepa, {2.0 / 4, 3.0 / 4, 1.0});
    });
  }

  // Gate losses through the linear gate, w.r.t. W and bias.
  const std::vector<int> exits{2, 3, 4, 5, 6};
  const Tensor z = random_tensor({4, 3}, rng);
  std::vector<std::vector<double>> q(4, std::vector<double>(5));
  std::uniform_real_distribution<double> qd(30.0, 60.0);
  for (auto& row : q)
    for (auto& v : row) v = qd(rng);
  for (auto variant : {gate::LossVariant::HardCE, gate::LossVariant::UCE,
                       gate::LossVariant::SoftCE, gate::LossVariant::SoftMSE}) {
    const double beta = variant == gate::LossVariant::UCE ? 0.5 : 0.05;
    check("gate loss " + gate::loss_variant_name(variant),
          {random_tensor({5, 3}, rng), random_tensor({5}, rng)},
          [&, variant, beta](Graph& g, std::span<const Var> in) {
            auto logits = ad::add(ad::matmul(g.constant(z), ad::transpose(in[0])), in[1]);
            return gate::gate_loss(logits, q, beta, exits, variant);
          });
  }

  // One encoder layer w.r.t. its input, on a small model.
  model::ModelConfig mc;
  mc.T = 5;
  mc.d_model = 4;
  mc.n_heads = 2;
  mc.d_ffn = 6;
  mc.K = 2;
  mc.exit_set = {1, 2};
  const auto params = model::init_parameters(mc);
  const Tensor wl = random_tensor({5, 4}, rng);
  check("encoder layer", {random_tensor({5, 4}, rng)}, [&](Graph& g, std::span<const Var> in) {
    const auto vars = model::bind_parameters(g, mc, params, false);
    return ad::sum(ad::mul(model::encoder_layer_forward(mc, vars, in[0], 1), g.constant(wl)));
  });
  return results;
}

}  // namespace ecoenc::pipeline
