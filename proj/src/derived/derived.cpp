#include "ecoenc/derived/derived.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ecoenc/autodiff/checkpoint.hpp"
#include "ecoenc/errors.hpp"
#include "ecoenc/util/parallel.hpp"

namespace ecoenc::derived {

std::vector<double> evaluate_exits(const model::MultiExitModel& model,
                                   const task::Example& example) {
  std::vector<double> q;
  for (const auto& pred : model.forward_all_exits(example)) {
    const auto d = model::decode(pred);
    q.push_back(task::toy_quality(d.labels, d.fg, example));
  }
  return q;
}

DerivedDataset build_derived_dataset(const task::ExampleSet& train_set,
                                     const model::MultiExitModel& model,
                                     const std::string& ckpt_hash, std::uint64_t task_seed,
                                     std::size_t threads) {
  DerivedDataset out;
  out.exit_set = model.config().exit_set;
  out.ckpt_hash = ckpt_hash;
  out.task_seed = task_seed;
  out.records.resize(train_set.size());
  util::parallel_for(train_set.size(), threads, [&](std::size_t i) {
    const auto& ex = train_set[i];
    out.records[i] = {ex.id, evaluate_exits(model, ex), model.pooled_f1(ex)};
  });
  std::sort(out.records.begin(), out.records.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < out.records.size(); ++i) {
    if (out.records[i].id == out.records[i - 1].id)
      throw ContractError("duplicate example id " + std::to_string(out.records[i].id));
  }
  return out;
}

void write_derived(const std::filesystem::path& path, const DerivedDataset& dataset) {
  std::string text = nlohmann::json{{"exit_set", dataset.exit_set},
                                    {"ckpt_hash", dataset.ckpt_hash},
                                    {"task_seed", dataset.task_seed}}
                         .dump();
  text += '\n';
  for (const auto& r : dataset.records) {
    text += nlohmann::json{{"id", r.id}, {"q", r.q}, {"pooled_f1", r.pooled_f1}}.dump();
    text += '\n';
  }
  ad::write_file(path, text);
}

DerivedDataset read_derived(const std::filesystem::path& path) {
  std::istringstream in(ad::read_file(path));
  DerivedDataset ds;
  std::string line;
  std::size_t line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (line_no == 1) {
        j.at("exit_set").get_to(ds.exit_set);
        j.at("ckpt_hash").get_to(ds.ckpt_hash);
        j.at("task_seed").get_to(ds.task_seed);
        continue;
      }
      DerivedRecord r;
      j.at("id").get_to(r.id);
      j.at("q").get_to(r.q);
      j.at("pooled_f1").get_to(r.pooled_f1);
      if (r.q.size() != ds.exit_set.size())
        throw DimensionError("q has " + std::to_string(r.q.size()) + " entries");
      ds.records.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
  }
  if (line_no == 0) throw IoError(path.string() + ": empty derived dataset");
  return ds;
}

}  // namespace ecoenc::derived
