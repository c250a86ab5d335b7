#include "ecoenc/task/task.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecoenc/autodiff/checkpoint.hpp"
#include "ecoenc/errors.hpp"
#include "ecoenc/util/rng.hpp"

namespace ecoenc::task {

namespace {

constexpr double kMargin = 0.3;
constexpr double kSignatureNoise = 0.3;
// Mean and standard deviation of |u| for u ~ N(0, 1).
constexpr double kFoldMean = 0.7978845608028654;
constexpr double kFoldStd = 0.6028102749890869;

enum : std::uint64_t { kMapStream = 1, kTrainStream = 2, kValStream = 3, kOrderStream = 4 };

using Matrix = std::vector<std::vector<double>>;

struct Maps {
  std::size_t content = 0;
  std::size_t fold = 0;
  Matrix rotation;    // [content][content], orthogonal
  Matrix readout;     // [C][content], unit rows
  Matrix signatures;  // [D_max][d_in - content], unit rows
};

void normalize(std::vector<double>& row) {
  double norm = 0.0;
  for (double v : row) norm += v * v;
  norm = std::sqrt(norm);
  for (auto& v : row) v /= norm;
}

Matrix unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Matrix m(rows, std::vector<double>(cols));
  for (auto& row : m) {
    for (auto& v : row) v = n01(rng);
    normalize(row);
  }
  return m;
}

// Gram-Schmidt over the rows of a Gaussian matrix.
Matrix random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  Matrix q = unit_rows(n, n, rng);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += q[i][c] * q[j][c];
      for (std::size_t c = 0; c < n; ++c) q[i][c] -= dot * q[j][c];
    }
    normalize(q[i]);
  }
  return q;
}

Maps make_maps(const TaskConfig& config) {
  std::mt19937_64 rng(util::derive_seed(config.seed, {kMapStream}));
  Maps maps;
  const std::size_t signature = std::max<std::size_t>(1, config.d_in / 4);
  maps.content = config.d_in - signature;
  maps.fold = maps.content * 2 / 3;
  maps.rotation = random_orthogonal(maps.content, rng);
  maps.readout = unit_rows(config.C, maps.content, rng);
  maps.signatures = unit_rows(config.D_max, signature, rng);
  return maps;
}

std::vector<double> fold_map(const Maps& maps, const std::vector<double>& h) {
  std::vector<double> u(maps.content, 0.0);
  for (std::size_t i = 0; i < maps.content; ++i)
    for (std::size_t j = 0; j < maps.content; ++j) u[i] += maps.rotation[i][j] * h[j];
  for (std::size_t i = 0; i < maps.fold; ++i) u[i] = (std::abs(u[i]) - kFoldMean) / kFoldStd;
  return u;
}

// Returns the label, or -1 when the top two class scores are within the margin.
int decode(const Maps& maps, std::vector<double> h, int difficulty) {
  for (int step = 1; step < difficulty; ++step) h = fold_map(maps, h);
  double best = -INFINITY, second = -INFINITY;
  int label = 0;
  for (std::size_t c = 0; c < maps.readout.size(); ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < maps.content; ++j) s += maps.readout[c][j] * h[j];
    if (s > best) {
      second = best;
      best = s;
      label = static_cast<int>(c);
    } else if (s > second) {
      second = s;
    }
  }
  return best - second > kMargin ? label : -1;
}

Example make_example(const TaskConfig& config, const Maps& maps, std::uint64_t stream,
                     std::uint64_t id, int difficulty) {
  std::mt19937_64 rng(util::derive_seed(config.seed, {stream, id}));
  std::normal_distribution<double> n01;
  Example ex;
  ex.id = id;
  ex.difficulty = difficulty;
  ex.tokens = ad::Tensor({config.T, config.d_in});
  ex.labels.resize(config.T);
  ex.fg_mask.resize(config.T);
  std::vector<double> z(maps.content);
  for (std::size_t t = 0; t < config.T; ++t) {
    int label = -1;
    while (label < 0) {
      for (auto& v : z) v = n01(rng);
      label = decode(maps, z, difficulty);
    }
    for (std::size_t j = 0; j < maps.content; ++j) ex.tokens.at(t, j) = z[j];
    const auto& sig = maps.signatures[static_cast<std::size_t>(difficulty - 1)];
    for (std::size_t j = 0; j < sig.size(); ++j)
      ex.tokens.at(t, maps.content + j) = sig[j] + kSignatureNoise * n01(rng);
    ex.labels[t] = label;
    ex.fg_mask[t] = label != 0 ? 1 : 0;
  }
  return ex;
}

ExampleSet make_split(const TaskConfig& config, const Maps& maps, std::uint64_t stream,
                      std::uint64_t first_id, std::size_t n) {
  std::vector<int> difficulty(n);
  for (std::size_t i = 0; i < n; ++i) difficulty[i] = static_cast<int>(i % config.D_max) + 1;
  std::mt19937_64 order(util::derive_seed(config.seed, {kOrderStream, stream}));
  std::shuffle(difficulty.begin(), difficulty.end(), order);
  ExampleSet set;
  set.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    set.push_back(make_example(config, maps, stream, first_id + i, difficulty[i]));
  return set;
}

}  // namespace

void TaskConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("task config: ") + what);
  };
  require(T > 0 && C > 1 && D_max > 0 && n_train > 0 && n_val > 0, "sizes must be positive");
  require(d_in >= 4, "d_in must be at least 4");
  require(n_train >= 10 * C, "n_train must be at least 10 * C");
}

TaskSplits generate(const TaskConfig& config) {
  config.validate();
  const Maps maps = make_maps(config);
  return {make_split(config, maps, kTrainStream, 0, config.n_train),
          make_split(config, maps, kValStream, config.n_train, config.n_val)};
}

double toy_quality(std::span<const int> pred_labels, std::span<const int> pred_fg,
                   const Example& example) {
  const std::size_t T = example.labels.size();
  if (pred_labels.size() != T || pred_fg.size() != T) {
    throw DimensionError("toy_quality: predictions have length " +
                         std::to_string(pred_labels.size()) + "/" +
                         std::to_string(pred_fg.size()) + ", example has " + std::to_string(T));
  }
  int max_class = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (pred_labels[t] < 0) throw DimensionError("toy_quality: negative predicted class");
    max_class = std::max({max_class, example.labels[t], pred_labels[t]});
  }

  std::vector<std::size_t> inter(max_class + 1, 0), uni(max_class + 1, 0);
  std::vector<bool> present(max_class + 1, false);
  std::size_t false_fg = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const int truth = example.labels[t];
    const bool agrees = pred_fg[t] == example.fg_mask[t];
    const int pred = agrees ? pred_labels[t] : -1;
    if (example.fg_mask[t] == 0 && pred_fg[t] == 1) ++false_fg;
    present[truth] = true;
    ++uni[truth];
    if (pred >= 0) {
      present[pred] = true;
      if (pred == truth) ++inter[truth];
      else ++uni[pred];
    }
  }
  double total = 0.0;
  int count = 0;
  for (int c = 1; c <= max_class; ++c) {
    if (!present[c]) continue;
    total += static_cast<double>(inter[c]) / static_cast<double>(uni[c] + false_fg);
    ++count;
  }
  if (count == 0) return 100.0 * static_cast<double>(inter[0]) / static_cast<double>(uni[0]);
  return 100.0 * total / count;
}

void write_jsonl(const std::filesystem::path& path, const ExampleSet& set) {
  std::string out;
  for (const auto& ex : set) {
    nlohmann::json tokens = nlohmann::json::array();
    for (std::size_t t = 0; t < ex.tokens.rows(); ++t) {
      auto row = ex.tokens.values().subspan(t * ex.tokens.cols(), ex.tokens.cols());
      tokens.push_back(std::vector<double>(row.begin(), row.end()));
    }
    nlohmann::json line = {{"id", ex.id},
                           {"tokens", std::move(tokens)},
                           {"labels", ex.labels},
                           {"fg_mask", ex.fg_mask},
                           {"difficulty", ex.difficulty}};
    out += line.dump();
    out += '\n';
  }
  ad::write_file(path, out);
}

ExampleSet read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(ad::read_file(path));
  ExampleSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Example ex;
      ex.id = j.at("id").get<std::uint64_t>();
      const auto rows = j.at("tokens").get<std::vector<std::vector<double>>>();
      const std::size_t cols = rows.empty() ? 0 : rows.front().size();
      std::vector<double> flat;
      for (const auto& r : rows) {
        if (r.size() != cols) throw DimensionError("ragged token rows");
        flat.insert(flat.end(), r.begin(), r.end());
      }
      ex.tokens = ad::Tensor({rows.size(), cols}, std::move(flat));
      ex.labels = j.at("labels").get<std::vector<int>>();
      ex.fg_mask = j.at("fg_mask").get<std::vector<int>>();
      ex.difficulty = j.at("difficulty").get<int>();
      if (ex.labels.size() != rows.size() || ex.fg_mask.size() != rows.size())
        throw DimensionError("labels/fg_mask length differs from token count");
      set.push_back(std::move(ex));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return set;
}

}  // namespace ecoenc::task
