#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ecoenc/autodiff/tensor.hpp"

namespace ecoenc::ad {

enum class OpKind {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kRelu,
  kLayerNorm,
  kSoftmax,
  kLogSoftmax,
  kMean,
  kSum,
  kSliceCols,
  kConcatCols,
  kGroupMeanRows,
  kCrossEntropy,
  kBceWithLogits,
};

std::string_view op_name(OpKind kind);

class Graph;

/// Handle to one node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph& graph() const;
  int id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Record-on-forward tape. Nodes are appended in execution order, so the
/// node list is topologically sorted by construction and backward() walks
/// it once from the loss down to node 0.
///
/// A graph is confined to one thread. Parameters can be bound by reference
/// (parameter()) so many graphs can read one frozen parameter set.
class Graph {
 public:
  /// Propagates the gradient held by node `self` into its inputs.
  using BackwardFn = std::function<void(Graph& graph, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Owned leaf that does not require a gradient.
  Var constant(Tensor value);
  /// Owned leaf that requires a gradient.
  Var variable(Tensor value);
  /// Borrowed leaf. `value` must outlive the graph.
  Var parameter(const Tensor& value, bool requires_grad = true);

  /// Appends an op node. Checks the output for NaN/Inf and names the op
  /// in the error.
  Var record(OpKind kind, std::vector<int> inputs, Tensor output, BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(int id) const { return node(id).kind; }
  std::span<const int> inputs(int id) const { return node(id).inputs; }
  const Tensor& value(int id) const;
  bool requires_grad(int id) const { return node(id).requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 and runs the tape backwards. The loss must
  /// hold exactly one value. A second call without reset_grad() throws.
  void backward(Var loss);
  void reset_grad();

  bool has_grad(Var v) const;
  /// Gradient of the last backward() w.r.t. `v`; throws if none reached it.
  std::span<const double> grad(Var v) const;
  Tensor grad_tensor(Var v) const;

  /// Upstream gradient of a node, for use inside BackwardFn.
  std::span<const double> upstream(int id) const { return node(id).grad; }
  /// Gradient accumulator of an input, zero-initialised on first use.
  /// Returns an empty span when the input does not require a gradient.
  std::span<double> accumulator(int id);

  /// Number of nodes visited by the last backward() (test hook).
  std::size_t last_backward_visits() const noexcept { return backward_visits_; }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<int> inputs;
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
  };

  const Node& node(int id) const;
  Node& node(int id);
  Var push(Node node);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::size_t backward_visits_ = 0;
};

}  // namespace ecoenc::ad
