#include "ecoenc/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ecoenc/autodiff/flop_counter.hpp"
#include "ecoenc/errors.hpp"

namespace ecoenc::ad {

namespace {
thread_local std::uint64_t g_flops = 0;
}  // namespace

void FlopCounter::add(std::uint64_t flops) noexcept { g_flops += flops; }
std::uint64_t FlopCounter::total() noexcept { return g_flops; }

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kGroupMeanRows: return "group_mean_rows";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kBceWithLogits: return "bce_with_logits";
  }
  return "unknown";
}

Graph& Var::graph() const {
  if (!graph_) throw ContractError("use of an unbound Var");
  return *graph_;
}

const Tensor& Var::value() const { return graph().value(id_); }

bool Var::requires_grad() const { return graph().requires_grad(id_); }

const Graph::Node& Graph::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ContractError("node id " + std::to_string(id) + " not in graph");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

Graph::Node& Graph::node(int id) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(id));
}

const Tensor& Graph::value(int id) const {
  const auto& n = node(id);
  return n.borrowed ? *n.borrowed : n.owned;
}

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite value in constant leaf");
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite value in variable leaf");
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::parameter(const Tensor& value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite value in parameter leaf");
  Node n;
  n.borrowed = &value;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Graph::record(OpKind kind, std::vector<int> inputs, Tensor output, BackwardFn backward) {
  if (!output.all_finite()) {
    throw NumericError("non-finite value produced by " + std::string(op_name(kind)));
  }
  Node n;
  n.kind = kind;
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](int id) { return node(id).requires_grad; });
  n.inputs = std::move(inputs);
  n.owned = std::move(output);
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

std::span<double> Graph::accumulator(int id) {
  auto& n = node(id);
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(value(id).numel(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
  if (backward_done_) {
    throw ContractError("backward called twice on the same graph without reset_grad()");
  }
  const auto& lv = value(loss.id());
  if (lv.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(lv.shape()));
  }
  backward_done_ = true;
  backward_visits_ = 0;
  if (!node(loss.id()).requires_grad) return;
  accumulator(loss.id())[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    ++backward_visits_;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  for (const auto& n : nodes_) {
    for (double g : n.grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient during backward");
    }
  }
}

void Graph::reset_grad() {
  for (auto& n : nodes_) n.grad.clear();
  backward_done_ = false;
  backward_visits_ = 0;
}

bool Graph::has_grad(Var v) const { return !node(v.id()).grad.empty(); }

std::span<const double> Graph::grad(Var v) const {
  const auto& n = node(v.id());
  if (n.grad.empty()) {
    throw ContractError("no gradient reached node " + std::to_string(v.id()) + " (" +
                        std::string(op_name(n.kind)) + ")");
  }
  return n.grad;
}

Tensor Graph::grad_tensor(Var v) const {
  auto g = grad(v);
  return Tensor(value(v.id()).shape(), std::vector<double>(g.begin(), g.end()));
}

}  // namespace ecoenc::ad
