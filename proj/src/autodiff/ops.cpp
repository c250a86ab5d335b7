#include "ecoenc/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ecoenc/autodiff/flop_counter.hpp"
#include "ecoenc/errors.hpp"

namespace ecoenc::ad {

namespace {

Graph& common_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
  return a.graph();
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got shape " +
                         shape_str(t.shape()));
  }
}

/// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisView {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

/// Flat input offsets for every output element under broadcasting.
struct Broadcast {
  Shape out;
  bool identity = false;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, OpKind kind) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.identity = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError(std::string(op_name(kind)) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " do not broadcast");
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  auto strides = [rank](const Shape& s) {
    std::vector<std::size_t> st(rank, 0);
    std::size_t acc = 1;
    for (std::size_t i = rank; i-- > 0;) {
      st[i] = s[i] == 1 ? 0 : acc;
      acc *= s[i];
    }
    return st;
  };
  const auto sa = strides(pa);
  const auto sb = strides(pb);
  const std::size_t n = shape_numel(plan.out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < rank; ++i) {
      oa += idx[i] * sa[i];
      ob += idx[i] * sb[i];
    }
    plan.a_index[flat] = oa;
    plan.b_index[flat] = ob;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < plan.out[i]) break;
      idx[i] = 0;
    }
  }
  return plan;
}

template <typename Fwd, typename GradA, typename GradB>
Var binary(OpKind kind, Var a, Var b, Fwd fwd, GradA grad_a, GradB grad_b) {
  Graph& g = common_graph(a, b);
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), kind));
  const auto& av = a.value().values();
  const auto& bv = b.value().values();
  Tensor out(plan->out);
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const std::size_t ia = plan->identity ? i : plan->a_index[i];
    const std::size_t ib = plan->identity ? i : plan->b_index[i];
    ov[i] = fwd(av[ia], bv[ib]);
  }
  const int ida = a.id(), idb = b.id();
  return g.record(kind, {ida, idb}, std::move(out),
                  [plan, ida, idb, grad_a, grad_b](Graph& gr, int self) {
                    const auto up = gr.upstream(self);
                    const auto& x = gr.value(ida).values();
                    const auto& y = gr.value(idb).values();
                    auto ga = gr.accumulator(ida);
                    auto gb = gr.accumulator(idb);
                    for (std::size_t i = 0; i < up.size(); ++i) {
                      const std::size_t ia = plan->identity ? i : plan->a_index[i];
                      const std::size_t ib = plan->identity ? i : plan->b_index[i];
                      if (!ga.empty()) ga[ia] += grad_a(up[i], x[ia], y[ib]);
                      if (!gb.empty()) gb[ib] += grad_b(up[i], x[ia], y[ib]);
                    }
                  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = common_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  Tensor out({m, n});
  const double* pa = av.values().data();
  const double* pb = bv.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  FlopCounter::add(2ULL * m * k * n);
  const int ida = a.id(), idb = b.id();
  return g.record(OpKind::kMatMul, {ida, idb}, std::move(out),
                  [ida, idb, m, k, n](Graph& gr, int self) {
                    const double* up = gr.upstream(self).data();
                    auto ga = gr.accumulator(ida);
                    auto gb = gr.accumulator(idb);
                    if (!ga.empty()) {
                      const double* pb = gr.value(idb).values().data();
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                          double acc = 0.0;
                          const double* brow = pb + p * n;
                          const double* urow = up + i * n;
                          for (std::size_t j = 0; j < n; ++j) acc += urow[j] * brow[j];
                          ga[i * k + p] += acc;
                        }
                      }
                    }
                    if (!gb.empty()) {
                      const double* pa = gr.value(ida).values().data();
                      for (std::size_t i = 0; i < m; ++i) {
                        const double* urow = up + i * n;
                        for (std::size_t p = 0; p < k; ++p) {
                          const double s = pa[i * k + p];
                          double* grow = gb.data() + p * n;
                          for (std::size_t j = 0; j < n; ++j) grow[j] += s * urow[j];
                        }
                      }
                    }
                  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "transpose");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  const int ida = a.id();
  return a.graph().record(OpKind::kTranspose, {ida}, std::move(out),
                          [ida, m, n](Graph& gr, int self) {
                            const auto up = gr.upstream(self);
                            auto ga = gr.accumulator(ida);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += up[j * m + i];
                          });
}

Var add(Var a, Var b) {
  return binary(
      OpKind::kAdd, a, b, [](double x, double y) { return x + y; },
      [](double u, double, double) { return u; }, [](double u, double, double) { return u; });
}

Var sub(Var a, Var b) {
  return binary(
      OpKind::kSub, a, b, [](double x, double y) { return x - y; },
      [](double u, double, double) { return u; }, [](double u, double, double) { return -u; });
}

Var mul(Var a, Var b) {
  return binary(
      OpKind::kMul, a, b, [](double x, double y) { return x * y; },
      [](double u, double, double y) { return u * y; },
      [](double u, double x, double) { return u * x; });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  const int ida = a.id();
  return a.graph().record(OpKind::kScale, {ida}, std::move(out),
                          [ida, factor](Graph& gr, int self) {
                            const auto up = gr.upstream(self);
                            auto ga = gr.accumulator(ida);
                            for (std::size_t i = 0; i < up.size(); ++i) ga[i] += factor * up[i];
                          });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  const int ida = a.id();
  return a.graph().record(OpKind::kRelu, {ida}, std::move(out), [ida](Graph& gr, int self) {
    const auto up = gr.upstream(self);
    const auto x = gr.value(ida).values();
    auto ga = gr.accumulator(ida);
    for (std::size_t i = 0; i < up.size(); ++i)
      if (x[i] > 0.0) ga[i] += up[i];
  });
}

Var layer_norm(Var x, double eps) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("layer_norm needs at least one axis");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.numel() / n;
  Tensor out(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto in = xv.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < n; ++j) ov[r * n + j] = (row[j] - mu) * inv;
  }
  const int idx = x.id();
  return x.graph().record(
      OpKind::kLayerNorm, {idx}, std::move(out), [idx, n, rows, inv_std](Graph& gr, int self) {
        const auto up = gr.upstream(self);
        const auto y = gr.value(self).values();
        auto gx = gr.accumulator(idx);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_g = 0.0, mean_gy = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            mean_g += up[r * n + j];
            mean_gy += up[r * n + j] * y[r * n + j];
          }
          mean_g *= inv_n;
          mean_gy *= inv_n;
          const double inv = (*inv_std)[r];
          for (std::size_t j = 0; j < n; ++j) {
            gx[r * n + j] += inv * (up[r * n + j] - mean_g - y[r * n + j] * mean_gy);
          }
        }
      });
}

Var softmax(Var x, int axis) {
  const Tensor& xv = x.value();
  const std::size_t ax = normalize_axis(axis, xv.rank());
  const AxisView v = axis_view(xv.shape(), ax);
  Tensor out(xv.shape());
  const auto in = xv.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.length * v.inner + i;
      double mx = in[base];
      for (std::size_t l = 1; l < v.length; ++l) mx = std::max(mx, in[base + l * v.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < v.length; ++l) {
        const double e = std::exp(in[base + l * v.inner] - mx);
        ov[base + l * v.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < v.length; ++l) ov[base + l * v.inner] /= total;
    }
  }
  const int idx = x.id();
  return x.graph().record(OpKind::kSoftmax, {idx}, std::move(out), [idx, v](Graph& gr, int self) {
    const auto up = gr.upstream(self);
    const auto y = gr.value(self).values();
    auto gx = gr.accumulator(idx);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.length * v.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < v.length; ++l) {
          dot += up[base + l * v.inner] * y[base + l * v.inner];
        }
        for (std::size_t l = 0; l < v.length; ++l) {
          const std::size_t at = base + l * v.inner;
          gx[at] += y[at] * (up[at] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var x, int axis) {
  const Tensor& xv = x.value();
  const std::size_t ax = normalize_axis(axis, xv.rank());
  const AxisView v = axis_view(xv.shape(), ax);
  Tensor out(xv.shape());
  const auto in = xv.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.length * v.inner + i;
      double mx = in[base];
      for (std::size_t l = 1; l < v.length; ++l) mx = std::max(mx, in[base + l * v.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < v.length; ++l) total += std::exp(in[base + l * v.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t l = 0; l < v.length; ++l) {
        ov[base + l * v.inner] = in[base + l * v.inner] - lse;
      }
    }
  }
  const int idx = x.id();
  return x.graph().record(
      OpKind::kLogSoftmax, {idx}, std::move(out), [idx, v](Graph& gr, int self) {
        const auto up = gr.upstream(self);
        const auto y = gr.value(self).values();
        auto gx = gr.accumulator(idx);
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.length * v.inner + i;
            double total = 0.0;
            for (std::size_t l = 0; l < v.length; ++l) total += up[base + l * v.inner];
            for (std::size_t l = 0; l < v.length; ++l) {
              const std::size_t at = base + l * v.inner;
              gx[at] += up[at] - std::exp(y[at]) * total;
            }
          }
        }
      });
}

Var mean(Var x, int axis) {
  const Tensor& xv = x.value();
  const std::size_t ax = normalize_axis(axis, xv.rank());
  const AxisView v = axis_view(xv.shape(), ax);
  Shape out_shape = xv.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  Tensor out(out_shape);
  const auto in = xv.values();
  auto ov = out.values();
  const double inv = 1.0 / static_cast<double>(v.length);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      double total = 0.0;
      for (std::size_t l = 0; l < v.length; ++l) total += in[(o * v.length + l) * v.inner + i];
      ov[o * v.inner + i] = total * inv;
    }
  }
  FlopCounter::add(xv.numel());
  const int idx = x.id();
  return x.graph().record(OpKind::kMean, {idx}, std::move(out), [idx, v, inv](Graph& gr, int self) {
    const auto up = gr.upstream(self);
    auto gx = gr.accumulator(idx);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t l = 0; l < v.length; ++l)
        for (std::size_t i = 0; i < v.inner; ++i)
          gx[(o * v.length + l) * v.inner + i] += up[o * v.inner + i] * inv;
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const int idx = x.id();
  return x.graph().record(OpKind::kSum, {idx}, Tensor::scalar(total), [idx](Graph& gr, int self) {
    const double up = gr.upstream(self)[0];
    for (auto& g : gr.accumulator(idx)) g += up;
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  require_matrix(xv, "slice_cols");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_str(xv.shape()));
  }
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = xv.at(i, begin + j);
  const int idx = x.id();
  return x.graph().record(OpKind::kSliceCols, {idx}, std::move(out),
                          [idx, m, n, begin, count](Graph& gr, int self) {
                            const auto up = gr.upstream(self);
                            auto gx = gr.accumulator(idx);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < count; ++j)
                                gx[i * n + begin + j] += up[i * count + j];
                          });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  Graph& g = parts.front().graph();
  const std::size_t m = parts.front().value().rows();
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (&p.graph() != &g) throw ContractError("concat_cols: operands from different graphs");
    const Tensor& pv = p.value();
    require_matrix(pv, "concat_cols");
    if (pv.rows() != m) throw DimensionError("concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(pv.cols());
    total += pv.cols();
  }
  Tensor out({m, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, offset + j) = pv.at(i, j);
    offset += widths[k];
  }
  return g.record(OpKind::kConcatCols, ids, std::move(out),
                  [ids, widths, m, total](Graph& gr, int self) {
                    const auto up = gr.upstream(self);
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      auto gp = gr.accumulator(ids[k]);
                      if (!gp.empty()) {
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < widths[k]; ++j)
                            gp[i * widths[k] + j] += up[i * total + off + j];
                      }
                      off += widths[k];
                    }
                  });
}

Var group_mean_rows(Var x, std::size_t group) {
  const Tensor& xv = x.value();
  require_matrix(xv, "group_mean_rows");
  if (group == 0) throw DimensionError("group_mean_rows: group size must be positive");
  const std::size_t rows = xv.rows(), n = xv.cols();
  const std::size_t out_rows = (rows + group - 1) / group;
  Tensor out({out_rows, n});
  for (std::size_t g = 0; g < out_rows; ++g) {
    const std::size_t lo = g * group, hi = std::min(rows, lo + group);
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t r = lo; r < hi; ++r)
      for (std::size_t j = 0; j < n; ++j) out.at(g, j) += xv.at(r, j);
    for (std::size_t j = 0; j < n; ++j) out.at(g, j) *= inv;
  }
  FlopCounter::add(xv.numel());
  const int idx = x.id();
  return x.graph().record(OpKind::kGroupMeanRows, {idx}, std::move(out),
                          [idx, rows, n, group](Graph& gr, int self) {
                            const auto up = gr.upstream(self);
                            auto gx = gr.accumulator(idx);
                            for (std::size_t r = 0; r < rows; ++r) {
                              const std::size_t g = r / group;
                              const std::size_t lo = g * group;
                              const std::size_t hi = std::min(rows, lo + group);
                              const double inv = 1.0 / static_cast<double>(hi - lo);
                              for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += up[g * n + j] * inv;
                            }
                          });
}

Var cross_entropy(Var logits, const Tensor& target) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "cross_entropy");
  if (target.shape() != lv.shape()) {
    throw DimensionError("cross_entropy: target " + shape_str(target.shape()) +
                         " does not match logits " + shape_str(lv.shape()));
  }
  for (double t : target.values()) {
    if (t < 0.0 || !std::isfinite(t)) {
      throw ContractError("cross_entropy: target weights must be finite and non-negative");
    }
  }
  const std::size_t n = lv.rows(), c = lv.cols();
  auto probs = std::make_shared<std::vector<double>>(n * c);
  auto row_mass = std::make_shared<std::vector<double>>(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = lv.values().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    double mass = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = target.at(i, j);
      (*probs)[i * c + j] = std::exp(row[j] - lse);
      if (t != 0.0) loss -= t * (row[j] - lse);
      mass += t;
    }
    (*row_mass)[i] = mass;
  }
  loss /= static_cast<double>(n);
  const int idl = logits.id();
  return logits.graph().record(
      OpKind::kCrossEntropy, {idl}, Tensor::scalar(loss),
      [idl, n, c, probs, row_mass, target](Graph& gr, int self) {
        const double up = gr.upstream(self)[0] / static_cast<double>(n);
        auto gl = gr.accumulator(idl);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j)
            gl[i * c + j] += up * ((*probs)[i * c + j] * (*row_mass)[i] - target.at(i, j));
      });
}

Var bce_with_logits(Var logits, const Tensor& target) {
  const Tensor& lv = logits.value();
  if (target.shape() != lv.shape()) {
    throw DimensionError("bce_with_logits: target " + shape_str(target.shape()) +
                         " does not match logits " + shape_str(lv.shape()));
  }
  const auto x = lv.values();
  const auto y = target.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    loss += std::max(x[i], 0.0) - x[i] * y[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  const double count = static_cast<double>(x.size());
  loss /= count;
  const int idl = logits.id();
  return logits.graph().record(OpKind::kBceWithLogits, {idl}, Tensor::scalar(loss),
                               [idl, target, count](Graph& gr, int self) {
                                 const double up = gr.upstream(self)[0] / count;
                                 const auto xs = gr.value(idl).values();
                                 const auto ys = target.values();
                                 auto gl = gr.accumulator(idl);
                                 for (std::size_t i = 0; i < xs.size(); ++i) {
                                   const double sig = 1.0 / (1.0 + std::exp(-xs[i]));
                                   gl[i] += up * (sig - ys[i]);
                                 }
                               });
}

}  // namespace ecoenc::ad
