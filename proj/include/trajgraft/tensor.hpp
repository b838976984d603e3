#pragma once

// Dense row-major float64 tensor with tape-based reverse-mode autodiff.
//
// Every op builds its result eagerly and, when any input requires a
// gradient, records the inputs and a backward closure on the result node.
// Node ids grow monotonically, so sorting the reachable nodes by id gives a
// topological order; `Tape::record` does exactly that and `Tape::backward`
// walks it in reverse.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trajgraft/error.hpp"

namespace trajgraft {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Adds the contribution of `grad_out` into each parent's gradient buffer.
// A null buffer marks a parent that does not require a gradient.
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> parent_grads)>;

struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<double> grad;  // persistent, leaves only
  std::vector<NodePtr> parents;
  BackwardFn backward;
  const char* op = "leaf";
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline void check_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
  }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    detail::check_finite("from", values);
    auto node = std::make_shared<detail::Node>();
    node->id = detail::next_node_id();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= rank()) throw DimensionError("axis out of range for " + shape_str(shape()));
    return node_->shape[axis];
  }

  std::span<const double> data() const { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  // Empty until the first backward pass reaches this leaf.
  std::span<const double> grad() const { return node_->grad; }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  // Direct storage access for leaves (optimizer updates, finite-difference probes).
  std::span<double> mutable_data() {
    if (!node_->leaf) throw ContractError("mutable_data() on a non-leaf tensor");
    return node_->data;
  }
  std::span<double> mutable_grad() {
    if (!node_->leaf) throw ContractError("mutable_grad() on a non-leaf tensor");
    if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
  }

  void set_requires_grad(bool value) {
    if (!node_->leaf) throw ContractError("requires_grad can only be toggled on leaves");
    node_->requires_grad = value;
  }

  // Same values, cut from the graph.
  Tensor detach() const { return from(shape(), node_->data); }

  std::uint64_t id() const { return node_->id; }
  const detail::Node& node() const { return *node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

  detail::NodePtr node_;

  friend Tensor detail::make_result(const char*, Shape, std::vector<double>, std::vector<Tensor>,
                                    detail::BackwardFn);
  friend class Tape;
};

namespace detail {

inline Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs, BackwardFn backward) {
  check_finite(op, data);
  auto node = std::make_shared<Node>();
  node->id = next_node_id();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  node->leaf = false;
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

// Ordered record of every gradient-tracking node reachable from a root.
class Tape {
 public:
  struct Entry {
    detail::NodePtr node;
    std::vector<std::ptrdiff_t> parents;  // -1: parent not tracked
  };

  static Tape record(const Tensor& root) {
    Tape tape;
    if (!root.requires_grad()) return tape;
    std::vector<detail::NodePtr> found;
    std::unordered_map<const detail::Node*, bool> seen;
    std::vector<detail::NodePtr> stack{root.node_};
    seen[root.node_.get()] = true;
    while (!stack.empty()) {
      auto node = std::move(stack.back());
      stack.pop_back();
      for (const auto& p : node->parents) {
        if (p->requires_grad && !seen[p.get()]) {
          seen[p.get()] = true;
          stack.push_back(p);
        }
      }
      found.push_back(std::move(node));
    }
    std::sort(found.begin(), found.end(),
              [](const detail::NodePtr& a, const detail::NodePtr& b) { return a->id < b->id; });
    std::unordered_map<const detail::Node*, std::ptrdiff_t> index;
    index.reserve(found.size());
    for (std::size_t i = 0; i < found.size(); ++i) index[found[i].get()] = static_cast<std::ptrdiff_t>(i);
    tape.entries_.reserve(found.size());
    for (auto& node : found) {
      Entry e;
      e.parents.reserve(node->parents.size());
      for (const auto& p : node->parents) {
        auto it = index.find(p.get());
        e.parents.push_back(it == index.end() ? -1 : it->second);
      }
      e.node = std::move(node);
      tape.entries_.push_back(std::move(e));
    }
    return tape;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Propagates `seed` (d root) back to every leaf, accumulating into leaf grads.
  void backward(std::span<const double> seed) const {
    if (entries_.empty()) return;
    const auto& root = entries_.back().node;
    if (seed.size() != root->data.size()) throw DimensionError("backward seed size mismatch");
    std::vector<std::vector<double>> buffers(entries_.size());
    auto buffer_for = [&](std::size_t i) -> std::vector<double>& {
      auto& node = *entries_[i].node;
      auto& buf = node.leaf ? node.grad : buffers[i];
      if (buf.size() != node.data.size()) buf.assign(node.data.size(), 0.0);
      return buf;
    };
    {
      auto& root_buf = buffer_for(entries_.size() - 1);
      for (std::size_t i = 0; i < seed.size(); ++i) root_buf[i] += seed[i];
    }
    std::vector<std::vector<double>*> parent_grads;
    for (std::size_t k = entries_.size(); k-- > 0;) {
      const auto& entry = entries_[k];
      const auto& node = *entry.node;
      if (node.leaf || buffers[k].empty()) continue;
      parent_grads.assign(entry.parents.size(), nullptr);
      for (std::size_t p = 0; p < entry.parents.size(); ++p) {
        if (entry.parents[p] >= 0) parent_grads[p] = &buffer_for(static_cast<std::size_t>(entry.parents[p]));
      }
      node.backward(node, buffers[k], parent_grads);
      std::vector<double>().swap(buffers[k]);
    }
  }

 private:
  std::vector<Entry> entries_;
};

// dLoss/dLeaf accumulates into every reachable leaf's grad buffer.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  const double one = 1.0;
  Tape::record(loss).backward(std::span<const double>(&one, 1));
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

// Output shape plus, for each output element, the flat index into a and b
// under numpy-style broadcasting.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  plan.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  for (std::size_t i = r, ka = 1, kb = 1; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : ka;
    sb[i] = pb[i] == 1 ? 0 : kb;
    ka *= pa[i];
    kb *= pb[i];
  }
  const std::size_t n = shape_numel(plan.out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < r; ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    plan.a_index[flat] = ia;
    plan.b_index[flat] = ib;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < plan.out[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

template <class F, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = shape_numel(plan->out);
  std::vector<double> out(n);
  const auto x = a.data();
  const auto y = b.data();
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[plan->a_index[i]], y[plan->b_index[i]]);
  }
  return make_result(
      name, plan->out, std::move(out), {a, b},
      [plan, da, db](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> pg) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        const std::size_t n = g.size();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ia = plan->same ? i : plan->a_index[i];
          const std::size_t ib = plan->same ? i : plan->b_index[i];
          if (pg[0]) (*pg[0])[ia] += g[i] * da(x[ia], y[ib], self.data[i]);
          if (pg[1]) (*pg[1])[ib] += g[i] * db(x[ia], y[ib], self.data[i]);
        }
      });
}

template <class F, class D>
Tensor unary(const char* name, const Tensor& a, F f, D d) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result(name, a.shape(), std::move(out), {a},
                     [d](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> pg) {
                       const auto& x = self.parents[0]->data;
                       auto& ga = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d(x[i], self.data[i]);
                     });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary(
      "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// max(a, floor) elementwise; no gradient where the floor is active.
inline Tensor clamp_min(const Tensor& a, double floor) {
  return detail::unary(
      "clamp_min", a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {a},
                             [](const detail::Node&, std::span<const double> g,
                                std::span<std::vector<double>* const> pg) {
                               auto& ga = *pg[0];
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             });
}

namespace detail {

// Splits a shape around `axis` into (outer, extent, inner) counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw DimensionError("axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// Swaps the last two axes (matrix transpose for rank 2, batched for rank 3+).
inline Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(a.shape()));
  Shape shape = a.shape();
  const std::size_t m = shape[shape.size() - 2], n = shape[shape.size() - 1];
  const std::size_t batch = a.numel() / (m * n == 0 ? 1 : m * n);
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = x[b * m * n + i * n + j];
    }
  }
  return detail::make_result("transpose", std::move(shape), std::move(out), {a},
                             [batch, m, n](const detail::Node&, std::span<const double> g,
                                           std::span<std::vector<double>* const> pg) {
                               auto& ga = *pg[0];
                               for (std::size_t b = 0; b < batch; ++b) {
                                 for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t j = 0; j < n; ++j) {
                                     ga[b * m * n + i * n + j] += g[b * m * n + j * m + i];
                                   }
                                 }
                               }
                             });
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = detail::split_axis(a.shape(), axis);
  if (begin > end || end > s.extent) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                         shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t len = end - begin;
  const auto x = a.data();
  std::vector<double> out;
  out.reserve(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = x.data() + (o * s.extent + begin) * s.inner;
    out.insert(out.end(), src, src + len * s.inner);
  }
  return detail::make_result("slice", std::move(shape), std::move(out), {a},
                             [s, begin, len](const detail::Node&, std::span<const double> g,
                                             std::span<std::vector<double>* const> pg) {
                               auto& ga = *pg[0];
                               for (std::size_t o = 0; o < s.outer; ++o) {
                                 const std::size_t dst = (o * s.extent + begin) * s.inner;
                                 const std::size_t src = o * len * s.inner;
                                 for (std::size_t k = 0; k < len * s.inner; ++k) ga[dst + k] += g[src + k];
                               }
                             });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw DimensionError("concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != shape.size()) throw DimensionError("concat rank mismatch");
    probe[axis] = shape[axis];
    if (probe != shape) throw DimensionError("concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(shape));
    total += p.dim(axis);
  }
  shape[axis] = total;
  const auto s = detail::split_axis(shape, axis);
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].data();
    const std::size_t len = extents[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(x.data() + o * len, len, out.data() + (o * s.extent + offset) * s.inner);
    }
    offset += extents[k];
  }
  return detail::make_result("concat", std::move(shape), std::move(out), parts,
                             [s, extents](const detail::Node&, std::span<const double> g,
                                          std::span<std::vector<double>* const> pg) {
                               std::size_t offset = 0;
                               for (std::size_t k = 0; k < extents.size(); ++k) {
                                 const std::size_t len = extents[k] * s.inner;
                                 if (pg[k]) {
                                   auto& gk = *pg[k];
                                   for (std::size_t o = 0; o < s.outer; ++o) {
                                     const double* src = g.data() + (o * s.extent + offset) * s.inner;
                                     for (std::size_t i = 0; i < len; ++i) gk[o * len + i] += src[i];
                                   }
                                 }
                                 offset += extents[k];
                               }
                             });
}

// Rows of a 2-D table selected by index (embedding lookup).
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  if (table.rank() != 2) throw DimensionError("gather_rows needs a 2-D table");
  const std::size_t cols = table.dim(1);
  std::vector<double> out;
  out.reserve(rows.size() * cols);
  for (std::size_t r : rows) {
    if (r >= table.dim(0)) throw LookupError("row " + std::to_string(r) + " outside table of " + std::to_string(table.dim(0)));
    const auto x = table.data().subspan(r * cols, cols);
    out.insert(out.end(), x.begin(), x.end());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return detail::make_result("gather_rows", {rows.size(), cols}, std::move(out), {table},
                             [idx, cols](const detail::Node&, std::span<const double> g,
                                         std::span<std::vector<double>* const> pg) {
                               auto& ga = *pg[0];
                               for (std::size_t k = 0; k < idx.size(); ++k) {
                                 for (std::size_t c = 0; c < cols; ++c) ga[idx[k] * cols + c] += g[k * cols + c];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return detail::make_result("sum", {}, {total}, {a},
                             [](const detail::Node&, std::span<const double> g,
                                std::span<std::vector<double>* const> pg) {
                               for (auto& v : *pg[0]) v += g[0];
                             });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// Sum along `axis`, keeping it as a size-1 dimension.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = 1;
  const auto x = a.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.extent + e) * s.inner + i];
  return detail::make_result("sum_axis", std::move(shape), std::move(out), {a},
                             [s](const detail::Node&, std::span<const double> g,
                                 std::span<std::vector<double>* const> pg) {
                               auto& ga = *pg[0];
                               for (std::size_t o = 0; o < s.outer; ++o)
                                 for (std::size_t e = 0; e < s.extent; ++e)
                                   for (std::size_t i = 0; i < s.inner; ++i)
                                     ga[(o * s.extent + e) * s.inner + i] += g[o * s.inner + i];
                             });
}

// Numerically stable softmax along `axis` (max subtracted first).
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -INFINITY;
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, x[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(x[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  return detail::make_result("softmax", a.shape(), std::move(out), {a},
                             [s](const detail::Node& self, std::span<const double> g,
                                 std::span<std::vector<double>* const> pg) {
                               auto& ga = *pg[0];
                               const auto& y = self.data;
                               for (std::size_t o = 0; o < s.outer; ++o) {
                                 for (std::size_t i = 0; i < s.inner; ++i) {
                                   const std::size_t base = o * s.extent * s.inner + i;
                                   double dot = 0.0;
                                   for (std::size_t e = 0; e < s.extent; ++e)
                                     dot += g[base + e * s.inner] * y[base + e * s.inner];
                                   for (std::size_t e = 0; e < s.extent; ++e) {
                                     const std::size_t k = base + e * s.inner;
                                     ga[k] += y[k] * (g[k] - dot);
                                   }
                                 }
                               }
                             });
}

// log(sum(exp(a))) along `axis`, keeping it as a size-1 dimension.
inline Tensor logsumexp(const Tensor& a, std::size_t axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = 1;
  const auto x = a.data();
  std::vector<double> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -INFINITY;
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, x[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) z += std::exp(x[base + e * s.inner] - mx);
      out[o * s.inner + i] = mx + std::log(z);
    }
  }
  return detail::make_result("logsumexp", std::move(shape), std::move(out), {a},
                             [s](const detail::Node& self, std::span<const double> g,
                                 std::span<std::vector<double>* const> pg) {
                               auto& ga = *pg[0];
                               const auto& x = self.parents[0]->data;
                               for (std::size_t o = 0; o < s.outer; ++o) {
                                 for (std::size_t i = 0; i < s.inner; ++i) {
                                   const double lse = self.data[o * s.inner + i];
                                   const double go = g[o * s.inner + i];
                                   const std::size_t base = o * s.extent * s.inner + i;
                                   for (std::size_t e = 0; e < s.extent; ++e) {
                                     const std::size_t k = base + e * s.inner;
                                     ga[k] += go * std::exp(x[k] - lse);
                                   }
                                 }
                               }
                             });
}

inline Tensor log_softmax(const Tensor& a, std::size_t axis) { return sub(a, logsumexp(a, axis)); }

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

// a[..., k] x b[k, n] -> [..., n]; leading axes of `a` are flattened.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2) {
    throw DimensionError("matmul expects a[...,k] and b[k,n], got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t k = a.shape().back();
  if (k != b.dim(0)) {
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t n = b.dim(1);
  const std::size_t m = k == 0 ? 0 : a.numel() / k;
  Shape shape = a.shape();
  shape.back() = n;
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      if (xv == 0.0) continue;
      const double* brow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * brow[j];
    }
  }
  return detail::make_result(
      "matmul", std::move(shape), std::move(out), {a, b},
      [m, k, n](const detail::Node& self, std::span<const double> g, std::span<std::vector<double>* const> pg) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        if (pg[0]) {
          auto& ga = *pg[0];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
              ga[i * k + p] += acc;
            }
        }
        if (pg[1]) {
          auto& gb = *pg[1];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = x[i * k + p];
              if (xv == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += xv * g[i * n + j];
            }
        }
      });
}

// Batched product a[B, m, k] x b[B, k, n] -> [B, m, n].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    const double* xa = x.data() + t * m * k;
    const double* yb = y.data() + t * k * n;
    double* o = out.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = xa[i * k + p];
        for (std::size_t j = 0; j < n; ++j) o[i * n + j] += xv * yb[p * n + j];
      }
  }
  return detail::make_result(
      "bmm", {batch, m, n}, std::move(out), {a, b},
      [batch, m, k, n](const detail::Node& self, std::span<const double> g,
                       std::span<std::vector<double>* const> pg) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        for (std::size_t t = 0; t < batch; ++t) {
          const double* xa = x.data() + t * m * k;
          const double* yb = y.data() + t * k * n;
          const double* go = g.data() + t * m * n;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              if (pg[0]) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * yb[p * n + j];
                (*pg[0])[t * m * k + i * k + p] += acc;
              }
              if (pg[1]) {
                const double xv = xa[i * k + p];
                for (std::size_t j = 0; j < n; ++j) (*pg[1])[t * k * n + p * n + j] += xv * go[i * n + j];
              }
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Grid sampling
// ---------------------------------------------------------------------------

namespace detail {

struct BilinearTap {
  std::size_t x0, x1, y0, y1;
  double fx, fy;
  bool clamped_x, clamped_y;
};

inline std::size_t lower_cell(double c, std::size_t extent) {
  if (extent < 2) return 0;
  return std::min(static_cast<std::size_t>(std::floor(c)), extent - 2);
}

inline BilinearTap bilinear_tap(double x, double y, std::size_t h, std::size_t w) {
  BilinearTap t{};
  const double xmax = static_cast<double>(w - 1), ymax = static_cast<double>(h - 1);
  t.clamped_x = x < 0.0 || x > xmax;
  t.clamped_y = y < 0.0 || y > ymax;
  const double xc = std::clamp(x, 0.0, xmax);
  const double yc = std::clamp(y, 0.0, ymax);
  t.x0 = lower_cell(xc, w);
  t.y0 = lower_cell(yc, h);
  t.x1 = w < 2 ? t.x0 : t.x0 + 1;
  t.y1 = h < 2 ? t.y0 : t.y0 + 1;
  t.fx = xc - static_cast<double>(t.x0);
  t.fy = yc - static_cast<double>(t.y0);
  return t;
}

}  // namespace detail

// Samples grid[h, w, d] at continuous (x, y) = (column, row) points[P, 2].
// Coordinates are clamped to the grid border. Gradients reach both the grid
// values and the point coordinates.
inline Tensor bilinear_sample(const Tensor& grid, const Tensor& points) {
  if (grid.rank() != 3 || grid.numel() == 0) throw DimensionError("bilinear_sample needs a nonempty [h,w,d] grid");
  if (points.rank() != 2 || points.dim(1) != 2) throw DimensionError("bilinear_sample needs points [P,2]");
  const std::size_t h = grid.dim(0), w = grid.dim(1), d = grid.dim(2), np = points.dim(0);
  const auto g = grid.data();
  const auto p = points.data();
  std::vector<detail::BilinearTap> taps(np);
  std::vector<double> out(np * d);
  for (std::size_t k = 0; k < np; ++k) {
    const auto t = detail::bilinear_tap(p[2 * k], p[2 * k + 1], h, w);
    taps[k] = t;
    const double* v00 = g.data() + (t.y0 * w + t.x0) * d;
    const double* v01 = g.data() + (t.y0 * w + t.x1) * d;
    const double* v10 = g.data() + (t.y1 * w + t.x0) * d;
    const double* v11 = g.data() + (t.y1 * w + t.x1) * d;
    for (std::size_t c = 0; c < d; ++c) {
      const double top = (1.0 - t.fx) * v00[c] + t.fx * v01[c];
      const double bot = (1.0 - t.fx) * v10[c] + t.fx * v11[c];
      out[k * d + c] = (1.0 - t.fy) * top + t.fy * bot;
    }
  }
  return detail::make_result(
      "bilinear_sample", {np, d}, std::move(out), {grid, points},
      [taps = std::move(taps), w, d](const detail::Node& self, std::span<const double> go,
                                     std::span<std::vector<double>* const> pg) {
        const auto& gv = self.parents[0]->data;
        for (std::size_t k = 0; k < taps.size(); ++k) {
          const auto& t = taps[k];
          const std::size_t i00 = (t.y0 * w + t.x0) * d, i01 = (t.y0 * w + t.x1) * d;
          const std::size_t i10 = (t.y1 * w + t.x0) * d, i11 = (t.y1 * w + t.x1) * d;
          const double* gk = go.data() + k * d;
          if (pg[0]) {
            auto& gg = *pg[0];
            const double w00 = (1 - t.fx) * (1 - t.fy), w01 = t.fx * (1 - t.fy);
            const double w10 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
            for (std::size_t c = 0; c < d; ++c) {
              gg[i00 + c] += w00 * gk[c];
              gg[i01 + c] += w01 * gk[c];
              gg[i10 + c] += w10 * gk[c];
              gg[i11 + c] += w11 * gk[c];
            }
          }
          if (pg[1]) {
            double dx = 0.0, dy = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double top = (1 - t.fx) * gv[i00 + c] + t.fx * gv[i01 + c];
              const double bot = (1 - t.fx) * gv[i10 + c] + t.fx * gv[i11 + c];
              const double ddx = (1 - t.fy) * (gv[i01 + c] - gv[i00 + c]) + t.fy * (gv[i11 + c] - gv[i10 + c]);
              dx += gk[c] * ddx;
              dy += gk[c] * (bot - top);
            }
            if (!t.clamped_x && t.x1 != t.x0) (*pg[1])[2 * k] += dx;
            if (!t.clamped_y && t.y1 != t.y0) (*pg[1])[2 * k + 1] += dy;
          }
        }
      });
}

// Single-point convenience form; returns [d].
inline Tensor bilinear_sample(const Tensor& grid, double x, double y) {
  return reshape(bilinear_sample(grid, Tensor::from({1, 2}, {x, y})), {grid.dim(2)});
}

// ---------------------------------------------------------------------------
// Composite helpers
// ---------------------------------------------------------------------------

// softmax(q k^T * scale) v for q[nq, d], k[nk, d], v[nk, dv].
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale_factor) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionError("attention expects 2-D q, k, v");
  if (q.dim(1) != k.dim(1)) throw DimensionError("attention: q and k feature dims differ");
  if (k.dim(0) != v.dim(0)) throw DimensionError("attention: k and v row counts differ");
  return matmul(softmax(scale(matmul(q, transpose(k)), scale_factor), 1), v);
}

// Row-wise cosine similarity matrix between a[n, d] and b[m, d] -> [n, m].
inline Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) throw DimensionError("cosine_similarity_matrix shape mismatch");
  auto norm_rows = [](const Tensor& x) {
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      double ss = 0.0;
      for (std::size_t j = 0; j < x.dim(1); ++j) ss += x[i * x.dim(1) + j] * x[i * x.dim(1) + j];
      if (ss == 0.0) throw ContractError("cosine similarity of a zero vector");
    }
    return div(x, sqrt(sum(square(x), 1)));
  };
  return matmul(norm_rows(a), transpose(norm_rows(b)));
}

}  // namespace trajgraft
