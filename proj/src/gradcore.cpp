// SPDX-License-Identifier: Apache-2.0
#include "rlbind/gradcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rlbind/error.hpp"

namespace rlbind::grad {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local Graph* g_active_graph = nullptr;

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) +
                   " and " + shape_string(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": " + why + " (got " + shape_string(a) + ")");
}

// Builds the output node, checks finiteness, and records it if needed.
Tensor emit(const char* op, Shape shape, std::vector<double> values,
            std::vector<NodePtr> inputs, Graph::BackwardFn fn) {
  if (!all_finite(values)) {
    throw NonFiniteError(std::string(op) + ": non-finite value in output");
  }
  Tensor out(std::move(shape), std::move(values));
  Graph* graph = Graph::active();
  if (graph == nullptr) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const NodePtr& n) { return n->requires_grad; });
  if (!needs) return out;
  out.set_requires_grad(true);
  graph->record(op, std::move(inputs), out.shared_node(), std::move(fn));
  return out;
}

// Row-wise view of a rank-1 or rank-2 tensor: (rows, width).
std::pair<std::size_t, std::size_t> row_view(const char* op, const Tensor& a) {
  if (a.rank() == 1) return {1, a.shape()[0]};
  if (a.rank() == 2) return {a.shape()[0], a.shape()[1]};
  shape_fail(op, a.shape(), "expected a vector or matrix");
}

enum class Broadcast { kSame, kScalarA, kScalarB, kRowB };

Broadcast broadcast_mode(const char* op, const Tensor& a, const Tensor& b, bool allow_row) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kScalarB;
  if (a.numel() == 1) return Broadcast::kScalarA;
  if (allow_row && a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0]) {
    return Broadcast::kRowB;
  }
  shape_fail(op, a.shape(), b.shape());
}

// Index of b paired with output element i under the broadcast mode.
inline std::size_t b_index(Broadcast mode, std::size_t i, std::size_t width) {
  switch (mode) {
    case Broadcast::kSame: return i;
    case Broadcast::kScalarB: return 0;
    case Broadcast::kScalarA: return i;
    case Broadcast::kRowB: return i % width;
  }
  return i;
}

template <class Fwd, class Da, class Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, bool allow_row, Fwd fwd,
              Da da, Db db) {
  const Broadcast mode = broadcast_mode(op, a, b, allow_row);
  const Shape out_shape = mode == Broadcast::kScalarA ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  const std::size_t width = out_shape.empty() ? 1 : out_shape.back();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = mode == Broadcast::kScalarA ? av[0] : av[i];
    out[i] = fwd(x, bv[b_index(mode, i, width)]);
  }
  Node* an = a.node();
  Node* bn = b.node();
  return emit(op, out_shape, std::move(out), {a.shared_node(), b.shared_node()},
              [an, bn, mode, n, width, da, db](const Node& o) {
                for (std::size_t i = 0; i < n; ++i) {
                  const std::size_t ia = mode == Broadcast::kScalarA ? 0 : i;
                  const std::size_t ib = b_index(mode, i, width);
                  const double x = an->value[ia];
                  const double y = bn->value[ib];
                  if (an->requires_grad) an->grad[ia] += o.grad[i] * da(x, y);
                  if (bn->requires_grad) bn->grad[ib] += o.grad[i] * db(x, y);
                }
              });
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  Node* an = a.node();
  return emit(op, a.shape(), std::move(out), {a.shared_node()}, [an, deriv](const Node& o) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < o.value.size(); ++i) {
      an->grad[i] += o.grad[i] * deriv(an->value[i], o.value[i]);
    }
  });
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({}, {v}, requires_grad); }

Tensor Tensor::vector(std::vector<double> v, bool requires_grad) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(v), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows: expected a matrix, got " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols: expected a matrix, got " + shape_string(shape()));
  return shape()[1];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor is not a scalar " + shape_string(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

// ---- Graph ----------------------------------------------------------------

Graph* Graph::active() { return g_active_graph; }

GraphScope::GraphScope(Graph& graph) : previous_(g_active_graph) { g_active_graph = &graph; }
GraphScope::~GraphScope() { g_active_graph = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_active_graph) { g_active_graph = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_graph = previous_; }

void Graph::record(const char* op, std::vector<NodePtr> inputs, NodePtr output, BackwardFn fn) {
  if (consumed_) throw GraphError(std::string(op) + ": recording onto a consumed graph");
  entries_.push_back({op, std::move(inputs), std::move(output), std::move(fn)});
}

std::vector<std::string> Graph::recorded_ops() const {
  std::vector<std::string> ops;
  ops.reserve(entries_.size());
  for (const auto& e : entries_) ops.emplace_back(e.op);
  return ops;
}

void Graph::backward(const Tensor& loss) {
  if (consumed_) throw GraphError("backward: graph already consumed; re-record before calling again");
  if (loss.numel() != 1) {
    throw GraphError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw GraphError("backward: loss is detached from any recorded graph");
  }
  consumed_ = true;
  auto reset = [](Node& n) {
    if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
  };
  for (auto& e : entries_) {
    for (auto& in : e.inputs) reset(*in);
    reset(*e.output);
  }
  Node& root = *loss.node();
  root.grad.assign(1, 1.0);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward(*it->output);
  }
}

double value_and_grad(const std::function<Tensor()>& fn) {
  Graph graph;
  GraphScope scope(graph);
  Tensor loss = fn();
  graph.backward(loss);
  return loss.item();
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || a.rank() > 2 || b.rank() < 1 || b.rank() > 2 ||
      (a.rank() == 1 && b.rank() == 1)) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.rank() == 2 ? a.shape()[0] : 1;
  const std::size_t k = a.shape().back();
  const std::size_t kb = b.shape()[0];
  const std::size_t n = b.rank() == 2 ? b.shape()[1] : 1;
  if (k != kb) shape_fail("matmul", a.shape(), b.shape());
  Shape out_shape;
  if (a.rank() == 2) out_shape.push_back(m);
  if (b.rank() == 2) out_shape.push_back(n);

  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  Node* an = a.node();
  Node* bn = b.node();
  return emit("matmul", std::move(out_shape), std::move(out), {a.shared_node(), b.shared_node()},
              [an, bn, m, k, n](const Node& o) {
                const auto& g = o.grad;
                if (an->requires_grad) {
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                      double acc = 0.0;
                      const double* brow = &bn->value[p * n];
                      const double* grow = &g[i * n];
                      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                      an->grad[i * k + p] += acc;
                    }
                  }
                }
                if (bn->requires_grad) {
                  for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = &g[i * n];
                    for (std::size_t p = 0; p < k; ++p) {
                      const double x = an->value[i * k + p];
                      double* bg = &bn->grad[p * n];
                      for (std::size_t j = 0; j < n; ++j) bg[j] += x * grow[j];
                    }
                  }
                }
              });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) shape_fail("transpose", a.shape(), "expected a matrix");
  const std::size_t r = a.shape()[0];
  const std::size_t c = a.shape()[1];
  const auto av = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  Node* an = a.node();
  return emit("transpose", {c, r}, std::move(out), {a.shared_node()}, [an, r, c](const Node& o) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += o.grad[j * r + i];
  });
}

namespace {

Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* b) {
  if (w.rank() != 2 || x.rank() < 1 || x.rank() > 2 || x.shape().back() != w.shape()[1]) {
    shape_fail("linear", x.shape(), w.shape());
  }
  const std::size_t out_dim = w.shape()[0];
  const std::size_t in_dim = w.shape()[1];
  if (b != nullptr && (b->rank() != 1 || b->shape()[0] != out_dim)) {
    shape_fail("linear", w.shape(), b->shape());
  }
  const std::size_t rows = x.rank() == 2 ? x.shape()[0] : 1;
  Shape out_shape = x.rank() == 2 ? Shape{rows, out_dim} : Shape{out_dim};
  const auto xv = x.values();
  const auto wv = w.values();
  std::vector<double> out(rows * out_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * in_dim];
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = &wv[o * in_dim];
      double acc = 0.0;
      for (std::size_t i = 0; i < in_dim; ++i) acc += xr[i] * wr[i];
      out[r * out_dim + o] = b != nullptr ? acc + b->values()[o] : acc;
    }
  }
  Node* xn = x.node();
  Node* wn = w.node();
  Node* bn = b != nullptr ? b->node() : nullptr;
  std::vector<NodePtr> inputs{x.shared_node(), w.shared_node()};
  if (b != nullptr) inputs.push_back(b->shared_node());
  return emit("linear", std::move(out_shape), std::move(out), std::move(inputs),
              [xn, wn, bn, rows, in_dim, out_dim](const Node& o) {
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* g = &o.grad[r * out_dim];
                  const double* xr = &xn->value[r * in_dim];
                  for (std::size_t k = 0; k < out_dim; ++k) {
                    const double gk = g[k];
                    if (gk == 0.0) continue;
                    if (xn->requires_grad) {
                      const double* wr = &wn->value[k * in_dim];
                      double* xg = &xn->grad[r * in_dim];
                      for (std::size_t i = 0; i < in_dim; ++i) xg[i] += gk * wr[i];
                    }
                    if (wn->requires_grad) {
                      double* wg = &wn->grad[k * in_dim];
                      for (std::size_t i = 0; i < in_dim; ++i) wg[i] += gk * xr[i];
                    }
                    if (bn != nullptr && bn->requires_grad) bn->grad[k] += gk;
                  }
                }
              });
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w) { return linear_impl(x, w, nullptr); }
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return linear_impl(x, w, &b); }

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, true, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, true, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, false, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor shift(const Tensor& a, double c) {
  return unary(
      "shift", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor power(const Tensor& a, double p) {
  return unary(
      "power", a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor sign(const Tensor& a) {
  return unary(
      "sign", a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); },
      [](double, double) { return 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw ArgumentError("clamp: lower bound exceeds upper bound");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  Node* an = a.node();
  return emit("sum", {}, {s}, {a.shared_node()}, [an](const Node& o) {
    if (!an->requires_grad) return;
    for (double& g : an->grad) g += o.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  const double n = static_cast<double>(a.numel());
  Node* an = a.node();
  return emit("mean", {}, {s / n}, {a.shared_node()}, [an, n](const Node& o) {
    if (!an->requires_grad) return;
    for (double& g : an->grad) g += o.grad[0] / n;
  });
}

Tensor softmax(const Tensor& a) {
  const auto [rows, width] = row_view("softmax", a);
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * width];
    double* y = &out[r * width];
    const double mx = *std::max_element(x, x + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < width; ++j) y[j] /= z;
  }
  Node* an = a.node();
  return emit("softmax", a.shape(), std::move(out), {a.shared_node()},
              [an, rows, width](const Node& o) {
                if (!an->requires_grad) return;
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* y = &o.value[r * width];
                  const double* g = &o.grad[r * width];
                  double yg = 0.0;
                  for (std::size_t j = 0; j < width; ++j) yg += y[j] * g[j];
                  for (std::size_t j = 0; j < width; ++j) an->grad[r * width + j] += y[j] * (g[j] - yg);
                }
              });
}

Tensor log_softmax(const Tensor& a) {
  const auto [rows, width] = row_view("log_softmax", a);
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * width];
    const double mx = *std::max_element(x, x + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = x[j] - lse;
  }
  Node* an = a.node();
  return emit("log_softmax", a.shape(), std::move(out), {a.shared_node()},
              [an, rows, width](const Node& o) {
                if (!an->requires_grad) return;
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* y = &o.value[r * width];
                  const double* g = &o.grad[r * width];
                  double gs = 0.0;
                  for (std::size_t j = 0; j < width; ++j) gs += g[j];
                  for (std::size_t j = 0; j < width; ++j) {
                    an->grad[r * width + j] += g[j] - std::exp(y[j]) * gs;
                  }
                }
              });
}

Tensor l2_norm(const Tensor& a) {
  const auto [rows, width] = row_view("l2_norm", a);
  const auto av = a.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += av[r * width + j] * av[r * width + j];
    out[r] = std::sqrt(s);
  }
  Shape shape = a.rank() == 1 ? Shape{} : Shape{rows};
  Node* an = a.node();
  return emit("l2_norm", std::move(shape), std::move(out), {a.shared_node()},
              [an, rows, width](const Node& o) {
                if (!an->requires_grad) return;
                for (std::size_t r = 0; r < rows; ++r) {
                  const double nrm = o.value[r];
                  if (nrm == 0.0) continue;  // subgradient 0 at the origin
                  const double k = o.grad[r] / nrm;
                  for (std::size_t j = 0; j < width; ++j) {
                    an->grad[r * width + j] += k * an->value[r * width + j];
                  }
                }
              });
}

Tensor l2_normalize(const Tensor& a) {
  const auto [rows, width] = row_view("l2_normalize", a);
  const auto av = a.values();
  std::vector<double> out(av.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += av[r * width + j] * av[r * width + j];
    norms[r] = std::sqrt(s);
    if (!(norms[r] > kNormTolerance)) {
      throw DegenerateError("l2_normalize: vector norm " + std::to_string(norms[r]) +
                            " is at or below tolerance");
    }
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = av[r * width + j] / norms[r];
  }
  Node* an = a.node();
  return emit("l2_normalize", a.shape(), std::move(out), {a.shared_node()},
              [an, rows, width, norms = std::move(norms)](const Node& o) {
                if (!an->requires_grad) return;
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* y = &o.value[r * width];
                  const double* g = &o.grad[r * width];
                  double yg = 0.0;
                  for (std::size_t j = 0; j < width; ++j) yg += y[j] * g[j];
                  for (std::size_t j = 0; j < width; ++j) {
                    an->grad[r * width + j] += (g[j] - y[j] * yg) / norms[r];
                  }
                }
              });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<double> out;
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    if (p.rank() > 1) shape_fail("concat", p.shape(), "expected scalars or vectors");
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
    inputs.push_back(p.shared_node());
  }
  const std::size_t n = out.size();
  std::vector<Node*> raw;
  for (auto& in : inputs) raw.push_back(in.get());
  return emit("concat", {n}, std::move(out), std::move(inputs),
              [raw = std::move(raw), offsets = std::move(offsets)](const Node& o) {
                for (std::size_t k = 0; k < raw.size(); ++k) {
                  Node* in = raw[k];
                  if (!in->requires_grad) continue;
                  for (std::size_t j = 0; j < in->value.size(); ++j) in->grad[j] += o.grad[offsets[k] + j];
                }
              });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || a.rank() > 2) shape_fail("slice", a.shape(), "expected a vector or matrix");
  const std::size_t extent = a.shape()[0];
  if (begin >= end || end > extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for " + shape_string(a.shape()));
  }
  const std::size_t width = a.rank() == 2 ? a.shape()[1] : 1;
  Shape shape = a.shape();
  shape[0] = end - begin;
  const auto av = a.values();
  std::vector<double> out(av.begin() + begin * width, av.begin() + end * width);
  Node* an = a.node();
  const std::size_t off = begin * width;
  return emit("slice", std::move(shape), std::move(out), {a.shared_node()}, [an, off](const Node& o) {
    if (!an->requires_grad) return;
    for (std::size_t j = 0; j < o.grad.size(); ++j) an->grad[off + j] += o.grad[j];
  });
}

Tensor element(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.numel()) {
    throw ShapeError("element: index " + std::to_string(flat_index) + " out of bounds for " +
                     shape_string(a.shape()));
  }
  Node* an = a.node();
  return emit("element", {}, {a.values()[flat_index]}, {a.shared_node()},
              [an, flat_index](const Node& o) {
                if (an->requires_grad) an->grad[flat_index] += o.grad[0];
              });
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& flat_indices) {
  if (flat_indices.empty()) throw ShapeError("gather: empty index list");
  std::vector<double> out;
  out.reserve(flat_indices.size());
  for (std::size_t i : flat_indices) {
    if (i >= a.numel()) {
      throw ShapeError("gather: index " + std::to_string(i) + " out of bounds for " +
                       shape_string(a.shape()));
    }
    out.push_back(a.values()[i]);
  }
  Node* an = a.node();
  return emit("gather", {flat_indices.size()}, std::move(out), {a.shared_node()},
              [an, idx = flat_indices](const Node& o) {
                if (!an->requires_grad) return;
                for (std::size_t j = 0; j < idx.size(); ++j) an->grad[idx[j]] += o.grad[j];
              });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) shape_fail("dot", a.shape(), b.shape());
  const auto av = a.values();
  const auto bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  Node* an = a.node();
  Node* bn = b.node();
  return emit("dot", {}, {s}, {a.shared_node(), b.shared_node()}, [an, bn](const Node& o) {
    const double g = o.grad[0];
    for (std::size_t i = 0; i < an->value.size(); ++i) {
      if (an->requires_grad) an->grad[i] += g * bn->value[i];
      if (bn->requires_grad) bn->grad[i] += g * an->value[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  Node* an = a.node();
  return emit("reshape", std::move(shape), a.to_vector(), {a.shared_node()}, [an](const Node& o) {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("maximum", a.shape(), b.shape());
  return binary(
      "maximum", a, b, false, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

}  // namespace rlbind::grad
