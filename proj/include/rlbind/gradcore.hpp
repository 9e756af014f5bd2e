// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations on tensors that
// require gradients are recorded on the Graph made active by a GraphScope on
// the calling thread; without an active graph every result is detached, which
// is how evaluation code runs without paying for the tape. Graph::backward()
// replays the tape in exact reverse recording order and may run only once.
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rlbind::grad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor vector(std::vector<double> v, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> v, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  // Direct write access; only meaningful on leaves (parameter updates).
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }
  std::vector<double> to_vector() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient from the most recent backward pass that reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void clear_grad() { node_->grad.clear(); }

  // New leaf sharing nothing with this tensor, requires_grad = false.
  Tensor detach() const;
  // Deep copy that keeps the requires_grad flag.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared_node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Writes d(loss)/d(leaf) into every requires_grad leaf reached by the tape.
  // Grads of all tensors touched by this tape are reset first, so the result
  // is exactly this loss's gradient.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  // Primitive names in recording order.
  std::vector<std::string> recorded_ops() const;

  using BackwardFn = std::function<void(const detail::Node& out)>;
  void record(const char* op, std::vector<std::shared_ptr<detail::Node>> inputs,
              std::shared_ptr<detail::Node> output, BackwardFn fn);

  // Graph receiving records on this thread, or nullptr.
  static Graph* active();

 private:
  friend class GraphScope;
  struct Entry {
    const char* op;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Makes a graph active for the current thread for the scope's lifetime.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

// Suspends recording on this thread for the scope's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph* previous_;
};

// Convenience: records fn() on a fresh graph and back-propagates its result.
// Returns the scalar loss value.
double value_and_grad(const std::function<Tensor()>& fn);

// ---- primitives -----------------------------------------------------------
//
// Shape rules: elementwise binaries take equal shapes, or a single-element
// operand broadcast against the other, or (add/sub only) a matrix and a row
// vector of its width. matmul accepts matrix-matrix, vector-matrix and
// matrix-vector. Row-wise reductions (softmax, log_softmax, l2_norm,
// l2_normalize) act on the last axis of a vector or matrix.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Fused affine map x·wᵀ (+ b): x is a vector or a batch of row vectors, w is
// out × in, b has length out.
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor shift(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor power(const Tensor& a, double p);
// sign(0) == 0. No gradient flows through sign.
Tensor sign(const Tensor& a);
// Gradient passes through inside [lo, hi] and is zero outside.
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor l2_norm(const Tensor& a);
// Throws DegenerateError when a norm is at or below 1e-12.
Tensor l2_normalize(const Tensor& a);
// Concatenates scalars and vectors into one vector.
Tensor concat(const std::vector<Tensor>& parts);
// Elements [begin, end) of a vector, or rows [begin, end) of a matrix.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);
// Single element of a vector or matrix (flat index) as a rank-0 tensor.
Tensor element(const Tensor& a, std::size_t flat_index);
// Flat-index gather into a vector.
Tensor gather(const Tensor& a, const std::vector<std::size_t>& flat_indices);
Tensor dot(const Tensor& a, const Tensor& b);
// Same values, new shape of equal element count.
Tensor reshape(const Tensor& a, Shape shape);
// Elementwise max of equal shapes; on ties the gradient goes to a.
Tensor maximum(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

constexpr double kNormTolerance = 1e-12;

}  // namespace rlbind::grad
