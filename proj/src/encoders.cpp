// SPDX-License-Identifier: Apache-2.0
#include "rlbind/encoders.hpp"

#include <cmath>

#include "rlbind/error.hpp"
#include "rlbind/rng.hpp"

namespace rlbind {

namespace {

Tensor uniform_tensor(grad::Shape shape, double bound, Rng& rng, bool requires_grad) {
  const std::size_t n = grad::shape_numel(shape);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor frozen_copy(const Tensor& t) { return t.detach(); }

}  // namespace

Encoder::Encoder(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ArgumentError("encoder: needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.shape()[0] != l.out_dim()) {
      throw ShapeError("encoder: layer " + std::to_string(i) + " weight " +
                       grad::shape_string(l.weight.shape()) + " does not match bias " +
                       grad::shape_string(l.bias.shape()));
    }
    if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
      throw ShapeError("encoder: layer " + std::to_string(i) + " expects input " +
                       std::to_string(l.in_dim()) + " but previous layer emits " +
                       std::to_string(layers_[i - 1].out_dim()));
    }
    if (l.adapter) {
      const auto& ad = *l.adapter;
      if (ad.a.shape() != grad::Shape{ad.rank, l.in_dim()} ||
          ad.b.shape() != grad::Shape{l.out_dim(), ad.rank}) {
        throw ShapeError("encoder: adapter factors of layer " + std::to_string(i) +
                         " do not match rank " + std::to_string(ad.rank));
      }
    }
  }
  if (layers_.back().activation != Activation::kNone) {
    throw ArgumentError("encoder: final layer must have no activation");
  }
}

Encoder Encoder::random(const EncoderGeometry& geometry, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> dims{geometry.input_dim};
  dims.insert(dims.end(), geometry.hidden.begin(), geometry.hidden.end());
  dims.push_back(geometry.embed_dim);
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    Layer l;
    l.weight = uniform_tensor({dims[i + 1], dims[i]}, bound, rng, true);
    l.bias = uniform_tensor({dims[i + 1]}, bound, rng, true);
    l.activation = i + 2 < dims.size() ? Activation::kRelu : Activation::kNone;
    layers.push_back(std::move(l));
  }
  return Encoder(std::move(layers));
}

Tensor Encoder::forward(const Tensor& x) const {
  if (x.shape().back() != input_dim() || x.rank() > 2) {
    throw ShapeError("encode: input " + grad::shape_string(x.shape()) +
                     " does not match encoder input_dim " + std::to_string(input_dim()));
  }
  Tensor h = x;
  for (const Layer& l : layers_) {
    Tensor y = grad::linear(h, l.weight, l.bias);
    if (l.adapter) {
      y = grad::add(y, grad::linear(grad::linear(h, l.adapter->a), l.adapter->b));
    }
    h = l.activation == Activation::kRelu ? grad::relu(y) : y;
  }
  return h;
}

std::vector<double> Encoder::encode(std::span<const double> x) const {
  return forward(Tensor::vector({x.begin(), x.end()})).to_vector();
}

std::vector<Tensor> Encoder::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const Layer& l : layers_) {
    for (const Tensor* t : {&l.weight, &l.bias}) {
      if (t->requires_grad()) out.push_back(*t);
    }
    if (l.adapter) {
      if (l.adapter->a.requires_grad()) out.push_back(l.adapter->a);
      if (l.adapter->b.requires_grad()) out.push_back(l.adapter->b);
    }
  }
  return out;
}

std::size_t Encoder::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : trainable_parameters()) n += t.numel();
  return n;
}

bool Encoder::has_adapters() const { return layers_.front().adapter.has_value(); }

std::size_t Encoder::adapter_rank() const {
  return has_adapters() ? layers_.front().adapter->rank : 0;
}

Encoder Encoder::snapshot_frozen() const {
  std::vector<Layer> layers;
  for (const Layer& l : layers_) {
    Layer c;
    c.weight = frozen_copy(l.weight);
    c.bias = frozen_copy(l.bias);
    c.activation = l.activation;
    if (l.adapter) c.adapter = LowRankAdapter{frozen_copy(l.adapter->a), frozen_copy(l.adapter->b), l.adapter->rank};
    layers.push_back(std::move(c));
  }
  return Encoder(std::move(layers));
}

Encoder Encoder::clone() const {
  std::vector<Layer> layers;
  for (const Layer& l : layers_) {
    Layer c{l.weight.clone(), l.bias.clone(), l.activation, std::nullopt};
    if (l.adapter) c.adapter = LowRankAdapter{l.adapter->a.clone(), l.adapter->b.clone(), l.adapter->rank};
    layers.push_back(std::move(c));
  }
  return Encoder(std::move(layers));
}

Encoder Encoder::attach_lora(std::size_t rank, std::uint64_t seed) const {
  if (has_adapters()) throw ArgumentError("attach_lora: encoder already carries adapters");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (rank < 1 || rank >= std::min(l.in_dim(), l.out_dim())) {
      throw ArgumentError("attach_lora: rank " + std::to_string(rank) +
                          " invalid for layer " + std::to_string(i) + " (" +
                          std::to_string(l.out_dim()) + "x" + std::to_string(l.in_dim()) +
                          "); need 1 <= r < min(d_in, d_out)");
    }
  }
  Rng rng(seed);
  std::vector<Layer> layers;
  for (const Layer& l : layers_) {
    Layer c;
    c.weight = frozen_copy(l.weight);
    c.bias = Tensor(l.bias.shape(), l.bias.to_vector(), true);
    c.activation = l.activation;
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim()));
    c.adapter = LowRankAdapter{uniform_tensor({rank, l.in_dim()}, bound, rng, true),
                               Tensor::zeros({l.out_dim(), rank}, true), rank};
    layers.push_back(std::move(c));
  }
  return Encoder(std::move(layers));
}

std::vector<std::pair<std::string, Tensor>> Encoder::named_tensors(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = prefix + "layer" + std::to_string(i) + ".";
    out.emplace_back(p + "weight", layers_[i].weight);
    out.emplace_back(p + "bias", layers_[i].bias);
    if (layers_[i].adapter) {
      out.emplace_back(p + "lora_a", layers_[i].adapter->a);
      out.emplace_back(p + "lora_b", layers_[i].adapter->b);
    }
  }
  return out;
}

// ---- anchors ----------------------------------------------------------------

AnchorMatrix::AnchorMatrix(Tensor columns, std::vector<std::string> class_names)
    : matrix_(columns.detach()), names_(std::move(class_names)) {
  if (matrix_.rank() != 2) throw ShapeError("anchors: expected a d x C matrix");
  if (num_classes() < 2) {
    throw ArgumentError("anchors: need at least 2 classes, got " + std::to_string(num_classes()));
  }
  if (names_.size() != num_classes()) {
    throw ArgumentError("anchors: " + std::to_string(names_.size()) + " names for " +
                        std::to_string(num_classes()) + " classes");
  }
  for (std::size_t c = 0; c < num_classes(); ++c) {
    double s = 0.0;
    for (double v : column(c)) s += v * v;
    if (std::fabs(std::sqrt(s) - 1.0) > 1e-9) {
      throw ArgumentError("anchors: column " + std::to_string(c) + " is not unit norm");
    }
  }
}

std::vector<double> AnchorMatrix::column(std::size_t c) const {
  const std::size_t d = dim();
  const std::size_t n = num_classes();
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = matrix_.values()[i * n + c];
  return out;
}

Tensor AnchorMatrix::column_tensor(std::size_t c) const { return Tensor::vector(column(c)); }

Tensor AnchorMatrix::rows_tensor() const { return grad::transpose(matrix_).detach(); }

AnchorMatrix build_anchor_matrix(std::uint64_t seed, std::size_t num_classes, std::size_t dim,
                                 const AnchorOptions& options) {
  if (num_classes < 2 || dim < 2) {
    throw ArgumentError("build_anchor_matrix: need C >= 2 and d >= 2");
  }
  if (options.orthogonal && num_classes > dim) {
    throw ArgumentError("build_anchor_matrix: orthogonal anchors need C <= d");
  }
  Rng rng(seed);
  std::vector<std::vector<double>> cols;
  int attempts = 0;
  while (cols.size() < num_classes) {
    if (++attempts > options.max_attempts) {
      throw ArgumentError("build_anchor_matrix: could not place " + std::to_string(num_classes) +
                          " anchors with pairwise cosine <= " + std::to_string(options.max_cosine) +
                          " in d=" + std::to_string(dim) + " after " +
                          std::to_string(options.max_attempts) + " attempts; raise d or lower C");
    }
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    if (options.orthogonal) {
      // Two passes of Gram-Schmidt for numerical orthogonality.
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& c : cols) {
          double p = 0.0;
          for (std::size_t i = 0; i < dim; ++i) p += v[i] * c[i];
          for (std::size_t i = 0; i < dim; ++i) v[i] -= p * c[i];
        }
      }
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    bool ok = true;
    for (const auto& c : cols) {
      double p = 0.0;
      for (std::size_t i = 0; i < dim; ++i) p += v[i] * c[i];
      if (p > options.max_cosine) {
        ok = false;
        break;
      }
    }
    if (ok) cols.push_back(std::move(v));
  }
  std::vector<double> data(dim * num_classes);
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t i = 0; i < dim; ++i) data[i * num_classes + c] = cols[c][i];
  std::vector<std::string> names;
  for (std::size_t c = 0; c < num_classes; ++c) names.push_back("class" + std::to_string(c));
  return AnchorMatrix(Tensor::matrix(dim, num_classes, std::move(data)), std::move(names));
}

}  // namespace rlbind
