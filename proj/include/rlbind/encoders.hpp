// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rlbind/gradcore.hpp"

namespace rlbind {

using grad::Tensor;

enum class Activation { kRelu, kNone };

// Trainable rank-r delta on a frozen base weight: W_eff = W + B·A.
struct LowRankAdapter {
  Tensor a;  // r × d_in
  Tensor b;  // d_out × r
  std::size_t rank = 0;
};

struct Layer {
  Tensor weight;  // d_out × d_in
  Tensor bias;    // d_out
  Activation activation = Activation::kNone;
  std::optional<LowRankAdapter> adapter;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

struct EncoderGeometry {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t embed_dim = 16;
};

// Feed-forward modality encoder. Copies share parameter storage (tensors are
// handles); use clone() or snapshot_frozen() for independent copies.
class Encoder {
 public:
  explicit Encoder(std::vector<Layer> layers);

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static Encoder random(const EncoderGeometry& geometry, std::uint64_t seed);

  // x is a single input vector or a batch (rows are samples).
  Tensor forward(const Tensor& x) const;
  std::vector<double> encode(std::span<const double> x) const;

  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t embed_dim() const { return layers_.back().out_dim(); }
  const std::vector<Layer>& layers() const { return layers_; }

  std::vector<Tensor> trainable_parameters() const;
  std::size_t trainable_parameter_count() const;
  bool has_adapters() const;
  std::size_t adapter_rank() const;

  // Deep copy with every tensor detached from gradient tracking.
  Encoder snapshot_frozen() const;
  // Deep copy preserving trainability flags.
  Encoder clone() const;

  // Wraps every layer with a low-rank adapter: A ~ small uniform, B = 0, base
  // weights frozen, biases stay trainable.
  Encoder attach_lora(std::size_t rank, std::uint64_t seed) const;

  // Named tensors in a fixed order, for checkpoints. Prefix is prepended.
  std::vector<std::pair<std::string, Tensor>> named_tensors(const std::string& prefix) const;

 private:
  std::vector<Layer> layers_;
};

// Frozen per-class anchor embeddings, one unit-norm column per class.
class AnchorMatrix {
 public:
  AnchorMatrix(Tensor columns, std::vector<std::string> class_names);

  const Tensor& matrix() const { return matrix_; }  // d × C
  std::size_t dim() const { return matrix_.rows(); }
  std::size_t num_classes() const { return matrix_.cols(); }
  std::vector<double> column(std::size_t c) const;
  Tensor column_tensor(std::size_t c) const;
  // C × d copy, rows are anchors.
  Tensor rows_tensor() const;
  const std::vector<std::string>& class_names() const { return names_; }

 private:
  Tensor matrix_;
  std::vector<std::string> names_;
};

struct AnchorOptions {
  double max_cosine = 0.5;
  // Gram-Schmidt the draws into an orthonormal set; requires C <= d.
  bool orthogonal = false;
  int max_attempts = 10000;
};

AnchorMatrix build_anchor_matrix(std::uint64_t seed, std::size_t num_classes, std::size_t dim,
                                 const AnchorOptions& options = {});

}  // namespace rlbind
