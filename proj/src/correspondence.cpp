// SPDX-License-Identifier: Apache-2.0
#include "rlbind/correspondence.hpp"

#include <cmath>

#include "rlbind/error.hpp"
#include "rlbind/rng.hpp"

namespace rlbind {

namespace g = grad;

namespace {

void require_pair(const char* op, const Tensor& e1, const Tensor& e2) {
  if (e1.rank() != 1 || e1.shape() != e2.shape()) {
    throw ShapeError(std::string(op) + ": embeddings must be equal-length vectors, got " +
                     g::shape_string(e1.shape()) + " and " + g::shape_string(e2.shape()));
  }
}

// Anchor columns rescaled to unit norm, as a d × C constant.
Tensor normalized_anchor_matrix(const AnchorMatrix& anchors) {
  const std::size_t d = anchors.dim();
  const std::size_t c = anchors.num_classes();
  std::vector<double> out(anchors.matrix().values().begin(), anchors.matrix().values().end());
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += out[i * c + j] * out[i * c + j];
    const double n = std::sqrt(s);
    for (std::size_t i = 0; i < d; ++i) out[i * c + j] /= n;
  }
  return Tensor::matrix(d, c, std::move(out));
}

}  // namespace

std::string_view scorer_name(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::kDot: return "dot";
    case ScorerKind::kScaledDot: return "scaled_dot";
    case ScorerKind::kCosine: return "cosine";
    case ScorerKind::kNormEuclid: return "norm_euclid";
    case ScorerKind::kBilinear: return "bilinear";
    case ScorerKind::kMlp: return "mlp";
  }
  return "?";
}

const std::vector<ScorerKind>& all_scorers() {
  static const std::vector<ScorerKind> kinds{ScorerKind::kDot,        ScorerKind::kScaledDot,
                                             ScorerKind::kCosine,     ScorerKind::kNormEuclid,
                                             ScorerKind::kBilinear,   ScorerKind::kMlp};
  return kinds;
}

ScorerKind parse_scorer(std::string_view name) {
  for (ScorerKind k : all_scorers()) {
    if (scorer_name(k) == name) return k;
  }
  throw ConfigError("unknown scorer '" + std::string(name) +
                    "'; accepted: dot, scaled_dot, cosine, norm_euclid, bilinear, mlp");
}

Tensor score_dot(const Tensor& e1, const Tensor& e2) {
  require_pair("score_dot", e1, e2);
  return g::dot(e1, e2);
}

Tensor score_scaled_dot(const Tensor& e1, const Tensor& e2, const Tensor& alpha) {
  require_pair("score_scaled_dot", e1, e2);
  if (alpha.numel() != 1 || !std::isfinite(alpha.item())) {
    throw ArgumentError("score_scaled_dot: alpha must be a finite scalar");
  }
  return g::mul(g::reshape(alpha, {}), g::dot(e1, e2));
}

Tensor score_cosine(const Tensor& e1, const Tensor& e2) {
  require_pair("score_cosine", e1, e2);
  return g::dot(g::l2_normalize(e1), g::l2_normalize(e2));
}

Tensor score_norm_euclid(const Tensor& e1, const Tensor& e2) {
  require_pair("score_norm_euclid", e1, e2);
  const Tensor den = g::maximum(g::l2_norm(e1), g::l2_norm(e2));
  if (!(den.item() > g::kNormTolerance)) {
    throw DegenerateError("score_norm_euclid: both embeddings are (near) zero");
  }
  const Tensor dist = g::l2_norm(g::sub(e1, e2));
  return g::shift(g::neg(g::mul(dist, g::power(den, -1.0))), 1.0);
}

Tensor score_bilinear(const Tensor& e1, const Tensor& e2, const Tensor& w) {
  require_pair("score_bilinear", e1, e2);
  if (w.shape() != g::Shape{e1.numel(), e1.numel()}) {
    throw ShapeError("score_bilinear: W must be " + std::to_string(e1.numel()) + "x" +
                     std::to_string(e1.numel()) + ", got " + g::shape_string(w.shape()));
  }
  return g::dot(e1, g::matmul(w, e2));
}

Tensor score_mlp(const Tensor& e1, const Tensor& e2, const Encoder& theta) {
  require_pair("score_mlp", e1, e2);
  if (theta.input_dim() != 2 * e1.numel() || theta.embed_dim() != 1) {
    throw ShapeError("score_mlp: network maps " + std::to_string(theta.input_dim()) + " -> " +
                     std::to_string(theta.embed_dim()) + ", need " + std::to_string(2 * e1.numel()) +
                     " -> 1");
  }
  return g::reshape(theta.forward(g::concat({e1, e2})), {});
}

// ---- Scorer -----------------------------------------------------------------

Scorer::Scorer(ScorerKind kind, std::size_t dim, Tensor alpha, Tensor weight, std::optional<Encoder> mlp)
    : kind_(kind), dim_(dim), alpha_(std::move(alpha)), weight_(std::move(weight)), mlp_(std::move(mlp)) {
  if (kind_ == ScorerKind::kBilinear && weight_.shape() != g::Shape{dim_, dim_}) {
    throw ShapeError("bilinear scorer: W must be d x d");
  }
  if (kind_ == ScorerKind::kMlp && (!mlp_ || mlp_->input_dim() != 2 * dim_ || mlp_->embed_dim() != 1)) {
    throw ShapeError("mlp scorer: network must map 2d -> 1");
  }
}

Scorer Scorer::make(ScorerKind kind, std::size_t dim, std::uint64_t seed, const ScorerOptions& options) {
  Tensor alpha = Tensor::scalar(1.0 / std::sqrt(static_cast<double>(dim)),
                                kind == ScorerKind::kScaledDot && options.trainable_alpha);
  Tensor weight;
  std::optional<Encoder> mlp;
  if (kind == ScorerKind::kBilinear) {
    // Identity start: the scorer begins as the dot product it generalizes.
    std::vector<double> eye(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
    weight = Tensor::matrix(dim, dim, std::move(eye), true);
  }
  if (kind == ScorerKind::kMlp) {
    mlp = Encoder::random(EncoderGeometry{2 * dim, {options.mlp_hidden}, 1}, seed);
  }
  return Scorer(kind, dim, std::move(alpha), std::move(weight), std::move(mlp));
}

Tensor Scorer::score(const Tensor& e1, const Tensor& e2) const {
  switch (kind_) {
    case ScorerKind::kDot: return score_dot(e1, e2);
    case ScorerKind::kScaledDot: return score_scaled_dot(e1, e2, alpha_);
    case ScorerKind::kCosine: return score_cosine(e1, e2);
    case ScorerKind::kNormEuclid: return score_norm_euclid(e1, e2);
    case ScorerKind::kBilinear: return score_bilinear(e1, e2, weight_);
    case ScorerKind::kMlp: return score_mlp(e1, e2, *mlp_);
  }
  throw ArgumentError("unknown scorer kind");
}

Tensor Scorer::against_anchors(const Tensor& e, const AnchorMatrix& anchors) const {
  const std::size_t d = anchors.dim();
  const std::size_t c = anchors.num_classes();
  if (e.rank() < 1 || e.rank() > 2 || e.shape().back() != d) {
    throw ShapeError("score_against_anchors: embedding " + g::shape_string(e.shape()) +
                     " does not match anchor dimension " + std::to_string(d));
  }
  const bool single = e.rank() == 1;
  const std::size_t k = single ? 1 : e.shape()[0];
  const Tensor batch = single ? g::reshape(e, {1, d}) : e;
  Tensor s;
  switch (kind_) {
    case ScorerKind::kDot:
      s = g::matmul(batch, anchors.matrix());
      break;
    case ScorerKind::kScaledDot:
      s = g::mul(g::matmul(batch, anchors.matrix()), alpha_);
      break;
    case ScorerKind::kCosine:
      s = g::matmul(g::l2_normalize(batch), normalized_anchor_matrix(anchors));
      break;
    case ScorerKind::kBilinear:
      s = g::matmul(g::matmul(batch, weight_), anchors.matrix());
      break;
    case ScorerKind::kNormEuclid: {
      // Pair (row i, class j) laid out at i*C + j.
      std::vector<std::size_t> rep_rows;
      std::vector<std::size_t> rep_elems;
      std::vector<double> tiled;
      std::vector<double> anchor_norms;
      const Tensor anchor_rows = anchors.rows_tensor();
      const auto av = anchor_rows.values();
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          rep_rows.push_back(i);
          double s2 = 0.0;
          for (std::size_t t = 0; t < d; ++t) {
            rep_elems.push_back(i * d + t);
            tiled.push_back(av[j * d + t]);
            s2 += av[j * d + t] * av[j * d + t];
          }
          anchor_norms.push_back(std::sqrt(s2));
        }
      }
      const Tensor e_rep = g::reshape(g::gather(batch, rep_elems), {k * c, d});
      const Tensor dist = g::l2_norm(g::sub(e_rep, Tensor::matrix(k * c, d, std::move(tiled))));
      const Tensor den = g::maximum(g::gather(g::l2_norm(batch), rep_rows),
                                    Tensor::vector(std::move(anchor_norms)));
      for (double v : den.values()) {
        if (!(v > g::kNormTolerance)) {
          throw DegenerateError("score_norm_euclid: both embeddings are (near) zero");
        }
      }
      s = g::reshape(g::shift(g::neg(g::mul(dist, g::power(den, -1.0))), 1.0), {k, c});
      break;
    }
    case ScorerKind::kMlp: {
      const Tensor anchor_flat = g::reshape(anchors.rows_tensor(), {c * d});
      const Tensor pool = g::concat({g::reshape(batch, {k * d}), anchor_flat});
      std::vector<std::size_t> idx;
      idx.reserve(k * c * 2 * d);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          for (std::size_t t = 0; t < d; ++t) idx.push_back(i * d + t);
          for (std::size_t t = 0; t < d; ++t) idx.push_back(k * d + j * d + t);
        }
      }
      const Tensor pairs = g::reshape(g::gather(pool, idx), {k * c, 2 * d});
      s = g::reshape(mlp_->forward(pairs), {k, c});
      break;
    }
  }
  return single ? g::reshape(s, {c}) : s;
}

std::vector<Tensor> Scorer::trainable_parameters() const {
  std::vector<Tensor> out;
  if (kind_ == ScorerKind::kScaledDot && alpha_.requires_grad()) out.push_back(alpha_);
  if (kind_ == ScorerKind::kBilinear && weight_.requires_grad()) out.push_back(weight_);
  if (kind_ == ScorerKind::kMlp) {
    for (const Tensor& t : mlp_->trainable_parameters()) out.push_back(t);
  }
  return out;
}

Scorer Scorer::snapshot_frozen() const {
  std::optional<Encoder> mlp;
  if (mlp_) mlp = mlp_->snapshot_frozen();
  return Scorer(kind_, dim_, alpha_.detach(), weight_.detach(), std::move(mlp));
}

Scorer Scorer::clone() const {
  std::optional<Encoder> mlp;
  if (mlp_) mlp = mlp_->clone();
  return Scorer(kind_, dim_, alpha_.clone(), weight_.clone(), std::move(mlp));
}

std::vector<std::pair<std::string, Tensor>> Scorer::named_tensors(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back(prefix + "alpha", alpha_);
  if (kind_ == ScorerKind::kBilinear) out.emplace_back(prefix + "bilinear", weight_);
  if (kind_ == ScorerKind::kMlp) {
    for (auto& nt : mlp_->named_tensors(prefix + "mlp.")) out.push_back(std::move(nt));
  }
  return out;
}

Scorer Scorer::from_tensors(ScorerKind kind, std::size_t dim,
                            const std::vector<std::pair<std::string, Tensor>>& tensors,
                            const std::string& prefix) {
  auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  };
  const Tensor* alpha = find(prefix + "alpha");
  if (alpha == nullptr) throw FormatError("scorer: missing tensor " + prefix + "alpha");
  Tensor weight;
  std::optional<Encoder> mlp;
  if (kind == ScorerKind::kBilinear) {
    const Tensor* w = find(prefix + "bilinear");
    if (w == nullptr) throw FormatError("scorer: missing tensor " + prefix + "bilinear");
    weight = *w;
  }
  if (kind == ScorerKind::kMlp) {
    std::vector<Layer> layers;
    for (std::size_t i = 0;; ++i) {
      const std::string p = prefix + "mlp.layer" + std::to_string(i) + ".";
      const Tensor* w = find(p + "weight");
      const Tensor* b = find(p + "bias");
      if (w == nullptr || b == nullptr) break;
      layers.push_back(Layer{*w, *b, Activation::kRelu, std::nullopt});
    }
    if (layers.empty()) throw FormatError("scorer: missing mlp tensors under " + prefix);
    layers.back().activation = Activation::kNone;
    mlp = Encoder(std::move(layers));
  }
  return Scorer(kind, dim, *alpha, std::move(weight), std::move(mlp));
}

ScoreVector score_against_anchors(const Scorer& scorer, const Tensor& e, const AnchorMatrix& anchors,
                                  Provenance provenance) {
  if (e.rank() != 1) throw ShapeError("score_against_anchors: expected a single embedding");
  return ScoreVector{scorer.against_anchors(e, anchors), provenance};
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t classify(const Scorer& scorer, std::span<const double> e, const AnchorMatrix& anchors) {
  const Tensor s = scorer.against_anchors(Tensor::vector({e.begin(), e.end()}), anchors);
  return argmax_lowest(s.values());
}

}  // namespace rlbind
