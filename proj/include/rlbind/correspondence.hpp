// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal correspondence scores s(e1, e2) and their evaluation against
// every column of the anchor matrix.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlbind/encoders.hpp"
#include "rlbind/gradcore.hpp"

namespace rlbind {

enum class ScorerKind { kDot, kScaledDot, kCosine, kNormEuclid, kBilinear, kMlp };

// Config/CSV names: dot, scaled_dot, cosine, norm_euclid, bilinear, mlp.
std::string_view scorer_name(ScorerKind kind);
ScorerKind parse_scorer(std::string_view name);
const std::vector<ScorerKind>& all_scorers();

// Pairwise scores on single embeddings. All are differentiable in every
// tensor argument.
Tensor score_dot(const Tensor& e1, const Tensor& e2);
Tensor score_scaled_dot(const Tensor& e1, const Tensor& e2, const Tensor& alpha);
Tensor score_cosine(const Tensor& e1, const Tensor& e2);
// 1 - |e1 - e2| / max(|e1|, |e2|). Ranges over [-1, 1].
Tensor score_norm_euclid(const Tensor& e1, const Tensor& e2);
Tensor score_bilinear(const Tensor& e1, const Tensor& e2, const Tensor& w);
// theta maps the 2d-wide concatenation [e1 : e2] to one output.
Tensor score_mlp(const Tensor& e1, const Tensor& e2, const Encoder& theta);

struct ScorerOptions {
  bool trainable_alpha = false;
  std::size_t mlp_hidden = 32;
};

class Scorer {
 public:
  static Scorer make(ScorerKind kind, std::size_t dim, std::uint64_t seed,
                     const ScorerOptions& options = {});
  static Scorer dot(std::size_t dim) { return make(ScorerKind::kDot, dim, 0); }

  ScorerKind kind() const { return kind_; }
  std::string_view name() const { return scorer_name(kind_); }
  std::size_t dim() const { return dim_; }

  Tensor score(const Tensor& e1, const Tensor& e2) const;

  // Scores of e (a d-vector, or a K×d batch) against every anchor column:
  // a C-vector, or a K×C matrix.
  Tensor against_anchors(const Tensor& e, const AnchorMatrix& anchors) const;

  std::vector<Tensor> trainable_parameters() const;
  Scorer snapshot_frozen() const;
  Scorer clone() const;

  const Tensor& alpha() const { return alpha_; }
  const Tensor& bilinear_weight() const { return weight_; }
  const Encoder& mlp() const { return *mlp_; }

  std::vector<std::pair<std::string, Tensor>> named_tensors(const std::string& prefix) const;
  // Rebuilds a scorer of the given kind from named tensors (see named_tensors).
  static Scorer from_tensors(ScorerKind kind, std::size_t dim,
                             const std::vector<std::pair<std::string, Tensor>>& tensors,
                             const std::string& prefix);

  Scorer(ScorerKind kind, std::size_t dim, Tensor alpha, Tensor weight, std::optional<Encoder> mlp);

 private:
  ScorerKind kind_;
  std::size_t dim_;
  Tensor alpha_;   // scaled_dot
  Tensor weight_;  // bilinear, d×d
  std::optional<Encoder> mlp_;
};

enum class Provenance { kClean, kAdversarial };

struct ScoreVector {
  Tensor values;  // length C
  Provenance provenance = Provenance::kClean;
};

ScoreVector score_against_anchors(const Scorer& scorer, const Tensor& e, const AnchorMatrix& anchors,
                                  Provenance provenance = Provenance::kClean);

// Argmax of the anchor scores; ties go to the lowest class index.
std::size_t classify(const Scorer& scorer, std::span<const double> e, const AnchorMatrix& anchors);
std::size_t argmax_lowest(std::span<const double> values);

}  // namespace rlbind
