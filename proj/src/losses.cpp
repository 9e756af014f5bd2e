// SPDX-License-Identifier: Apache-2.0
#include "rlbind/losses.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "rlbind/error.hpp"

namespace rlbind {

namespace g = grad;

std::string_view alignment_name(AlignmentKind kind) {
  switch (kind) {
    case AlignmentKind::kL1: return "l1";
    case AlignmentKind::kL2: return "l2";
    case AlignmentKind::kSymKL: return "kl";
  }
  return "?";
}

const std::vector<AlignmentKind>& all_alignments() {
  static const std::vector<AlignmentKind> kinds{AlignmentKind::kL1, AlignmentKind::kL2,
                                                AlignmentKind::kSymKL};
  return kinds;
}

AlignmentKind parse_alignment(std::string_view name) {
  for (AlignmentKind k : all_alignments()) {
    if (alignment_name(k) == name) return k;
  }
  throw ConfigError("unknown alignment '" + std::string(name) + "'; accepted: l1, l2, kl");
}

Tensor infonce(const Tensor& batch_x, const Tensor& batch_y, const InfoNCEConfig& cfg) {
  if (!(cfg.tau > 0.0)) throw ArgumentError("infonce: temperature must be positive");
  if (batch_x.rank() != 2 || batch_x.shape() != batch_y.shape()) {
    throw ShapeError("infonce: batches must be equal K x d matrices, got " +
                     g::shape_string(batch_x.shape()) + " and " + g::shape_string(batch_y.shape()));
  }
  const std::size_t k = batch_x.rows();
  std::vector<std::size_t> diag(k);
  for (std::size_t i = 0; i < k; ++i) diag[i] = i * k + i;
  const Tensor sim = g::scale(g::matmul(g::l2_normalize(batch_x), g::transpose(g::l2_normalize(batch_y))),
                              1.0 / cfg.tau);
  const Tensor m2t = g::neg(g::mean(g::gather(g::log_softmax(sim), diag)));
  const Tensor t2m = g::neg(g::mean(g::gather(g::log_softmax(g::transpose(sim)), diag)));
  return g::scale(g::add(m2t, t2m), 0.5);
}

Tensor fare_loss(const Encoder& trainable, const Encoder& original, const Tensor& x, const Tensor& z,
                 double epsilon) {
  if (x.shape() != z.shape()) {
    throw ShapeError("fare_loss: clean " + g::shape_string(x.shape()) + " and perturbed " +
                     g::shape_string(z.shape()) + " inputs differ in shape");
  }
  double linf = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) linf = std::max(linf, std::fabs(z.values()[i] - x.values()[i]));
  if (linf > epsilon + 1e-12) {
    throw AttackError("fare_loss: perturbation has l-inf size " + std::to_string(linf) +
                      " outside the epsilon ball " + std::to_string(epsilon));
  }
  Tensor target;
  {
    g::NoGradGuard no_grad;
    target = original.forward(x.detach()).detach();
  }
  const Tensor diff = g::sub(trainable.forward(z), target);
  const Tensor total = g::sum(g::mul(diff, diff));
  if (x.rank() == 2) return g::scale(total, 1.0 / static_cast<double>(x.rows()));
  return total;
}

Tensor cross_entropy(const Tensor& scores, std::size_t target) {
  if (scores.rank() != 1) throw ShapeError("cross_entropy: expected a score vector");
  if (target >= scores.numel()) {
    throw ArgumentError("cross_entropy: target " + std::to_string(target) + " out of range [0," +
                        std::to_string(scores.numel()) + ")");
  }
  return g::neg(g::element(g::log_softmax(scores), target));
}

Tensor cross_entropy(const Tensor& scores, std::span<const std::size_t> targets) {
  if (scores.rank() == 1) {
    if (targets.size() != 1) throw ArgumentError("cross_entropy: one target expected for a vector");
    return cross_entropy(scores, targets[0]);
  }
  if (scores.rank() != 2 || scores.rows() != targets.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for scores " +
                     g::shape_string(scores.shape()));
  }
  const std::size_t c = scores.cols();
  std::vector<std::size_t> idx(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= c) {
      throw ArgumentError("cross_entropy: target " + std::to_string(targets[i]) + " out of range [0," +
                          std::to_string(c) + ")");
    }
    idx[i] = i * c + targets[i];
  }
  return g::neg(g::mean(g::gather(g::log_softmax(scores), idx)));
}

Tensor align_lp(const Tensor& s_clean, const Tensor& s_adv, int p) {
  if (s_clean.shape() != s_adv.shape()) {
    throw ShapeError("align_lp: score shapes " + g::shape_string(s_clean.shape()) + " and " +
                     g::shape_string(s_adv.shape()) + " differ");
  }
  if (p != 1 && p != 2) throw ArgumentError("align_lp: p must be 1 or 2");
  const Tensor diff = g::sub(s_clean, s_adv);
  return p == 1 ? g::mean(g::abs(diff)) : g::mean(g::mul(diff, diff));
}

Tensor align_symkl(const Tensor& s_clean, const Tensor& s_adv, double tau_prime) {
  if (s_clean.shape() != s_adv.shape()) {
    throw ShapeError("align_symkl: score shapes " + g::shape_string(s_clean.shape()) + " and " +
                     g::shape_string(s_adv.shape()) + " differ");
  }
  if (!(tau_prime > 0.0)) throw ArgumentError("align_symkl: temperature must be positive");
  const Tensor a = g::scale(s_clean, 1.0 / tau_prime);
  const Tensor b = g::scale(s_adv, 1.0 / tau_prime);
  // P log(P/Q) + Q log(Q/P) = (P - Q)(log P - log Q), elementwise.
  const Tensor terms = g::mul(g::sub(g::softmax(a), g::softmax(b)), g::sub(g::log_softmax(a), g::log_softmax(b)));
  const double rows = s_clean.rank() == 2 ? static_cast<double>(s_clean.rows()) : 1.0;
  return g::scale(g::sum(terms), 1.0 / rows);
}

Tensor align(const Tensor& s_clean, const Tensor& s_adv, const AlignmentSpec& spec) {
  switch (spec.kind) {
    case AlignmentKind::kL1: return align_lp(s_clean, s_adv, 1);
    case AlignmentKind::kL2: return align_lp(s_clean, s_adv, 2);
    case AlignmentKind::kSymKL: return align_symkl(s_clean, s_adv, spec.tau_prime);
  }
  throw ArgumentError("unknown alignment kind");
}

Tensor stage2_objective(const Tensor& e_clean, const Tensor& e_adv, const AnchorMatrix& anchors,
                        std::span<const std::size_t> targets, const Scorer& scorer,
                        const Stage2Config& cfg) {
  if (!cfg.include_clean_ce && !cfg.include_adv_ce && !cfg.include_cma) {
    throw ArgumentError("stage2_objective: every loss term is disabled");
  }
  if (!(cfg.lambda >= 0.0)) throw ArgumentError("stage2_objective: lambda must be >= 0");
  if (e_clean.shape() != e_adv.shape()) {
    throw ShapeError("stage2_objective: clean " + g::shape_string(e_clean.shape()) + " and adversarial " +
                     g::shape_string(e_adv.shape()) + " embeddings differ in shape");
  }
  const bool need_clean = cfg.include_clean_ce || cfg.include_cma;
  const bool need_adv = cfg.include_adv_ce || cfg.include_cma;
  Tensor s_clean;
  Tensor s_adv;
  if (need_clean) s_clean = scorer.against_anchors(e_clean, anchors);
  if (need_adv) s_adv = scorer.against_anchors(e_adv, anchors);

  std::optional<Tensor> total;
  auto accumulate = [&total](const Tensor& term) { total = total ? g::add(*total, term) : term; };
  if (cfg.include_clean_ce) accumulate(cross_entropy(s_clean, targets));
  if (cfg.include_adv_ce) accumulate(cross_entropy(s_adv, targets));
  if (cfg.include_cma) accumulate(g::scale(align(s_clean, s_adv, cfg.alignment), cfg.lambda));
  return *total;
}

BoundCheck check_cosine_l2_bound(std::span<const double> u, std::span<const double> v,
                                 std::span<const double> t_anchor) {
  if (u.size() != v.size() || u.size() != t_anchor.size()) {
    throw ShapeError("check_cosine_l2_bound: vectors differ in length");
  }
  auto norm = [](std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
  };
  auto cosine = [&](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s / (norm(a) * norm(b));
  };
  const double nu = norm(u);
  const double nv = norm(v);
  const double nt = norm(t_anchor);
  if (!(nu > g::kNormTolerance) || !(nv > g::kNormTolerance) || !(nt > g::kNormTolerance)) {
    throw DegenerateError("check_cosine_l2_bound: degenerate input vector");
  }
  double dist = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dist += (u[i] - v[i]) * (u[i] - v[i]);
  dist = std::sqrt(dist);
  BoundCheck out;
  out.lhs = std::fabs(cosine(u, t_anchor) - cosine(v, t_anchor));
  out.rhs = 2.0 / std::max(nu, nv) * dist;
  out.slack = out.rhs - out.lhs;
  // Allow for rounding in the two cosine evaluations.
  out.holds = out.slack >= -1e-12;
  return out;
}

}  // namespace rlbind
