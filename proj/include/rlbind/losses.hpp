// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Functions that take score vectors also accept K×C
// batches, in which case the per-row loss is averaged over rows.
#pragma once

#include <span>
#include <string_view>

#include "rlbind/correspondence.hpp"
#include "rlbind/encoders.hpp"

namespace rlbind {

struct InfoNCEConfig {
  double tau = 0.07;
};

enum class AlignmentKind { kL1, kL2, kSymKL };

// Config/CSV names: l1, l2, kl.
std::string_view alignment_name(AlignmentKind kind);
AlignmentKind parse_alignment(std::string_view name);
const std::vector<AlignmentKind>& all_alignments();

struct AlignmentSpec {
  AlignmentKind kind = AlignmentKind::kL2;
  double tau_prime = 1.0;  // SymKL temperature
};

struct Stage2Config {
  double lambda = 4.0;
  AlignmentSpec alignment;
  bool include_clean_ce = true;
  bool include_adv_ce = true;
  bool include_cma = true;
};

// Symmetric InfoNCE, (L_M2T + L_T2M) / 2, over K paired rows. Both sides are
// L2-normalized internally.
Tensor infonce(const Tensor& batch_x, const Tensor& batch_y, const InfoNCEConfig& cfg);

// |phi_ft(z) - phi_org(x)|^2 with the frozen side detached. Rejects z outside
// the epsilon ball around x. x and z may be single inputs or row batches; the
// batch value is the mean over rows.
Tensor fare_loss(const Encoder& trainable, const Encoder& original, const Tensor& x, const Tensor& z,
                 double epsilon);

// -log softmax(scores)[t] via log-sum-exp; batch form takes one label per row.
Tensor cross_entropy(const Tensor& scores, std::size_t target);
Tensor cross_entropy(const Tensor& scores, std::span<const std::size_t> targets);

// (1/C) * sum |s_clean - s_adv|^p, p in {1, 2}.
Tensor align_lp(const Tensor& s_clean, const Tensor& s_adv, int p);
// KL(P||Q) + KL(Q||P) with P, Q the tau'-softmaxes of the two score vectors.
Tensor align_symkl(const Tensor& s_clean, const Tensor& s_adv, double tau_prime);
Tensor align(const Tensor& s_clean, const Tensor& s_adv, const AlignmentSpec& spec);

// CE(clean, t) + CE(adv, t) + lambda * CMA, restricted to the enabled terms.
// Embeddings are single vectors (with one target) or K×d batches.
Tensor stage2_objective(const Tensor& e_clean, const Tensor& e_adv, const AnchorMatrix& anchors,
                        std::span<const std::size_t> targets, const Scorer& scorer,
                        const Stage2Config& cfg);

struct BoundCheck {
  bool holds = false;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;  // rhs - lhs
};

// |cos(u,t) - cos(v,t)| <= 2 / max(|u|,|v|) * |u - v|.
BoundCheck check_cosine_l2_bound(std::span<const double> u, std::span<const double> v,
                                 std::span<const double> t_anchor);

}  // namespace rlbind
