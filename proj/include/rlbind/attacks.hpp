// SPDX-License-Identifier: Apache-2.0
//
// l-inf bounded white-box attacks on a differentiable scalar objective.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "rlbind/gradcore.hpp"

namespace rlbind {

enum class AttackMode { kPgd, kApgd };

// Config/CSV names: pgd, apgd.
std::string_view attack_name(AttackMode mode);
AttackMode parse_attack(std::string_view name);

struct AttackConfig {
  double epsilon = 0.0;
  int n_iter = 10;
  AttackMode mode = AttackMode::kApgd;
  double lower = 0.0;
  double upper = 1.0;
  std::uint64_t seed = 0;
  bool maximize = true;
  // Extra runs from uniform random points in the ball, after the first run.
  int random_restarts = 0;
  // Start the first run from a random point too (needed when the objective's
  // gradient vanishes at x, as for a freshly copied encoder).
  bool random_start = false;

  // Plain PGD step as a fraction of epsilon.
  double pgd_step = 0.25;
  // APGD (Croce & Hein, 2020) schedule.
  double apgd_initial_step = 2.0;  // times epsilon
  double momentum = 0.75;
  double rho = 0.75;
  double first_checkpoint = 0.22;
  double checkpoint_decrement = 0.03;
  double min_checkpoint_gap = 0.06;
};

// Maps an input point (requires_grad leaf) to a scalar objective.
using Objective = std::function<grad::Tensor(const grad::Tensor&)>;

struct AttackResult {
  std::vector<double> point;
  double objective = 0.0;  // value at `point` in the maximize sense
  int evaluations = 0;
};

// Clamp to [x - eps, x + eps], then to [lower, upper].
std::vector<double> project_linf(std::span<const double> z, std::span<const double> x, double epsilon,
                                 double lower, double upper);

AttackResult pgd_attack(const Objective& objective, std::span<const double> x, const AttackConfig& cfg);
AttackResult apgd_attack(const Objective& objective, std::span<const double> x, const AttackConfig& cfg);
AttackResult run_attack(const Objective& objective, std::span<const double> x, const AttackConfig& cfg);

// Iteration indices at which APGD reconsiders its step size.
std::vector<int> apgd_checkpoints(const AttackConfig& cfg);

}  // namespace rlbind
