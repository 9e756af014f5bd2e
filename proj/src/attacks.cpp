// SPDX-License-Identifier: Apache-2.0
#include "rlbind/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "rlbind/error.hpp"
#include "rlbind/rng.hpp"

namespace rlbind {

namespace {

struct Probe {
  double value;
  std::vector<double> gradient;
};

Probe evaluate(const Objective& objective, const std::vector<double>& z, bool maximize) {
  grad::Graph graph;
  grad::GraphScope scope(graph);
  grad::Tensor leaf = grad::Tensor::vector(z, true);
  grad::Tensor out = objective(leaf);
  if (out.numel() != 1) throw AttackError("attack: objective must return a scalar");
  Probe p{out.item(), std::vector<double>(z.size(), 0.0)};
  if (out.requires_grad()) {
    graph.backward(out);
    if (leaf.has_grad()) p.gradient.assign(leaf.grad().begin(), leaf.grad().end());
  }
  for (double gv : p.gradient) {
    if (!std::isfinite(gv)) throw AttackError("attack: non-finite gradient of the objective");
  }
  if (!maximize) {
    p.value = -p.value;
    for (double& gv : p.gradient) gv = -gv;
  }
  return p;
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void validate(std::span<const double> x, const AttackConfig& cfg) {
  if (!(cfg.epsilon >= 0.0)) throw AttackError("attack: epsilon must be >= 0");
  if (cfg.n_iter < 1) throw AttackError("attack: n_iter must be >= 1");
  if (x.empty()) throw AttackError("attack: empty input");
}

std::vector<double> start_point(std::span<const double> x, const AttackConfig& cfg, int restart) {
  if (restart == 0 && !cfg.random_start) return project_linf(x, x, cfg.epsilon, cfg.lower, cfg.upper);
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(restart)));
  std::vector<double> z(x.begin(), x.end());
  for (double& v : z) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
  return project_linf(z, x, cfg.epsilon, cfg.lower, cfg.upper);
}

AttackResult pgd_once(const Objective& objective, std::span<const double> x, const AttackConfig& cfg,
                      std::vector<double> cur) {
  Probe probe = evaluate(objective, cur, cfg.maximize);
  AttackResult best{cur, probe.value, 1};
  const double step = cfg.pgd_step * cfg.epsilon;
  for (int i = 0; i < cfg.n_iter; ++i) {
    for (std::size_t j = 0; j < cur.size(); ++j) cur[j] += step * sign_of(probe.gradient[j]);
    cur = project_linf(cur, x, cfg.epsilon, cfg.lower, cfg.upper);
    probe = evaluate(objective, cur, cfg.maximize);
    ++best.evaluations;
    if (probe.value > best.objective) {
      best.objective = probe.value;
      best.point = cur;
    }
  }
  return best;
}

AttackResult apgd_once(const Objective& objective, std::span<const double> x, const AttackConfig& cfg,
                       std::vector<double> cur) {
  const std::vector<int> checkpoints = apgd_checkpoints(cfg);
  Probe probe = evaluate(objective, cur, cfg.maximize);
  AttackResult best{cur, probe.value, 1};
  std::vector<double> best_grad = probe.gradient;
  std::vector<double> prev = cur;
  std::vector<double> history{probe.value};  // objective after each iterate
  double step = cfg.apgd_initial_step * cfg.epsilon;
  bool reduced_last = true;  // the first checkpoint judges oscillation only
  double best_at_last_check = best.objective;
  std::size_t next_cp = 1;
  const std::size_t n = cur.size();

  for (int i = 0; i < cfg.n_iter; ++i) {
    const double a = i == 0 ? 1.0 : cfg.momentum;
    std::vector<double> z(n);
    for (std::size_t j = 0; j < n; ++j) z[j] = cur[j] + step * sign_of(probe.gradient[j]);
    z = project_linf(z, x, cfg.epsilon, cfg.lower, cfg.upper);
    std::vector<double> next(n);
    for (std::size_t j = 0; j < n; ++j) next[j] = cur[j] + a * (z[j] - cur[j]) + (1.0 - a) * (cur[j] - prev[j]);
    next = project_linf(next, x, cfg.epsilon, cfg.lower, cfg.upper);
    prev = std::move(cur);
    cur = std::move(next);

    probe = evaluate(objective, cur, cfg.maximize);
    ++best.evaluations;
    history.push_back(probe.value);
    if (probe.value > best.objective) {
      best.objective = probe.value;
      best.point = cur;
      best_grad = probe.gradient;
    }

    const int done = i + 1;
    if (next_cp < checkpoints.size() && done == checkpoints[next_cp]) {
      const int from = checkpoints[next_cp - 1];
      int improved = 0;
      for (int s = from; s < done; ++s) {
        if (history[s + 1] > history[s]) ++improved;
      }
      const bool oscillating = improved < cfg.rho * static_cast<double>(done - from);
      const bool stalled = !reduced_last && best_at_last_check >= best.objective;
      reduced_last = oscillating || stalled;
      best_at_last_check = best.objective;
      if (reduced_last) {
        step /= 2.0;
        cur = best.point;
        probe.gradient = best_grad;
      }
      ++next_cp;
    }
  }
  return best;
}

}  // namespace

std::string_view attack_name(AttackMode mode) { return mode == AttackMode::kPgd ? "pgd" : "apgd"; }

AttackMode parse_attack(std::string_view name) {
  if (name == "pgd") return AttackMode::kPgd;
  if (name == "apgd") return AttackMode::kApgd;
  throw ConfigError("unknown attack '" + std::string(name) + "'; accepted: pgd, apgd");
}

std::vector<double> project_linf(std::span<const double> z, std::span<const double> x, double epsilon,
                                 double lower, double upper) {
  if (z.size() != x.size()) throw ShapeError("project_linf: point and center differ in length");
  std::vector<double> out(z.size());
  // Points within rounding distance of a face of the ball snap onto it.
  const double slack = 1e-9 * epsilon;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double v = std::min(std::max(z[i], x[i] - epsilon), x[i] + epsilon);
    if (v > x[i] + epsilon - slack) v = x[i] + epsilon;
    if (v < x[i] - epsilon + slack) v = x[i] - epsilon;
    out[i] = std::clamp(v, lower, upper);
  }
  return out;
}

std::vector<int> apgd_checkpoints(const AttackConfig& cfg) {
  std::vector<double> p{0.0, cfg.first_checkpoint};
  while (p.back() < 1.0) {
    const double gap = std::max(p.back() - p[p.size() - 2] - cfg.checkpoint_decrement, cfg.min_checkpoint_gap);
    p.push_back(p.back() + gap);
  }
  std::vector<int> out;
  for (double v : p) {
    const int w = static_cast<int>(std::ceil(v * cfg.n_iter - 1e-9));
    if (w > cfg.n_iter) break;
    if (out.empty() || w > out.back()) out.push_back(w);
  }
  return out;
}

AttackResult pgd_attack(const Objective& objective, std::span<const double> x, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.mode = AttackMode::kPgd;
  return run_attack(objective, x, c);
}

AttackResult apgd_attack(const Objective& objective, std::span<const double> x, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.mode = AttackMode::kApgd;
  return run_attack(objective, x, c);
}

AttackResult run_attack(const Objective& objective, std::span<const double> x, const AttackConfig& cfg) {
  validate(x, cfg);
  AttackResult best;
  int evaluations = 0;
  for (int r = 0; r <= cfg.random_restarts; ++r) {
    std::vector<double> start = start_point(x, cfg, r);
    AttackResult res = cfg.mode == AttackMode::kPgd ? pgd_once(objective, x, cfg, std::move(start))
                                                    : apgd_once(objective, x, cfg, std::move(start));
    evaluations += res.evaluations;
    if (r == 0 || res.objective > best.objective) best = std::move(res);
    if (cfg.epsilon == 0.0) break;
  }
  best.evaluations = evaluations;
  return best;
}

}  // namespace rlbind
