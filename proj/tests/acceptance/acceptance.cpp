// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rlbind/attacks.hpp"
#include "rlbind/correspondence.hpp"
#include "rlbind/losses.hpp"
#include "rlbind/pipeline.hpp"
#include "rlbind/rng.hpp"
#include "support/fd.hpp"

using namespace rlbind;
using grad::Shape;
using grad::shape_numel;
using grad::Tensor;

namespace {

constexpr double kGradRelTol = 1e-4;
constexpr double kGradAbsFloor = 1e-8;
constexpr double kGradSeconds = 60.0;
constexpr double kIdentityTol = 1e-12;
constexpr double kFareGridFraction = 0.95;
constexpr int kFareGridPoints = 10001;
constexpr double kFeasibleTol = 1e-12;
constexpr double kBaselineCollapse = 30.0;
constexpr double kHardeningGain = 10.0;
constexpr double kAlignmentGain = 5.0;
constexpr double kCleanSlack = 2.0;
constexpr double kPipelineSeconds = 600.0;
constexpr double kAdvCeFactor = 1.5;
constexpr double kCmaSlack = 1.0;
constexpr double kLoraFraction = 0.30;
constexpr std::size_t kLoraRank = 4;
const std::vector<std::uint64_t> kSeeds{0, 1, 2};

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

std::vector<double> random_point(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

double eval_scalar(const Tensor& t) {
  grad::NoGradGuard guard;
  return t.item();
}

// ---- 1: gradients ---------------------------------------------------------

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, std::size_t> failed;
  std::size_t instances = 0;
  auto run = [&](const std::string& name, const std::function<Tensor()>& fn, std::vector<Tensor> params) {
    const auto r = testing::check_gradients(fn, std::move(params), kGradRelTol, kGradAbsFloor);
    ++instances;
    if (r.failures > 0) ++failed[name];
  };

  const EncoderGeometry geom{6, {8}, 4};
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(mix_seed(101, trial));
    const std::size_t d = 4;
    const std::size_t c = 5;
    Tensor bx = random_tensor(rng, {3, d});
    Tensor by = random_tensor(rng, {3, d});
    run("infonce", [&] { return infonce(bx, by, {0.5}); }, {bx, by});

    const Encoder trainable = Encoder::random(geom, mix_seed(7, trial));
    const Encoder original = Encoder::random(geom, mix_seed(8, trial)).snapshot_frozen();
    const double eps = 0.1;
    const auto x = random_point(rng, 6, 0.2, 0.8);
    std::vector<double> zv(x);
    for (double& z : zv) z += rng.uniform(-0.5 * eps, 0.5 * eps);
    Tensor xt = Tensor::vector(x);
    Tensor zt = Tensor::vector(zv);
    std::vector<Tensor> fare_params = trainable.trainable_parameters();
    fare_params.push_back(zt);
    run("fare", [&] { return fare_loss(trainable, original, xt, zt, eps); }, fare_params);

    Tensor s1 = random_tensor(rng, {c});
    Tensor s2 = random_tensor(rng, {c});
    const std::size_t target = rng.below(c);
    run("ce", [&] { return cross_entropy(s1, target); }, {s1});
    run("align_l1", [&] { return align_lp(s1, s2, 1); }, {s1, s2});
    run("align_l2", [&] { return align_lp(s1, s2, 2); }, {s1, s2});
    run("align_kl", [&] { return align_symkl(s1, s2, 0.7); }, {s1, s2});

    const AnchorMatrix anchors = build_anchor_matrix(mix_seed(9, trial), c, d);
    Tensor ec = random_tensor(rng, {2, d});
    Tensor ea = random_tensor(rng, {2, d});
    const std::vector<std::size_t> targets{rng.below(c), rng.below(c)};
    Stage2Config obj;
    obj.lambda = 0.8;
    obj.alignment.kind = all_alignments()[trial % 3];
    const Scorer dot = Scorer::dot(d);
    run("stage2_objective", [&] { return stage2_objective(ec, ea, anchors, targets, dot, obj); }, {ec, ea});

    Tensor e1 = random_tensor(rng, {d});
    Tensor e2 = random_tensor(rng, {d});
    Tensor alpha = Tensor::scalar(rng.uniform(0.2, 2.0));
    Tensor w = random_tensor(rng, {d, d}, 0.5);
    run("dot", [&] { return score_dot(e1, e2); }, {e1, e2});
    run("scaled_dot", [&] { return score_scaled_dot(e1, e2, alpha); }, {e1, e2, alpha});
    run("cosine", [&] { return score_cosine(e1, e2); }, {e1, e2});
    run("norm_euclid", [&] { return score_norm_euclid(e1, e2); }, {e1, e2});
    run("bilinear", [&] { return score_bilinear(e1, e2, w); }, {e1, e2, w});
    const Scorer mlp = Scorer::make(ScorerKind::kMlp, d, mix_seed(10, trial), {false, 6});
    std::vector<Tensor> mlp_params = mlp.trainable_parameters();
    mlp_params.push_back(e1);
    mlp_params.push_back(e2);
    run("mlp", [&] { return mlp.score(e1, e2); }, mlp_params);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& [name, n] : failed) v.require(false, name + " failed " + std::to_string(n) + "/20");
  v.require(secs < kGradSeconds, "runtime " + fmt("%.1f s", secs));
  if (v.pass) v.detail = std::to_string(instances) + " instances, " + fmt("%.2f s", secs);
  return v;
}

// ---- 2: identities --------------------------------------------------------

Verdict identities() {
  Verdict v;
  Rng rng(202);
  double cos_out = 0.0;
  double ne_out = 0.0;
  double bilinear_gap = 0.0;
  double shift_gap = 0.0;
  double sym_gap = 0.0;
  double self_max = 0.0;
  double min_distinct = INFINITY;
  int bound_failures = 0;
  const std::size_t d = 8;
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  const Tensor identity = Tensor::matrix(d, d, eye);

  auto outside = [](double s) { return std::max({0.0, s - 1.0, -1.0 - s}); };
  for (int i = 0; i < 10000; ++i) {
    const Tensor a = random_tensor(rng, {d}, rng.uniform(0.01, 10.0));
    const Tensor b = random_tensor(rng, {d}, rng.uniform(0.01, 10.0));
    cos_out = std::max(cos_out, outside(eval_scalar(score_cosine(a, b))));
    ne_out = std::max(ne_out, outside(eval_scalar(score_norm_euclid(a, b))));
    bilinear_gap = std::max(bilinear_gap,
                            std::fabs(eval_scalar(score_bilinear(a, b, identity)) - eval_scalar(score_dot(a, b))));

    const auto t = random_tensor(rng, {d}).to_vector();
    if (!check_cosine_l2_bound(a.to_vector(), b.to_vector(), t).holds) ++bound_failures;
  }
  const double counter = eval_scalar(score_norm_euclid(Tensor::vector({1.0, 0.0}), Tensor::vector({0.0, 1.0})));
  const double counter_gap = std::fabs(counter - (1.0 - std::sqrt(2.0)));

  for (int i = 0; i < 1000; ++i) {
    const Tensor s = random_tensor(rng, {8});
    const Tensor t = random_tensor(rng, {8});
    const double tau = rng.uniform(0.3, 3.0);
    const double base = eval_scalar(align_symkl(s, t, tau));
    const double shifted =
        eval_scalar(align_symkl(grad::shift(s, rng.uniform(-5, 5)), grad::shift(t, rng.uniform(-5, 5)), tau));
    shift_gap = std::max(shift_gap, std::fabs(shifted - base));
    sym_gap = std::max(sym_gap, std::fabs(eval_scalar(align_symkl(t, s, tau)) - base));
    self_max = std::max({self_max, std::fabs(eval_scalar(align_lp(s, s, 1))), std::fabs(eval_scalar(align_lp(s, s, 2))),
                         std::fabs(eval_scalar(align_symkl(s, s, tau))),
                         std::fabs(eval_scalar(align_symkl(s, grad::shift(s, 1.5), tau)))});
    min_distinct = std::min({min_distinct, eval_scalar(align_lp(s, t, 1)), eval_scalar(align_lp(s, t, 2)), base});
  }
  v.require(cos_out <= kIdentityTol, "cosine leaves [-1,1] by " + fmt("%.3g", cos_out));
  v.require(ne_out <= kIdentityTol, "norm_euclid leaves [-1,1] by " + fmt("%.3g", ne_out));
  v.require(counter_gap <= kIdentityTol, "norm_euclid([1,0],[0,1]) = " + fmt("%.17g", counter));
  v.require(bilinear_gap <= kIdentityTol, "bilinear(I) vs dot gap " + fmt("%.3g", bilinear_gap));
  v.require(shift_gap <= kIdentityTol, "symkl shift gap " + fmt("%.3g", shift_gap));
  v.require(sym_gap <= kIdentityTol, "symkl symmetry gap " + fmt("%.3g", sym_gap));
  v.require(self_max <= kIdentityTol, "alignment of equal scores " + fmt("%.3g", self_max));
  v.require(min_distinct > kIdentityTol, "alignment of distinct scores " + fmt("%.3g", min_distinct));
  v.require(bound_failures == 0, "cosine-l2 bound failed on " + std::to_string(bound_failures) + " triples");
  if (v.pass) v.detail = "10000 triples, norm_euclid counterexample " + fmt("%.12f", counter);
  return v;
}

// ---- 3: attack oracles ----------------------------------------------------

bool feasible(std::span<const double> z, std::span<const double> x, double eps) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (std::fabs(z[i] - x[i]) > eps + kFeasibleTol || z[i] < 0.0 || z[i] > 1.0) return false;
  }
  return true;
}

int infeasible_count = 0;
int attacked_count = 0;

void record(const AttackResult& r, std::span<const double> x, double eps) {
  ++attacked_count;
  if (!feasible(r.point, x, eps)) ++infeasible_count;
}

Verdict attack_oracles() {
  Verdict v;
  Rng rng(303);
  int linear_misses = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto w = random_point(rng, 6, -1.0, 1.0);
    const auto x = random_point(rng, 6, 0.2, 0.8);
    const Objective obj = [&](const Tensor& z) { return grad::dot(z, Tensor::vector(w)); };
    for (AttackMode mode : {AttackMode::kPgd, AttackMode::kApgd}) {
      AttackConfig cfg;
      cfg.mode = mode;
      cfg.epsilon = rng.uniform(0.01, 0.15);
      cfg.seed = static_cast<std::uint64_t>(trial);
      const auto r = run_attack(obj, x, cfg);
      record(r, x, cfg.epsilon);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (r.point[i] != x[i] + cfg.epsilon * (w[i] > 0 ? 1.0 : -1.0)) ++linear_misses;
      }
    }
  }

  double worst_ratio = INFINITY;
  const EncoderGeometry geom{1, {8}, 4};
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const Encoder original = Encoder::random(geom, mix_seed(31, trial)).snapshot_frozen();
    // A fine-tuned encoder: the original with a small perturbation.
    Encoder tuned = original.clone();
    Rng prng(mix_seed(32, trial));
    for (const Layer& layer : tuned.layers()) {
      for (Tensor t : {layer.weight, layer.bias}) {
        for (double& p : t.mutable_values()) p += 0.3 * prng.normal();
      }
    }
    const std::vector<double> x{prng.uniform(0.05, 0.95)};
    const double eps = 0.1;
    const Tensor target = original.forward(Tensor::vector(x));
    auto drift = [&](const Tensor& z) {
      const Tensor d = grad::sub(tuned.forward(z), target);
      return grad::sum(grad::mul(d, d));
    };
    AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.n_iter = 100;
    cfg.seed = trial;
    const auto r = apgd_attack(drift, x, cfg);
    record(r, x, eps);
    const double lo = std::max(0.0, x[0] - eps);
    const double hi = std::min(1.0, x[0] + eps);
    double best = -INFINITY;
    for (int i = 0; i < kFareGridPoints; ++i) {
      const double z = lo + (hi - lo) * i / (kFareGridPoints - 1);
      best = std::max(best, eval_scalar(drift(Tensor::vector({z}))));
    }
    worst_ratio = std::min(worst_ratio, r.objective / best);
  }

  // Evaluation-style attacks on a trained model.
  ExperimentConfig cfg;
  cfg.data.samples_per_class = 40;
  const Dataset data = generate(cfg.data, 0);
  const Model model = stage0_pretrain(cfg, data);
  const auto samples = eval_samples(cfg, data);
  for (std::size_t m = 0; m < model.branches.size(); ++m) {
    const Branch& br = model.branches[m];
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      const Objective ce = [&](const Tensor& z) {
        return cross_entropy(br.scorer.against_anchors(br.encoder.forward(z), model.anchors), s.label);
      };
      for (AttackMode mode : {AttackMode::kPgd, AttackMode::kApgd}) {
        AttackConfig ac;
        ac.mode = mode;
        ac.epsilon = 0.1;
        ac.n_iter = 20;
        ac.seed = i;
        ac.random_restarts = 1;
        record(run_attack(ce, s.inputs[m], ac), s.inputs[m], ac.epsilon);
      }
    }
  }

  v.require(linear_misses == 0, std::to_string(linear_misses) + " linear coordinates off the optimum");
  v.require(worst_ratio >= kFareGridFraction, "worst FARE grid ratio " + fmt("%.4f", worst_ratio));
  v.require(infeasible_count == 0, std::to_string(infeasible_count) + " infeasible points");
  if (v.pass) {
    v.detail = "worst FARE grid ratio " + fmt("%.4f", worst_ratio) + ", " + std::to_string(attacked_count) +
               " attacked points feasible";
  }
  return v;
}

// ---- shared pipeline runs -------------------------------------------------

ExperimentConfig seeded(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.data_seed = seed;
  return cfg;
}

// Accuracies in percent, averaged over modalities (and seeds by the caller).
struct Acc {
  double clean = 0.0;
  std::map<std::string, double> robust;

  Acc& operator+=(const Acc& o) {
    clean += o.clean;
    for (const auto& [e, r] : o.robust) robust[e] += r;
    return *this;
  }
  Acc scaled(double k) const {
    Acc out;
    out.clean = clean * k;
    for (const auto& [e, r] : robust) out.robust[e] = r * k;
    return out;
  }
};

Acc summarize(const std::vector<EvalRow>& rows, const std::string& stage = "") {
  Acc a;
  std::map<std::string, double> clean;
  std::map<std::string, int> count;
  for (const EvalRow& r : rows) {
    if (!stage.empty() && r.stage != stage) continue;
    clean[r.modality] = 100.0 * r.clean_acc();
    a.robust[r.epsilon.str()] += 100.0 * r.robust_acc();
    ++count[r.epsilon.str()];
  }
  for (const auto& [m, c] : clean) a.clean += c / static_cast<double>(clean.size());
  for (auto& [e, r] : a.robust) r /= count[e];
  return a;
}

std::string describe(const Acc& a) {
  std::string s = "clean " + fmt("%.1f", a.clean);
  for (const auto& [e, r] : a.robust) s += " r@" + e + " " + fmt("%.1f", r);
  return s;
}

struct SeedRun {
  ExperimentConfig cfg;
  Dataset data;
  PipelineResult result;
};

std::vector<SeedRun>& seed_runs() {
  static std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> out;
    for (std::uint64_t s : kSeeds) {
      SeedRun r{seeded(s), {}, {}};
      r.data = generate(r.cfg.data, r.cfg.data_seed);
      r.result = run_pipeline(r.cfg, r.data);
      out.push_back(std::move(r));
    }
    return out;
  }();
  return runs;
}

bool by_value(const Rational& a, const Rational& b) { return a.value() < b.value(); }

std::string stage_name(int k) { return "stage" + std::to_string(k); }

// ---- 4: trends ------------------------------------------------------------

Verdict trends() {
  Verdict v;
  std::vector<Acc> stage(3);
  double slowest = 0.0;
  for (const SeedRun& r : seed_runs()) {
    for (int k = 0; k < 3; ++k) stage[k] += summarize(r.result.rows, stage_name(k));
    slowest = std::max(slowest, r.result.wall_seconds);
  }
  for (Acc& a : stage) a = a.scaled(1.0 / static_cast<double>(kSeeds.size()));

  const auto& eps = seeded(0).eval_epsilons;
  const std::string larger = std::max_element(eps.begin(), eps.end(), by_value)->str();
  v.require(stage[0].clean - stage[0].robust[larger] >= kBaselineCollapse,
            "(a) stage0 drop " + fmt("%.1f", stage[0].clean - stage[0].robust[larger]));
  for (const Rational& e : eps) {
    const double gain1 = stage[1].robust[e.str()] - stage[0].robust[e.str()];
    const double gain2 = stage[2].robust[e.str()] - stage[1].robust[e.str()];
    v.require(gain1 >= kHardeningGain, "(b) stage1 gain at " + e.str() + " " + fmt("%.1f", gain1));
    v.require(gain2 >= kAlignmentGain, "(c) stage2 gain at " + e.str() + " " + fmt("%.1f", gain2));
  }
  v.require(stage[2].clean >= stage[1].clean - kCleanSlack,
            "(c) stage2 clean " + fmt("%.1f", stage[2].clean) + " vs stage1 " + fmt("%.1f", stage[1].clean));
  v.require(slowest <= kPipelineSeconds, "pipeline took " + fmt("%.0f s", slowest));
  v.detail += std::string(v.detail.empty() ? "" : " | ");
  for (int k = 0; k < 3; ++k) v.detail += stage_name(k) + ": " + describe(stage[k]) + (k < 2 ? ", " : "");
  v.detail += ", slowest pipeline " + fmt("%.0f s", slowest);
  return v;
}

// ---- 5: objective ablation ------------------------------------------------

Verdict objective_ordering() {
  Verdict v;
  std::map<std::string, Acc> acc;
  const std::vector<std::string> objectives{"clean", "clean+adv", "full"};
  for (const SeedRun& r : seed_runs()) {
    for (const std::string& o : objectives) {
      ExperimentConfig cfg = r.cfg;
      cfg.stage2_init = Stage2Init::kStage0;
      apply_axis_value(cfg, "objective", o);
      const Model m = stage2_rlbind(r.result.models.at(0), cfg, r.data);
      acc[o] += summarize(evaluate(m, eval_samples(cfg, r.data), r.data.spec, eval_options(cfg)));
    }
  }
  for (auto& [o, a] : acc) a = a.scaled(1.0 / static_cast<double>(kSeeds.size()));

  const auto& eps = seeded(0).eval_epsilons;
  const std::string smaller = std::min_element(eps.begin(), eps.end(), by_value)->str();
  v.require(acc["clean"].clean >= acc["clean+adv"].clean, "clean-only clean below +adv");
  v.require(acc["clean+adv"].robust[smaller] >= kAdvCeFactor * acc["clean"].robust[smaller],
            "+adv robust not 1.5x clean-only at " + smaller);
  for (const Rational& e : eps) {
    v.require(acc["full"].robust[e.str()] >= acc["clean+adv"].robust[e.str()] - kCmaSlack, "alignment costs robustness at " + e.str());
  }
  std::string d;
  for (const std::string& o : objectives) d += (d.empty() ? "" : ", ") + o + ": " + describe(acc[o]);
  v.detail += (v.detail.empty() ? "" : " | ") + d;
  return v;
}

// ---- 6: scorer x alignment grid -------------------------------------------

Verdict scorer_grid() {
  Verdict v;
  const std::vector<ScorerKind> parameter_free{ScorerKind::kDot, ScorerKind::kScaledDot, ScorerKind::kCosine,
                                               ScorerKind::kNormEuclid};
  std::vector<GridAxis> axes{{"scorer", {}}, {"alignment", {}}};
  for (ScorerKind k : all_scorers()) axes[0].values.emplace_back(scorer_name(k));
  for (AlignmentKind k : all_alignments()) axes[1].values.emplace_back(alignment_name(k));

  int dot_wins = 0;
  std::string d;
  for (const SeedRun& r : seed_runs()) {
    const auto cells = run_ablation_grid(r.cfg, r.data, axes);
    std::map<std::string, std::pair<double, int>> robust;
    for (const GridCell& c : cells) {
      if (c.error) {
        v.require(false, "cell " + c.assignment.at("scorer") + "/" + c.assignment.at("alignment") + " failed: " + *c.error);
        continue;
      }
      const Acc a = summarize(c.rows);
      for (const auto& [e, x] : a.robust) {
        robust[c.assignment.at("scorer")].first += x;
        ++robust[c.assignment.at("scorer")].second;
      }
    }
    auto mean = [&](ScorerKind k) {
      const auto& [sum, n] = robust[std::string(scorer_name(k))];
      return n == 0 ? -INFINITY : sum / n;
    };
    const double dot = mean(ScorerKind::kDot);
    bool best = true;
    for (ScorerKind k : parameter_free) best = best && dot >= mean(k);
    if (best) ++dot_wins;
    d += " seed " + std::to_string(r.cfg.seed) + ":";
    for (ScorerKind k : all_scorers()) d += " " + std::string(scorer_name(k)) + " " + fmt("%.1f", mean(k));
  }
  v.require(dot_wins >= 2, "dot best on " + std::to_string(dot_wins) + "/3 seeds");
  v.detail += (v.detail.empty() ? "" : " |") + d;
  return v;
}

// ---- 7: LoRA --------------------------------------------------------------

Verdict lora() {
  Verdict v;
  Acc full;
  Acc adapted;
  for (const SeedRun& r : seed_runs()) {
    full += summarize(r.result.rows, "stage2");
    ExperimentConfig cfg = r.cfg;
    cfg.lora_rank = kLoraRank;
    const Model m = stage2_rlbind(r.result.models.at(1), cfg, r.data);
    adapted += summarize(evaluate(m, eval_samples(cfg, r.data), r.data.spec, eval_options(cfg)));
  }
  full = full.scaled(1.0 / static_cast<double>(kSeeds.size()));
  adapted = adapted.scaled(1.0 / static_cast<double>(kSeeds.size()));
  for (const auto& [e, r] : full.robust) {
    v.require(r >= adapted.robust[e], "LoRA more robust at " + e);
  }

  const Encoder& enc = seed_runs().front().result.models.at(1).branches.front().encoder;
  const std::size_t full_count = enc.trainable_parameter_count();
  const std::size_t lora_count = enc.attach_lora(kLoraRank, 0).trainable_parameter_count();
  const double fraction = static_cast<double>(lora_count) / static_cast<double>(full_count);
  v.require(fraction < kLoraFraction, "LoRA trains " + fmt("%.3f", fraction) + " of the parameters");
  v.detail += (v.detail.empty() ? "" : " | ") + std::string("full: ") + describe(full) + ", lora r4: " +
              describe(adapted) + ", parameters " + std::to_string(lora_count) + "/" + std::to_string(full_count);
  return v;
}

// ---- 8: determinism -------------------------------------------------------

Verdict determinism() {
  Verdict v;
  const SeedRun& first = seed_runs().front();
  const auto csv = [&](const std::vector<EvalRow>& rows) {
    return format_metrics_csv(metrics_rows("main", first.cfg, rows, first.cfg.scorer));
  };
  const PipelineResult again = run_pipeline(first.cfg, generate(first.cfg.data, first.cfg.data_seed));
  v.require(csv(again.rows) == csv(first.result.rows), "metrics CSV differs on rerun");

  const auto samples = eval_samples(first.cfg, first.data);
  const EvalOptions opts = eval_options(first.cfg);
  ExperimentConfig lora_cfg = first.cfg;
  lora_cfg.lora_rank = kLoraRank;
  lora_cfg.scorer = ScorerKind::kBilinear;
  const Model lora_model =
      stage2_rlbind(with_scorer(first.result.models.at(1), lora_cfg), lora_cfg, first.data);
  const auto path = std::filesystem::temp_directory_path() / "rlbind_acceptance.rlbd";
  int models = 0;
  for (const Model* m : {&first.result.models.at(2), &lora_model}) {
    save_checkpoint(*m, path);
    const Model loaded = load_checkpoint(path);
    const auto before = evaluate(*m, samples, first.data.spec, opts);
    const auto after = evaluate(loaded, samples, first.data.spec, opts);
    v.require(csv(before) == csv(after), "round-trip changes metrics for model " + std::to_string(models));
    v.require(encode_checkpoint(loaded) == encode_checkpoint(*m), "round-trip changes bytes for model " + std::to_string(models));
    ++models;
  }
  std::filesystem::remove(path);
  if (v.pass) v.detail = "rerun CSV identical, " + std::to_string(models) + " checkpoints round-trip";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"1 gradient suite", gradient_suite},  {"2 analytic identities", identities},
      {"3 attack oracles", attack_oracles},  {"4 stage trends", trends},
      {"5 objective ordering", objective_ordering}, {"6 scorer grid", scorer_grid},
      {"7 full vs LoRA", lora},              {"8 determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    if (!v.pass) ++failed;
    std::printf("criterion %s: %s  %s\n", name, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
