// SPDX-License-Identifier: Apache-2.0
#include "rlbind/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "rlbind/checkpoint.hpp"
#include "rlbind/error.hpp"
#include "rlbind/rng.hpp"

namespace rlbind {

namespace g = grad;

namespace {

std::uint64_t derive(std::uint64_t seed, std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed, tag), a), b);
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Shortest decimal that round-trips.
std::string format_number(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

nlohmann::json schedule_json(const TrainSchedule& s) {
  return {{"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"learning_rate", s.learning_rate},
          {"attack_iters", s.attack_iters},
          {"epsilon", s.epsilon.str()}};
}

std::size_t modality_position(const DatasetSpec& spec, const std::string& name) {
  for (std::size_t i = 0; i < spec.modalities.size(); ++i) {
    if (spec.modalities[i].name == name) return i;
  }
  throw ArgumentError("model branch '" + name + "' has no matching dataset modality");
}

Scorer fresh_scorer(const ExperimentConfig& cfg, const std::string& modality) {
  return Scorer::make(cfg.scorer, cfg.geometry.embed_dim, derive(cfg.seed, "scorer/" + modality),
                      cfg.scorer_options);
}

g::Tensor stack_inputs(const std::vector<const Sample*>& batch, std::size_t m) {
  const std::size_t dim = batch.front()->inputs[m].size();
  std::vector<double> flat;
  flat.reserve(batch.size() * dim);
  for (const Sample* s : batch) flat.insert(flat.end(), s->inputs[m].begin(), s->inputs[m].end());
  return g::Tensor::matrix(batch.size(), dim, std::move(flat));
}

g::Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return g::Tensor::matrix(rows.size(), rows.front().size(), std::move(flat));
}

void sgd_step(const std::vector<g::Tensor>& params, double lr) {
  for (g::Tensor p : params) {
    if (!p.has_grad()) continue;
    auto v = p.mutable_values();
    const auto gr = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * gr[i];
  }
}

// Records, differentiates and applies one SGD step; returns the loss value.
double train_step(const std::function<g::Tensor()>& loss_fn, const std::vector<g::Tensor>& params, double lr,
                  const char* stage) {
  double value = 0.0;
  try {
    value = g::value_and_grad(loss_fn);
  } catch (const NonFiniteError& e) {
    throw TrainingError(std::string(stage) + ": diverged (" + e.what() + ")");
  }
  if (!std::isfinite(value)) throw TrainingError(std::string(stage) + ": loss became non-finite");
  sgd_step(params, lr);
  return value;
}

std::vector<g::Tensor> concat_params(std::vector<g::Tensor> a, const std::vector<g::Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<std::vector<const Sample*>> shuffled_batches(const std::vector<const Sample*>& pool,
                                                         std::size_t batch_size, std::uint64_t seed) {
  std::vector<const Sample*> order = pool;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<const Sample*>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    out.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch_size));
  }
  return out;
}

double linf_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::fabs(a[i] - b[i]));
  return d;
}

void check_feasible(std::span<const double> z, std::span<const double> x, double eps) {
  if (linf_distance(z, x) > eps + 1e-12) throw AttackError("attack returned a point outside the epsilon ball");
  for (double v : z) {
    if (v < 0.0 || v > 1.0) throw AttackError("attack returned a point outside [0, 1]");
  }
}

}  // namespace

// ---- config -----------------------------------------------------------------

void ExperimentConfig::validate() const {
  data.validate();
  if (geometry.embed_dim < 1) throw ConfigError("model.embed_dim must be >= 1");
  if (anchors.orthogonal && data.n_classes > geometry.embed_dim) {
    throw ConfigError("model.orthogonal_anchors needs n_classes <= embed_dim");
  }
  for (const TrainSchedule* s : {&stage0, &stage1, &stage2}) {
    if (s->epochs < 0) throw ConfigError("epochs must be >= 0");
    if (s->batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(s->learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  }
  if (stage1.attack_iters < 1 || stage2.attack_iters < 1) throw ConfigError("attack_iters must be >= 1");
  if (!objective.include_clean_ce && !objective.include_adv_ce && !objective.include_cma) {
    throw ConfigError("stage2: at least one of clean_ce, adv_ce, cma must be enabled");
  }
  if (!(objective.lambda >= 0.0)) throw ConfigError("stage2.lambda must be >= 0");
  if (eval_epsilons.empty()) throw ConfigError("eval.epsilons must not be empty");
  if (eval_iters < 1) throw ConfigError("eval.iters must be >= 1");
  if (eval_restarts < 0) throw ConfigError("eval.restarts must be >= 0");
  if (threads < 1) throw ConfigError("eval.threads must be >= 1");
  if (lora_rank > 0) {
    std::size_t min_dim = geometry.embed_dim;
    for (std::size_t h : geometry.hidden) min_dim = std::min(min_dim, h);
    for (const auto& m : data.modalities) min_dim = std::min(min_dim, m.input_dim);
    if (lora_rank >= min_dim) throw ConfigError("model.lora_rank must be below every layer width");
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json eps = nlohmann::json::array();
  for (const Rational& e : eval_epsilons) eps.push_back(e.str());
  return {
      {"data", {{"spec", spec_to_json(data)}, {"seed", data_seed}}},
      {"model",
       {{"hidden", geometry.hidden},
        {"embed_dim", geometry.embed_dim},
        {"anchor_max_cosine", anchors.max_cosine},
        {"orthogonal_anchors", anchors.orthogonal},
        {"scorer", std::string(scorer_name(scorer))},
        {"trainable_alpha", scorer_options.trainable_alpha},
        {"mlp_hidden", scorer_options.mlp_hidden},
        {"lora_rank", lora_rank}}},
      {"stage0", {{"schedule", schedule_json(stage0)}, {"tau", infonce.tau}}},
      {"stage1", schedule_json(stage1)},
      {"stage2",
       {{"schedule", schedule_json(stage2)},
        {"init", stage2_init == Stage2Init::kStage1 ? "stage1" : "stage0"},
        {"lambda", objective.lambda},
        {"alignment", std::string(alignment_name(objective.alignment.kind))},
        {"tau_prime", objective.alignment.tau_prime},
        {"clean_ce", objective.include_clean_ce},
        {"adv_ce", objective.include_adv_ce},
        {"cma", objective.include_cma}}},
      {"eval",
       {{"epsilons", eps},
        {"attack", std::string(attack_name(eval_attack))},
        {"iters", eval_iters},
        {"restarts", eval_restarts},
        {"per_class", eval_per_class}}},
      {"run", {{"seed", seed}}},
  };
}

std::string ExperimentConfig::hash() const { return hex16(fnv1a(to_json().dump())); }

std::string stage_key(const ExperimentConfig& cfg, int stage) {
  const nlohmann::json full = cfg.to_json();
  nlohmann::json key = {{"data", full["data"]},
                        {"hidden", full["model"]["hidden"]},
                        {"embed_dim", full["model"]["embed_dim"]},
                        {"anchor_max_cosine", full["model"]["anchor_max_cosine"]},
                        {"orthogonal_anchors", full["model"]["orthogonal_anchors"]},
                        {"stage0", full["stage0"]},
                        {"seed", cfg.seed}};
  if (stage >= 1) {
    key["lora_rank"] = cfg.lora_rank;
    key["stage1"] = full["stage1"];
  }
  if (stage >= 2) key["all"] = full;
  return hex16(fnv1a(key.dump()));
}

// ---- model ------------------------------------------------------------------

const Branch& Model::branch(const std::string& modality) const {
  for (const Branch& b : branches) {
    if (b.modality == modality) return b;
  }
  throw ArgumentError("model has no branch for modality '" + modality + "'");
}

Branch& Model::branch(const std::string& modality) {
  return const_cast<Branch&>(static_cast<const Model&>(*this).branch(modality));
}

Model Model::clone() const {
  Model out{anchors, {}, stage, tag};
  for (const Branch& b : branches) out.branches.push_back({b.modality, b.encoder.clone(), b.scorer.clone()});
  return out;
}

Model init_model(const ExperimentConfig& cfg) {
  cfg.validate();
  Model model{build_anchor_matrix(derive(cfg.seed, "anchors"), cfg.data.n_classes, cfg.geometry.embed_dim,
                                  cfg.anchors),
              {}, "stage0", "base"};
  for (const auto& m : cfg.data.modalities) {
    EncoderGeometry geom = cfg.geometry;
    geom.input_dim = m.input_dim;
    model.branches.push_back(
        {m.name, Encoder::random(geom, derive(cfg.seed, "encoder/" + m.name)), fresh_scorer(cfg, m.name)});
  }
  return model;
}

std::string fare_tag(const Rational& epsilon) {
  if (255 % epsilon.den() == 0) return "FARE" + std::to_string(epsilon.num() * (255 / epsilon.den()));
  return "FARE@" + epsilon.str();
}

Model with_scorer(const Model& model, const ExperimentConfig& cfg) {
  Model out = model.clone();
  for (Branch& b : out.branches) b.scorer = fresh_scorer(cfg, b.modality);
  return out;
}

// ---- stage 0 ----------------------------------------------------------------

Model stage0_pretrain(const ExperimentConfig& cfg, const Dataset& data, TrainLog* log) {
  Model model = init_model(cfg);
  const auto train = data.subset(Split::kTrain);
  const g::Tensor anchor_rows = model.anchors.rows_tensor();
  const std::size_t d = model.anchors.dim();

  for (Branch& br : model.branches) {
    const std::size_t m = data.modality_index(br.modality);
    std::vector<std::vector<const Sample*>> by_class(cfg.data.n_classes);
    for (const Sample* s : train) by_class.at(s->label).push_back(s);
    std::size_t rounds = by_class.front().size();
    for (const auto& c : by_class) rounds = std::min(rounds, c.size());

    std::vector<double> losses;
    const auto params = br.encoder.trainable_parameters();
    for (int epoch = 0; epoch < cfg.stage0.epochs; ++epoch) {
      Rng rng(derive(cfg.seed, "stage0/" + br.modality, static_cast<std::uint64_t>(epoch)));
      for (auto& c : by_class) rng.shuffle(c.begin(), c.end());
      // Class-balanced batches: one sample of every class, so no anchor row
      // repeats inside a batch.
      for (std::size_t r = 0; r < rounds; ++r) {
        std::vector<const Sample*> batch;
        std::vector<double> targets;
        for (const auto& c : by_class) {
          batch.push_back(c[r]);
          const auto row = anchor_rows.values().subspan(c[r]->label * d, d);
          targets.insert(targets.end(), row.begin(), row.end());
        }
        const g::Tensor x = stack_inputs(batch, m);
        const g::Tensor y = g::Tensor::matrix(batch.size(), d, std::move(targets));
        const double loss = train_step([&] { return infonce(br.encoder.forward(x), y, cfg.infonce); }, params,
                                       cfg.stage0.learning_rate, "stage0");
        if (!losses.empty() && loss > 10.0 * losses.front()) {
          throw TrainingError("stage0: diverged on " + br.modality + " (loss " + format_number(loss) +
                              " > 10x initial " + format_number(losses.front()) + ")");
        }
        losses.push_back(loss);
      }
    }
    if (!losses.empty()) {
      const std::size_t tail = std::min<std::size_t>(10, losses.size());
      double final_loss = 0.0;
      for (std::size_t i = losses.size() - tail; i < losses.size(); ++i) final_loss += losses[i];
      final_loss /= static_cast<double>(tail);
      if (final_loss > 0.5 * losses.front()) {
        throw TrainingError("stage0: " + br.modality + " failed to train (final loss " + format_number(final_loss) +
                            " vs initial " + format_number(losses.front()) + ")");
      }
    }
    if (log != nullptr) log->losses["stage0/" + br.modality] = std::move(losses);
  }
  model.stage = "stage0";
  model.tag = "base";
  return model;
}

// ---- stage 1 ----------------------------------------------------------------

Model stage1_fare(const Model& model, const ExperimentConfig& cfg, const Dataset& data, TrainLog* log) {
  cfg.validate();
  Model out = model.clone();
  const double eps = cfg.stage1.epsilon.value();
  const auto train = data.subset(Split::kTrain);

  for (Branch& br : out.branches) {
    const std::size_t m = data.modality_index(br.modality);
    const Encoder original = br.encoder.snapshot_frozen();
    if (cfg.lora_rank > 0 && !br.encoder.has_adapters()) {
      br.encoder = br.encoder.attach_lora(cfg.lora_rank, derive(cfg.seed, "lora/" + br.modality));
    }
    const auto params = br.encoder.trainable_parameters();
    std::vector<double> losses;
    std::uint64_t step = 0;
    for (int epoch = 0; epoch < cfg.stage1.epochs; ++epoch) {
      const auto batches = shuffled_batches(
          train, cfg.stage1.batch_size, derive(cfg.seed, "stage1/" + br.modality, static_cast<std::uint64_t>(epoch)));
      for (const auto& batch : batches) {
        const Encoder frozen = br.encoder.snapshot_frozen();
        std::vector<std::vector<double>> adv;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const std::vector<double>& x = batch[i]->inputs[m];
          g::Tensor target;
          {
            g::NoGradGuard no_grad;
            target = original.forward(g::Tensor::vector(x));
          }
          AttackConfig ac;
          ac.epsilon = eps;
          ac.n_iter = cfg.stage1.attack_iters;
          ac.random_start = true;
          ac.seed = derive(cfg.seed, "stage1-attack/" + br.modality, step, i);
          const auto res = apgd_attack(
              [&](const g::Tensor& z) {
                const g::Tensor diff = g::sub(frozen.forward(z), target);
                return g::sum(g::mul(diff, diff));
              },
              x, ac);
          check_feasible(res.point, x, eps);
          adv.push_back(res.point);
        }
        const g::Tensor xb = stack_inputs(batch, m);
        const g::Tensor zb = stack_rows(adv);
        losses.push_back(train_step([&] { return fare_loss(br.encoder, original, xb, zb, eps); }, params,
                                    cfg.stage1.learning_rate, "stage1"));
        ++step;
      }
    }
    if (log != nullptr) log->losses["stage1/" + br.modality] = std::move(losses);
  }
  out.stage = "stage1";
  out.tag = fare_tag(cfg.stage1.epsilon);
  return out;
}

// ---- stage 2 ----------------------------------------------------------------

Model stage2_rlbind(const Model& model, const ExperimentConfig& cfg, const Dataset& data, TrainLog* log) {
  cfg.validate();
  Model out = model.clone();
  const double eps = cfg.stage2.epsilon.value();
  const auto train = data.subset(Split::kTrain);
  const bool need_adv = cfg.objective.include_adv_ce || cfg.objective.include_cma;

  for (Branch& br : out.branches) {
    const std::size_t m = data.modality_index(br.modality);
    if (cfg.lora_rank > 0 && !br.encoder.has_adapters()) {
      br.encoder = br.encoder.attach_lora(cfg.lora_rank, derive(cfg.seed, "lora/" + br.modality));
    }
    const auto params = concat_params(br.encoder.trainable_parameters(), br.scorer.trainable_parameters());
    std::vector<double> losses;
    std::uint64_t step = 0;
    for (int epoch = 0; epoch < cfg.stage2.epochs; ++epoch) {
      const auto batches = shuffled_batches(
          train, cfg.stage2.batch_size, derive(cfg.seed, "stage2/" + br.modality, static_cast<std::uint64_t>(epoch)));
      for (const auto& batch : batches) {
        std::vector<std::size_t> targets;
        for (const Sample* s : batch) targets.push_back(s->label);
        const g::Tensor xb = stack_inputs(batch, m);
        g::Tensor zb = xb;
        if (need_adv) {
          const Encoder frozen_enc = br.encoder.snapshot_frozen();
          const Scorer frozen_scorer = br.scorer.snapshot_frozen();
          std::vector<std::vector<double>> adv;
          for (std::size_t i = 0; i < batch.size(); ++i) {
            const std::vector<double>& x = batch[i]->inputs[m];
            AttackConfig ac;
            ac.epsilon = eps;
            ac.n_iter = cfg.stage2.attack_iters;
            ac.seed = derive(cfg.seed, "stage2-attack/" + br.modality, step, i);
            const std::size_t t = targets[i];
            const auto res = apgd_attack(
                [&](const g::Tensor& z) {
                  return cross_entropy(frozen_scorer.against_anchors(frozen_enc.forward(z), out.anchors), t);
                },
                x, ac);
            check_feasible(res.point, x, eps);
            adv.push_back(res.point);
          }
          zb = stack_rows(adv);
        }
        losses.push_back(train_step(
            [&] {
              const g::Tensor e_clean = br.encoder.forward(xb);
              const g::Tensor e_adv = need_adv ? br.encoder.forward(zb) : e_clean;
              return stage2_objective(e_clean, e_adv, out.anchors, targets, br.scorer, cfg.objective);
            },
            params, cfg.stage2.learning_rate, "stage2"));
        ++step;
      }
    }
    if (log != nullptr) log->losses["stage2/" + br.modality] = std::move(losses);
  }
  out.stage = "stage2";
  out.tag = "rlbind";
  return out;
}

// ---- evaluation -------------------------------------------------------------

double EvalRow::clean_acc() const {
  return total == 0 ? 0.0 : static_cast<double>(clean_correct) / static_cast<double>(total);
}

double EvalRow::robust_acc() const {
  return total == 0 ? 0.0 : static_cast<double>(robust_correct) / static_cast<double>(total);
}

EvalOptions eval_options(const ExperimentConfig& cfg) {
  return {cfg.eval_epsilons, cfg.eval_attack, cfg.eval_iters, cfg.eval_restarts, derive(cfg.seed, "eval"),
          cfg.threads};
}

std::vector<Sample> eval_samples(const ExperimentConfig& cfg, const Dataset& data) {
  std::vector<Sample> test;
  for (const Sample* s : data.subset(Split::kTest)) test.push_back(*s);
  if (cfg.eval_per_class == 0) return test;
  return sample_eval_subset(test, cfg.data.n_classes, cfg.eval_per_class, derive(cfg.seed, "eval-subset"));
}

std::vector<EvalRow> evaluate(const Model& model, const std::vector<Sample>& samples, const DatasetSpec& spec,
                              const EvalOptions& options) {
  if (samples.empty()) throw ArgumentError("evaluate: empty evaluation set");
  if (options.epsilons.empty()) throw ArgumentError("evaluate: no epsilons given");
  if (options.threads < 1) throw ArgumentError("evaluate: threads must be >= 1");
  const std::size_t n_eps = options.epsilons.size();
  std::vector<EvalRow> rows;

  for (std::size_t bi = 0; bi < model.branches.size(); ++bi) {
    const Branch& br = model.branches[bi];
    const std::size_t m = modality_position(spec, br.modality);
    const Encoder enc = br.encoder.snapshot_frozen();
    const Scorer scorer = br.scorer.snapshot_frozen();
    // Per sample: clean flag then one robust flag per epsilon.
    std::vector<char> flags(samples.size() * (1 + n_eps), 0);

    auto work = [&](std::size_t j) {
      const std::vector<double>& x = samples[j].inputs.at(m);
      const std::size_t t = samples[j].label;
      std::size_t clean_pred = 0;
      {
        g::NoGradGuard no_grad;
        clean_pred = argmax_lowest(scorer.against_anchors(enc.forward(g::Tensor::vector(x)), model.anchors).values());
      }
      const bool clean_ok = clean_pred == t;
      flags[j * (1 + n_eps)] = clean_ok ? 1 : 0;
      for (std::size_t k = 0; k < n_eps; ++k) {
        const double eps = options.epsilons[k].value();
        bool robust = clean_ok;
        if (clean_ok && eps > 0.0) {
          bool fooled = false;
          AttackConfig ac;
          ac.epsilon = eps;
          ac.n_iter = options.iters;
          ac.mode = options.attack;
          ac.random_restarts = options.restarts;
          ac.seed = derive(options.seed, br.modality, j, k);
          const auto res = run_attack(
              [&](const g::Tensor& z) {
                const g::Tensor s = scorer.against_anchors(enc.forward(z), model.anchors);
                if (argmax_lowest(s.values()) != t) fooled = true;
                return cross_entropy(s, t);
              },
              x, ac);
          check_feasible(res.point, x, eps);
          robust = !fooled;
        }
        flags[j * (1 + n_eps) + 1 + k] = robust ? 1 : 0;
      }
    };

    if (options.threads == 1) {
      for (std::size_t j = 0; j < samples.size(); ++j) work(j);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(options.threads));
      for (int w = 0; w < options.threads; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t j = static_cast<std::size_t>(w); j < samples.size();
                 j += static_cast<std::size_t>(options.threads)) {
              work(j);
            }
          } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }

    for (std::size_t k = 0; k < n_eps; ++k) {
      EvalRow row{model.stage, br.modality, options.epsilons[k], samples.size(), 0, 0};
      for (std::size_t j = 0; j < samples.size(); ++j) {
        row.clean_correct += static_cast<std::size_t>(flags[j * (1 + n_eps)]);
        row.robust_correct += static_cast<std::size_t>(flags[j * (1 + n_eps) + 1 + k]);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

// ---- pipeline ---------------------------------------------------------------

PipelineResult run_pipeline(const ExperimentConfig& cfg, const Dataset& data, int last_stage) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  PipelineResult result;
  const auto samples = eval_samples(cfg, data);
  const EvalOptions opts = eval_options(cfg);
  auto record = [&](Model model) {
    const auto rows = evaluate(model, samples, data.spec, opts);
    result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    result.models.push_back(std::move(model));
  };

  record(stage0_pretrain(cfg, data, &result.log));
  if (last_stage >= 1 && cfg.stage2_init == Stage2Init::kStage1) {
    record(stage1_fare(result.models.back(), cfg, data, &result.log));
  }
  if (last_stage >= 2) record(stage2_rlbind(result.models.back(), cfg, data, &result.log));
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---- checkpoints ------------------------------------------------------------

std::string encode_checkpoint(const Model& model) {
  TensorContainer c;
  nlohmann::json branches = nlohmann::json::array();
  nlohmann::json trainable = nlohmann::json::array();
  c.tensors.emplace_back("anchors", model.anchors.matrix());
  for (const Branch& b : model.branches) {
    branches.push_back({{"modality", b.modality},
                        {"scorer", std::string(b.scorer.name())},
                        {"layers", b.encoder.layers().size()}});
    for (auto& nt : b.encoder.named_tensors(b.modality + ".encoder.")) c.tensors.push_back(nt);
    for (auto& nt : b.scorer.named_tensors(b.modality + ".scorer.")) c.tensors.push_back(nt);
  }
  for (const auto& [name, t] : c.tensors) {
    if (t.requires_grad()) trainable.push_back(name);
  }
  c.meta = {{"kind", "model"},
            {"stage", model.stage},
            {"tag", model.tag},
            {"classes", model.anchors.class_names()},
            {"branches", branches},
            {"trainable", trainable}};
  return encode_container(c);
}

Model decode_checkpoint(std::string_view bytes) {
  const TensorContainer c = decode_container(bytes);
  try {
    if (c.meta.at("kind") != "model") throw FormatError("checkpoint: container does not hold a model");
    for (const auto& name : c.meta.at("trainable")) {
      grad::Tensor t = c.get(name.get<std::string>());
      t.set_requires_grad(true);
    }
    Model model{AnchorMatrix(c.get("anchors"), c.meta.at("classes").get<std::vector<std::string>>()), {},
                c.meta.at("stage").get<std::string>(), c.meta.at("tag").get<std::string>()};
    for (const auto& bj : c.meta.at("branches")) {
      const std::string mod = bj.at("modality").get<std::string>();
      const std::size_t n_layers = bj.at("layers").get<std::size_t>();
      std::vector<Layer> layers;
      for (std::size_t i = 0; i < n_layers; ++i) {
        const std::string p = mod + ".encoder.layer" + std::to_string(i) + ".";
        Layer layer{c.get(p + "weight"), c.get(p + "bias"),
                    i + 1 == n_layers ? Activation::kNone : Activation::kRelu, std::nullopt};
        if (c.contains(p + "lora_a")) {
          const grad::Tensor& a = c.get(p + "lora_a");
          layer.adapter = LowRankAdapter{a, c.get(p + "lora_b"), a.rows()};
        }
        layers.push_back(std::move(layer));
      }
      Encoder enc(std::move(layers));
      const ScorerKind kind = parse_scorer(bj.at("scorer").get<std::string>());
      Scorer scorer = Scorer::from_tensors(kind, enc.embed_dim(), c.tensors, mod + ".scorer.");
      model.branches.push_back({mod, std::move(enc), std::move(scorer)});
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: inconsistent tensor shapes: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---- metrics ----------------------------------------------------------------

std::vector<MetricsRow> metrics_rows(const std::string& run_id, const ExperimentConfig& cfg,
                                     const std::vector<EvalRow>& rows, ScorerKind scorer) {
  std::vector<MetricsRow> out;
  const std::string hash = cfg.hash();
  for (const EvalRow& r : rows) {
    out.push_back({run_id, r.stage, r.modality, std::string(scorer_name(scorer)),
                   std::string(alignment_name(cfg.objective.alignment.kind)),
                   cfg.lora_rank == 0 ? "off" : "r" + std::to_string(cfg.lora_rank), format_number(cfg.objective.lambda),
                   r.epsilon.str(), r.clean_acc(), r.robust_acc(), cfg.seed, hash});
  }
  return out;
}

std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  char acc[64];
  for (const MetricsRow& r : rows) {
    std::snprintf(acc, sizeof acc, "%.6f,%.6f", r.clean_acc, r.robust_acc);
    os << r.run_id << ',' << r.stage << ',' << r.modality << ',' << r.scorer << ',' << r.alignment << ',' << r.lora
       << ',' << r.lambda << ',' << r.epsilon << ',' << acc << ',' << r.seed << ',' << r.config_hash << '\n';
  }
  return os.str();
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  write_file_atomic(path, format_metrics_csv(rows));
}

void write_run_manifest(const std::filesystem::path& path, const ExperimentConfig& cfg, const nlohmann::json& extra) {
  nlohmann::json j = {{"library_version", kLibraryVersion}, {"config", cfg.to_json()}, {"config_hash", cfg.hash()}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_file_atomic(path, j.dump(2) + "\n");
}

// ---- ablation grids -----------------------------------------------------------

void apply_axis_value(ExperimentConfig& cfg, const std::string& axis, const std::string& value) {
  if (axis == "scorer") {
    cfg.scorer = parse_scorer(value);
  } else if (axis == "alignment") {
    cfg.objective.alignment.kind = parse_alignment(value);
  } else if (axis == "lora") {
    if (value == "off" || value == "0") {
      cfg.lora_rank = 0;
    } else {
      const std::string digits = value.starts_with("r") ? value.substr(1) : value;
      std::size_t pos = 0;
      unsigned long r = 0;
      try {
        r = std::stoul(digits, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (digits.empty() || pos != digits.size()) {
        throw ConfigError("axis lora: '" + value + "' is not 'off' or a rank");
      }
      cfg.lora_rank = r;
    }
  } else if (axis == "lambda") {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != value.size() || !(v >= 0.0)) {
      throw ConfigError("axis lambda: '" + value + "' is not a non-negative number");
    }
    cfg.objective.lambda = v;
  } else if (axis == "objective") {
    if (value == "clean") {
      cfg.objective.include_clean_ce = true;
      cfg.objective.include_adv_ce = false;
      cfg.objective.include_cma = false;
    } else if (value == "clean+adv") {
      cfg.objective.include_clean_ce = true;
      cfg.objective.include_adv_ce = true;
      cfg.objective.include_cma = false;
    } else if (value == "full") {
      cfg.objective.include_clean_ce = true;
      cfg.objective.include_adv_ce = true;
      cfg.objective.include_cma = true;
    } else {
      throw ConfigError("axis objective: unknown value '" + value + "'; accepted: clean, clean+adv, full");
    }
  } else if (axis == "init") {
    if (value == "stage1") {
      cfg.stage2_init = Stage2Init::kStage1;
    } else if (value == "stage0") {
      cfg.stage2_init = Stage2Init::kStage0;
    } else {
      throw ConfigError("axis init: unknown value '" + value + "'; accepted: stage0, stage1");
    }
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "'; accepted: scorer, alignment, lora, lambda, objective, init");
  }
}

std::vector<GridCell> run_ablation_grid(const ExperimentConfig& base, const Dataset& data,
                                        const std::vector<GridAxis>& axes) {
  base.validate();
  std::vector<std::string> seen;
  std::size_t n_cells = 1;
  for (const GridAxis& axis : axes) {
    if (std::find(seen.begin(), seen.end(), axis.name) != seen.end()) {
      throw ConfigError("ablation axis '" + axis.name + "' given twice");
    }
    seen.push_back(axis.name);
    if (axis.values.empty()) throw ConfigError("ablation axis '" + axis.name + "' has no values");
    for (const std::string& v : axis.values) {
      ExperimentConfig probe = base;
      apply_axis_value(probe, axis.name, v);
      probe.validate();
    }
    n_cells *= axis.values.size();
  }

  std::vector<GridCell> cells;
  std::map<std::string, Model> stage0_cache;
  std::map<std::string, Model> stage1_cache;
  const auto samples = eval_samples(base, data);
  for (std::size_t idx = 0; idx < n_cells; ++idx) {
    GridCell cell;
    cell.config = base;
    std::size_t rem = idx;
    for (std::size_t a = axes.size(); a-- > 0;) {
      const std::string& v = axes[a].values[rem % axes[a].values.size()];
      rem /= axes[a].values.size();
      cell.assignment[axes[a].name] = v;
      apply_axis_value(cell.config, axes[a].name, v);
    }
    const ExperimentConfig& cfg = cell.config;
    try {
      const std::string k0 = stage_key(cfg, 0);
      auto it0 = stage0_cache.find(k0);
      if (it0 == stage0_cache.end()) it0 = stage0_cache.emplace(k0, stage0_pretrain(cfg, data)).first;
      const Model* start = &it0->second;
      if (cfg.stage2_init == Stage2Init::kStage1) {
        const std::string k1 = stage_key(cfg, 1);
        auto it1 = stage1_cache.find(k1);
        if (it1 == stage1_cache.end()) it1 = stage1_cache.emplace(k1, stage1_fare(*start, cfg, data)).first;
        start = &it1->second;
      }
      const Model m2 = stage2_rlbind(with_scorer(*start, cfg), cfg, data);
      cell.rows = evaluate(m2, samples, data.spec, eval_options(cfg));
    } catch (const Error& e) {
      cell.error = std::string(e.kind()) + ": " + e.what();
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<MetricsRow> grid_metrics_rows(const std::vector<GridCell>& cells) {
  std::vector<MetricsRow> out;
  for (const GridCell& cell : cells) {
    if (cell.error) continue;
    std::string id;
    for (const auto& [k, v] : cell.assignment) id += (id.empty() ? "" : "+") + k + "=" + v;
    if (id.empty()) id = "base";
    const auto rows = metrics_rows(id, cell.config, cell.rows, cell.config.scorer);
    out.insert(out.end(), rows.begin(), rows.end());
  }
  return out;
}

}  // namespace rlbind
