// SPDX-License-Identifier: Apache-2.0
//
// Three-stage training (InfoNCE pretraining, FARE hardening, adversarial
// cross-modal alignment), clean/robust evaluation and ablation grids.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlbind/attacks.hpp"
#include "rlbind/correspondence.hpp"
#include "rlbind/encoders.hpp"
#include "rlbind/losses.hpp"
#include "rlbind/rational.hpp"
#include "rlbind/synthdata.hpp"

namespace rlbind {

inline constexpr const char* kLibraryVersion = "0.1.0";

struct TrainSchedule {
  int epochs = 1;
  std::size_t batch_size = 8;
  double learning_rate = 0.01;
  int attack_iters = 10;
  Rational epsilon;  // training attack radius (stages 1 and 2)
};

enum class Stage2Init { kStage1, kStage0 };

struct ExperimentConfig {
  DatasetSpec data = DatasetSpec::defaults();
  std::uint64_t data_seed = 0;

  EncoderGeometry geometry;  // input_dim is taken from each modality
  AnchorOptions anchors;
  ScorerKind scorer = ScorerKind::kDot;
  ScorerOptions scorer_options;
  std::size_t lora_rank = 0;  // 0 = full fine-tuning

  InfoNCEConfig infonce;
  TrainSchedule stage0{3, 8, 0.05, 0, {}};
  TrainSchedule stage1{8, 4, 0.01, 10, {3, 40}};
  TrainSchedule stage2{10, 4, 0.01, 10, {3, 40}};
  Stage2Config objective;
  Stage2Init stage2_init = Stage2Init::kStage1;

  std::vector<Rational> eval_epsilons{{1, 20}, {1, 10}};
  AttackMode eval_attack = AttackMode::kApgd;
  int eval_iters = 100;
  int eval_restarts = 1;
  std::size_t eval_per_class = 0;  // 0 = whole test split
  int threads = 1;

  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  // Stable 16-hex-digit digest of to_json().
  std::string hash() const;
};

// Digest of the fields that influence a given stage's trained weights.
std::string stage_key(const ExperimentConfig& cfg, int stage);

// One modality's trainable path from raw input to anchor scores.
struct Branch {
  std::string modality;
  Encoder encoder;
  Scorer scorer;
};

struct Model {
  AnchorMatrix anchors;
  std::vector<Branch> branches;
  std::string stage = "stage0";
  std::string tag = "base";

  const Branch& branch(const std::string& modality) const;
  Branch& branch(const std::string& modality);
  Model clone() const;
};

struct TrainLog {
  // Per-modality loss after each step.
  std::map<std::string, std::vector<double>> losses;
};

// Untrained model: anchors, random encoders and default scorers.
Model init_model(const ExperimentConfig& cfg);
// Copy of model whose scorers are replaced by fresh ones of cfg.scorer, as
// init_model would build them.
Model with_scorer(const Model& model, const ExperimentConfig& cfg);

Model stage0_pretrain(const ExperimentConfig& cfg, const Dataset& data, TrainLog* log = nullptr);
Model stage1_fare(const Model& model, const ExperimentConfig& cfg, const Dataset& data,
                  TrainLog* log = nullptr);
Model stage2_rlbind(const Model& model, const ExperimentConfig& cfg, const Dataset& data,
                    TrainLog* log = nullptr);

// Name for a FARE-hardened model: "FARE<k>" for epsilon = k/255.
std::string fare_tag(const Rational& epsilon);

struct EvalRow {
  std::string stage;
  std::string modality;
  Rational epsilon;
  std::size_t total = 0;
  std::size_t clean_correct = 0;
  std::size_t robust_correct = 0;

  double clean_acc() const;
  double robust_acc() const;
};

struct EvalOptions {
  std::vector<Rational> epsilons;
  AttackMode attack = AttackMode::kApgd;
  int iters = 100;
  int restarts = 1;
  std::uint64_t seed = 0;
  int threads = 1;
};

EvalOptions eval_options(const ExperimentConfig& cfg);

// Samples are evaluated per modality; a sample misclassified clean counts as
// non-robust without being attacked.
std::vector<EvalRow> evaluate(const Model& model, const std::vector<Sample>& samples,
                              const DatasetSpec& spec, const EvalOptions& options);

// The split evaluate() is run on by the pipeline: the test split, optionally
// thinned to eval_per_class.
std::vector<Sample> eval_samples(const ExperimentConfig& cfg, const Dataset& data);

struct PipelineResult {
  std::vector<Model> models;  // one per completed stage
  std::vector<EvalRow> rows;
  TrainLog log;
  double wall_seconds = 0.0;
};

// stage 0, 1 and 2 in sequence (stages >= last_stage are skipped), each
// evaluated on eval_samples().
PipelineResult run_pipeline(const ExperimentConfig& cfg, const Dataset& data, int last_stage = 2);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const Model& model);
Model decode_checkpoint(std::string_view bytes);

// ---- metrics --------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "run_id,stage,modality,scorer,alignment,lora,lambda,epsilon,clean_acc,robust_acc,seed,config_hash";

struct MetricsRow {
  std::string run_id;
  std::string stage;
  std::string modality;
  std::string scorer;
  std::string alignment;
  std::string lora;
  std::string lambda;
  std::string epsilon;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

std::vector<MetricsRow> metrics_rows(const std::string& run_id, const ExperimentConfig& cfg,
                                     const std::vector<EvalRow>& rows, ScorerKind scorer);
std::string format_metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
// Resolved config plus library version, beside the CSV.
void write_run_manifest(const std::filesystem::path& path, const ExperimentConfig& cfg,
                        const nlohmann::json& extra = nlohmann::json::object());

// ---- ablation grids -------------------------------------------------------

struct GridAxis {
  std::string name;  // scorer | alignment | lora | lambda | objective | init
  std::vector<std::string> values;
};

// Applies one axis value to a config; throws ConfigError on unknown axes or
// variants.
void apply_axis_value(ExperimentConfig& cfg, const std::string& axis, const std::string& value);

struct GridCell {
  std::map<std::string, std::string> assignment;
  ExperimentConfig config;
  std::vector<EvalRow> rows;  // evaluation of the stage-2 model
  std::optional<std::string> error;
};

// Cartesian product of axis values; every variant is validated before the
// first run. Stage-0/1 models are shared between cells with equal stage keys.
std::vector<GridCell> run_ablation_grid(const ExperimentConfig& base, const Dataset& data,
                                        const std::vector<GridAxis>& axes);

std::vector<MetricsRow> grid_metrics_rows(const std::vector<GridCell>& cells);

}  // namespace rlbind
