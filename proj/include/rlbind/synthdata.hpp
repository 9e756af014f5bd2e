// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic multi-modal classification data. Every class owns a latent
// prototype; a modality observes sigmoid(M_m · f(prototype + noise)) where
// M_m is the modality's mixing matrix and f is identity or tanh.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace rlbind {

struct ModalitySpec {
  std::string name;
  std::size_t input_dim = 32;
  std::uint64_t mixing_seed = 1;
  double noise_std = 0.25;
  bool tanh_nonlinearity = false;
  double mixing_gain = 0.7;
};

struct DatasetSpec {
  std::size_t n_classes = 8;
  std::size_t samples_per_class = 200;
  std::size_t latent_dim = 4;
  // Prototype coordinates are N(0, prototype_scale^2).
  double prototype_scale = 0.7;
  // Minimum pairwise distance between class prototypes (rejection sampled).
  double prototype_separation = 0.0;
  double train_fraction = 0.8;
  std::vector<ModalitySpec> modalities;

  // Two modalities: "image" (linear mixing) and "audio" (tanh, other mixing).
  static DatasetSpec defaults();
  // Named presets: image, audio, thermal, video.
  static ModalitySpec preset(const std::string& name);
  void validate() const;
};

enum class Split { kTrain, kTest };

struct Sample {
  std::vector<std::vector<double>> inputs;  // one vector per modality, values in [0, 1]
  std::size_t label = 0;
  Split split = Split::kTrain;
};

struct Dataset {
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;

  std::size_t modality_index(const std::string& name) const;
  std::vector<const Sample*> subset(Split split) const;
};

// Samples are tagged train/test by a stratified split at spec.train_fraction.
Dataset generate(const DatasetSpec& spec, std::uint64_t seed);

// Per-class stratified split: floor(fraction * n_c) train, the rest test.
std::pair<std::vector<Sample>, std::vector<Sample>> split(const std::vector<Sample>& samples,
                                                          std::size_t n_classes, double train_fraction,
                                                          std::uint64_t seed);

// min(k, available) samples per class, drawn without replacement; keeps the
// input order of the chosen samples.
std::vector<Sample> sample_eval_subset(const std::vector<Sample>& test, std::size_t n_classes,
                                       std::size_t k_per_class, std::uint64_t seed);

// Latent prototypes exactly as generate() draws them (for tests and probes).
std::vector<std::vector<double>> class_prototypes(const DatasetSpec& spec, std::uint64_t seed);

nlohmann::json spec_to_json(const DatasetSpec& spec);
DatasetSpec spec_from_json(const nlohmann::json& j);

// Directory dump: manifest.json (spec + seed) and data.rlbd (tensor container).
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace rlbind
