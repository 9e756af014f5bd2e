// SPDX-License-Identifier: Apache-2.0
#include "rlbind/synthdata.hpp"

#include <algorithm>
#include <cmath>

#include "rlbind/checkpoint.hpp"
#include "rlbind/error.hpp"
#include "rlbind/rng.hpp"

namespace rlbind {

namespace {

std::vector<std::vector<double>> mixing_matrix(const ModalitySpec& m, std::size_t latent_dim,
                                               std::uint64_t seed) {
  Rng rng(mix_seed(mix_seed(seed, "mixing"), m.mixing_seed));
  const double scale = m.mixing_gain / std::sqrt(static_cast<double>(latent_dim));
  std::vector<std::vector<double>> mat(m.input_dim, std::vector<double>(latent_dim));
  for (auto& row : mat)
    for (double& v : row) v = scale * rng.normal();
  return mat;
}

std::vector<bool> train_mask(const std::vector<Sample>& samples, std::size_t n_classes,
                             double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("split: train_fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label >= n_classes) throw ArgumentError("split: label out of range");
    by_class[samples[i].label].push_back(i);
  }
  Rng rng(seed);
  std::vector<bool> to_train(samples.size(), false);
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2) {
      throw ArgumentError("split: class " + std::to_string(c) + " has fewer than 2 samples");
    }
    rng.shuffle(idx.begin(), idx.end());
    const auto n_train =
        static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size()) + 1e-9));
    for (std::size_t j = 0; j < n_train; ++j) to_train[idx[j]] = true;
  }
  return to_train;
}

}  // namespace

ModalitySpec DatasetSpec::preset(const std::string& name) {
  if (name == "image") return {"image", 32, 1, 0.25, false, 0.7};
  if (name == "audio") return {"audio", 32, 2, 0.25, true, 0.7};
  if (name == "thermal") return {"thermal", 32, 3, 0.20, false, 0.7};
  if (name == "video") return {"video", 32, 4, 0.30, true, 0.7};
  throw ConfigError("unknown modality '" + name + "'; accepted: image, audio, thermal, video");
}

DatasetSpec DatasetSpec::defaults() {
  DatasetSpec s;
  s.modalities = {preset("image"), preset("audio")};
  return s;
}

void DatasetSpec::validate() const {
  if (n_classes < 2) throw ArgumentError("dataset: need at least 2 classes");
  if (samples_per_class < 2) throw ArgumentError("dataset: need at least 2 samples per class");
  if (latent_dim < 1) throw ArgumentError("dataset: latent_dim must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("dataset: train_fraction must lie in (0, 1)");
  }
  if (modalities.empty()) throw ArgumentError("dataset: no modalities");
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    const auto& m = modalities[i];
    if (m.input_dim < 1 || !(m.noise_std >= 0.0)) {
      throw ArgumentError("dataset: modality '" + m.name + "' has invalid input_dim or noise_std");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (modalities[j].name == m.name) throw ArgumentError("dataset: duplicate modality '" + m.name + "'");
    }
  }
}

std::size_t Dataset::modality_index(const std::string& name) const {
  for (std::size_t i = 0; i < spec.modalities.size(); ++i) {
    if (spec.modalities[i].name == name) return i;
  }
  throw ArgumentError("dataset: no modality named '" + name + "'");
}

std::vector<const Sample*> Dataset::subset(Split which) const {
  std::vector<const Sample*> out;
  for (const Sample& s : samples) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

std::vector<std::vector<double>> class_prototypes(const DatasetSpec& spec, std::uint64_t seed) {
  Rng rng(mix_seed(seed, "prototypes"));
  std::vector<std::vector<double>> protos;
  int attempts = 0;
  while (protos.size() < spec.n_classes) {
    if (++attempts > 10000) {
      throw ArgumentError("dataset: cannot place prototypes at separation " +
                          std::to_string(spec.prototype_separation));
    }
    std::vector<double> p(spec.latent_dim);
    for (double& v : p) v = spec.prototype_scale * rng.normal();
    bool ok = true;
    for (const auto& q : protos) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) d2 += (p[i] - q[i]) * (p[i] - q[i]);
      if (std::sqrt(d2) < spec.prototype_separation) {
        ok = false;
        break;
      }
    }
    if (ok) protos.push_back(std::move(p));
  }
  return protos;
}

Dataset generate(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto protos = class_prototypes(spec, seed);
  std::vector<std::vector<std::vector<double>>> mixing;
  for (const auto& m : spec.modalities) mixing.push_back(mixing_matrix(m, spec.latent_dim, seed));

  Rng rng(mix_seed(seed, "samples"));
  std::vector<Sample> samples;
  samples.reserve(spec.n_classes * spec.samples_per_class);
  std::vector<double> latent(spec.latent_dim);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      Sample s;
      s.label = c;
      for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
        const auto& ms = spec.modalities[m];
        for (std::size_t k = 0; k < spec.latent_dim; ++k) {
          latent[k] = protos[c][k] + ms.noise_std * rng.normal();
          if (ms.tanh_nonlinearity) latent[k] = std::tanh(latent[k]);
        }
        std::vector<double> x(ms.input_dim);
        for (std::size_t r = 0; r < ms.input_dim; ++r) {
          double a = 0.0;
          for (std::size_t k = 0; k < spec.latent_dim; ++k) a += mixing[m][r][k] * latent[k];
          x[r] = 1.0 / (1.0 + std::exp(-a));
        }
        s.inputs.push_back(std::move(x));
      }
      samples.push_back(std::move(s));
    }
  }

  const auto mask = train_mask(samples, spec.n_classes, spec.train_fraction, mix_seed(seed, "split"));
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].split = mask[i] ? Split::kTrain : Split::kTest;
  return Dataset{spec, seed, std::move(samples)};
}

std::pair<std::vector<Sample>, std::vector<Sample>> split(const std::vector<Sample>& samples,
                                                          std::size_t n_classes, double train_fraction,
                                                          std::uint64_t seed) {
  const auto mask = train_mask(samples, n_classes, train_fraction, seed);
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Sample s = samples[i];
    s.split = mask[i] ? Split::kTrain : Split::kTest;
    (mask[i] ? out.first : out.second).push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> sample_eval_subset(const std::vector<Sample>& test, std::size_t n_classes,
                                       std::size_t k_per_class, std::uint64_t seed) {
  if (k_per_class < 1) throw ArgumentError("sample_eval_subset: k_per_class must be >= 1");
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test[i].label >= n_classes) throw ArgumentError("sample_eval_subset: label out of range");
    by_class[test[i].label].push_back(i);
  }
  Rng rng(seed);
  std::vector<bool> keep(test.size(), false);
  for (auto& idx : by_class) {
    if (idx.size() > k_per_class) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(k_per_class);
    }
    for (std::size_t i : idx) keep[i] = true;
  }
  std::vector<Sample> out;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (keep[i]) out.push_back(test[i]);
  }
  return out;
}

nlohmann::json spec_to_json(const DatasetSpec& spec) {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : spec.modalities) {
    mods.push_back({{"name", m.name},
                    {"input_dim", m.input_dim},
                    {"mixing_seed", m.mixing_seed},
                    {"noise_std", m.noise_std},
                    {"tanh", m.tanh_nonlinearity},
                    {"mixing_gain", m.mixing_gain}});
  }
  return {{"n_classes", spec.n_classes},
          {"samples_per_class", spec.samples_per_class},
          {"latent_dim", spec.latent_dim},
          {"prototype_scale", spec.prototype_scale},
          {"prototype_separation", spec.prototype_separation},
          {"train_fraction", spec.train_fraction},
          {"modalities", mods}};
}

DatasetSpec spec_from_json(const nlohmann::json& j) {
  try {
    DatasetSpec s;
    s.n_classes = j.at("n_classes").get<std::size_t>();
    s.samples_per_class = j.at("samples_per_class").get<std::size_t>();
    s.latent_dim = j.at("latent_dim").get<std::size_t>();
    s.prototype_scale = j.at("prototype_scale").get<double>();
    s.prototype_separation = j.at("prototype_separation").get<double>();
    s.train_fraction = j.at("train_fraction").get<double>();
    for (const auto& m : j.at("modalities")) {
      s.modalities.push_back({m.at("name").get<std::string>(), m.at("input_dim").get<std::size_t>(),
                              m.at("mixing_seed").get<std::uint64_t>(), m.at("noise_std").get<double>(),
                              m.at("tanh").get<bool>(), m.at("mixing_gain").get<double>()});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  }
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  TensorContainer c;
  c.meta = {{"kind", "dataset"}, {"seed", data.seed}};
  const std::size_t n = data.samples.size();
  std::vector<double> labels(n);
  std::vector<double> splits(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<double>(data.samples[i].label);
    splits[i] = data.samples[i].split == Split::kTest ? 1.0 : 0.0;
  }
  c.tensors.emplace_back("labels", grad::Tensor::vector(labels));
  c.tensors.emplace_back("splits", grad::Tensor::vector(splits));
  for (std::size_t m = 0; m < data.spec.modalities.size(); ++m) {
    const std::size_t dim = data.spec.modalities[m].input_dim;
    std::vector<double> flat;
    flat.reserve(n * dim);
    for (const Sample& s : data.samples) flat.insert(flat.end(), s.inputs[m].begin(), s.inputs[m].end());
    c.tensors.emplace_back("inputs." + data.spec.modalities[m].name, grad::Tensor::matrix(n, dim, flat));
  }
  nlohmann::json manifest = {{"format", "rlbind-dataset"}, {"version", 1}, {"seed", data.seed},
                             {"spec", spec_to_json(data.spec)}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  save_container(dir / "data.rlbd", c);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "rlbind-dataset") throw FormatError("dataset manifest: wrong format tag");
  Dataset d;
  d.spec = spec_from_json(manifest.at("spec"));
  d.seed = manifest.at("seed").get<std::uint64_t>();
  const TensorContainer c = load_container(dir / "data.rlbd");
  const auto labels = c.get("labels").values();
  const auto splits = c.get("splits").values();
  const std::size_t n = labels.size();
  if (splits.size() != n) throw FormatError("dataset: labels and splits differ in length");
  d.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.samples[i].label = static_cast<std::size_t>(labels[i]);
    d.samples[i].split = splits[i] != 0.0 ? Split::kTest : Split::kTrain;
  }
  for (const auto& m : d.spec.modalities) {
    const grad::Tensor& t = c.get("inputs." + m.name);
    if (t.shape() != grad::Shape{n, m.input_dim}) throw FormatError("dataset: inputs." + m.name + " has wrong shape");
    const auto v = t.values();
    for (std::size_t i = 0; i < n; ++i) d.samples[i].inputs.emplace_back(v.begin() + i * m.input_dim, v.begin() + (i + 1) * m.input_dim);
  }
  return d;
}

}  // namespace rlbind
