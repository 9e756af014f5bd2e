// SPDX-License-Identifier: Apache-2.0
#include "rlbind/config.hpp"

#include <cstdio>
#include <functional>
#include <sstream>

#include "rlbind/checkpoint.hpp"
#include "rlbind/error.hpp"

namespace rlbind {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : value) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("key " + key + ": expected " + expected + ", got '" + value + "'");
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (v.empty() || v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    bad_value(key, v, "a non-negative integer");
  }
  if (pos != v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
  if (pos != v.size()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  bad_value(key, v, "true or false");
}

Rational to_rational(const std::string& key, const std::string& v) {
  try {
    return Rational::parse(v);
  } catch (const Error& e) {
    throw ConfigError("key " + key + ": " + e.what());
  }
}

template <typename Fn>
auto named(const std::string& key, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError("key " + key + ": " + e.what());
  }
}

std::string num(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
  return out;
}

struct KeyDef {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

KeyDef schedule_key(const std::string& section, const std::string& field, TrainSchedule ExperimentConfig::*stage) {
  const std::string key = section + "." + field;
  KeyDef def{key, nullptr, nullptr};
  if (field == "epochs") {
    def.set = [=](ExperimentConfig& c, const std::string& v) { (c.*stage).epochs = static_cast<int>(to_uint(key, v)); };
    def.get = [=](const ExperimentConfig& c) { return std::to_string((c.*stage).epochs); };
  } else if (field == "batch_size") {
    def.set = [=](ExperimentConfig& c, const std::string& v) { (c.*stage).batch_size = to_uint(key, v); };
    def.get = [=](const ExperimentConfig& c) { return std::to_string((c.*stage).batch_size); };
  } else if (field == "learning_rate") {
    def.set = [=](ExperimentConfig& c, const std::string& v) { (c.*stage).learning_rate = to_double(key, v); };
    def.get = [=](const ExperimentConfig& c) { return num((c.*stage).learning_rate); };
  } else if (field == "attack_iters") {
    def.set = [=](ExperimentConfig& c, const std::string& v) {
      (c.*stage).attack_iters = static_cast<int>(to_uint(key, v));
    };
    def.get = [=](const ExperimentConfig& c) { return std::to_string((c.*stage).attack_iters); };
  } else {
    def.set = [=](ExperimentConfig& c, const std::string& v) { (c.*stage).epsilon = to_rational(key, v); };
    def.get = [=](const ExperimentConfig& c) { return (c.*stage).epsilon.str(); };
  }
  return def;
}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t;
    // [data]; modalities first so noise_std applies to the final list.
    t.push_back({"data.modalities",
                 [](ExperimentConfig& c, const std::string& v) {
                   const auto names = split_list(v);
                   if (names.empty()) bad_value("data.modalities", v, "a list of image, audio, thermal, video");
                   c.data.modalities.clear();
                   for (const auto& n : names) {
                     c.data.modalities.push_back(named("data.modalities", [&] { return DatasetSpec::preset(n); }));
                   }
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> names;
                   for (const auto& m : c.data.modalities) names.push_back(m.name);
                   return join(names);
                 }});
    t.push_back({"data.noise_std",
                 [](ExperimentConfig& c, const std::string& v) {
                   const auto parts = split_list(v);
                   if (parts.size() != 1 && parts.size() != c.data.modalities.size()) {
                     bad_value("data.noise_std", v, "one value or one per modality");
                   }
                   for (std::size_t i = 0; i < c.data.modalities.size(); ++i) {
                     c.data.modalities[i].noise_std = to_double("data.noise_std", parts[parts.size() == 1 ? 0 : i]);
                   }
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> parts;
                   for (const auto& m : c.data.modalities) parts.push_back(num(m.noise_std));
                   return join(parts);
                 }});
    t.push_back({"data.n_classes", [](ExperimentConfig& c, const std::string& v) { c.data.n_classes = to_uint("data.n_classes", v); },
                 [](const ExperimentConfig& c) { return std::to_string(c.data.n_classes); }});
    t.push_back({"data.samples_per_class",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.data.samples_per_class = to_uint("data.samples_per_class", v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.data.samples_per_class); }});
    t.push_back({"data.latent_dim", [](ExperimentConfig& c, const std::string& v) { c.data.latent_dim = to_uint("data.latent_dim", v); },
                 [](const ExperimentConfig& c) { return std::to_string(c.data.latent_dim); }});
    t.push_back({"data.prototype_scale",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.data.prototype_scale = to_double("data.prototype_scale", v);
                 },
                 [](const ExperimentConfig& c) { return num(c.data.prototype_scale); }});
    t.push_back({"data.prototype_separation",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.data.prototype_separation = to_double("data.prototype_separation", v);
                 },
                 [](const ExperimentConfig& c) { return num(c.data.prototype_separation); }});
    t.push_back({"data.train_fraction",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.data.train_fraction = to_double("data.train_fraction", v);
                 },
                 [](const ExperimentConfig& c) { return num(c.data.train_fraction); }});
    t.push_back({"data.seed", [](ExperimentConfig& c, const std::string& v) { c.data_seed = to_uint("data.seed", v); },
                 [](const ExperimentConfig& c) { return std::to_string(c.data_seed); }});

    // [model]
    t.push_back({"model.hidden",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.geometry.hidden.clear();
                   for (const auto& p : split_list(v)) c.geometry.hidden.push_back(to_uint("model.hidden", p));
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> parts;
                   for (auto h : c.geometry.hidden) parts.push_back(std::to_string(h));
                   return join(parts);
                 }});
    t.push_back({"model.embed_dim", [](ExperimentConfig& c, const std::string& v) { c.geometry.embed_dim = to_uint("model.embed_dim", v); },
                 [](const ExperimentConfig& c) { return std::to_string(c.geometry.embed_dim); }});
    t.push_back({"model.scorer",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.scorer = named("model.scorer", [&] { return parse_scorer(v); });
                 },
                 [](const ExperimentConfig& c) { return std::string(scorer_name(c.scorer)); }});
    t.push_back({"model.trainable_alpha",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.scorer_options.trainable_alpha = to_bool("model.trainable_alpha", v);
                 },
                 [](const ExperimentConfig& c) { return std::string(c.scorer_options.trainable_alpha ? "true" : "false"); }});
    t.push_back({"model.mlp_hidden",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.scorer_options.mlp_hidden = to_uint("model.mlp_hidden", v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.scorer_options.mlp_hidden); }});
    t.push_back({"model.lora_rank", [](ExperimentConfig& c, const std::string& v) { c.lora_rank = to_uint("model.lora_rank", v); },
                 [](const ExperimentConfig& c) { return std::to_string(c.lora_rank); }});
    t.push_back({"model.anchor_max_cosine",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.anchors.max_cosine = to_double("model.anchor_max_cosine", v);
                 },
                 [](const ExperimentConfig& c) { return num(c.anchors.max_cosine); }});
    t.push_back({"model.orthogonal_anchors",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.anchors.orthogonal = to_bool("model.orthogonal_anchors", v);
                 },
                 [](const ExperimentConfig& c) { return std::string(c.anchors.orthogonal ? "true" : "false"); }});

    // [stage0]
    t.push_back(schedule_key("stage0", "epochs", &ExperimentConfig::stage0));
    t.push_back(schedule_key("stage0", "learning_rate", &ExperimentConfig::stage0));
    t.push_back({"stage0.tau", [](ExperimentConfig& c, const std::string& v) { c.infonce.tau = to_double("stage0.tau", v); },
                 [](const ExperimentConfig& c) { return num(c.infonce.tau); }});

    // [stage1]
    for (const char* f : {"epochs", "batch_size", "learning_rate", "attack_iters", "epsilon"}) {
      t.push_back(schedule_key("stage1", f, &ExperimentConfig::stage1));
    }

    // [stage2]
    for (const char* f : {"epochs", "batch_size", "learning_rate", "attack_iters", "epsilon"}) {
      t.push_back(schedule_key("stage2", f, &ExperimentConfig::stage2));
    }
    t.push_back({"stage2.init",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "stage1") {
                     c.stage2_init = Stage2Init::kStage1;
                   } else if (v == "stage0") {
                     c.stage2_init = Stage2Init::kStage0;
                   } else {
                     bad_value("stage2.init", v, "one of stage0, stage1");
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.stage2_init == Stage2Init::kStage1 ? "stage1" : "stage0");
                 }});
    t.push_back({"stage2.lambda", [](ExperimentConfig& c, const std::string& v) { c.objective.lambda = to_double("stage2.lambda", v); },
                 [](const ExperimentConfig& c) { return num(c.objective.lambda); }});
    t.push_back({"stage2.alignment",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.objective.alignment.kind = named("stage2.alignment", [&] { return parse_alignment(v); });
                 },
                 [](const ExperimentConfig& c) { return std::string(alignment_name(c.objective.alignment.kind)); }});
    t.push_back({"stage2.tau_prime",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.objective.alignment.tau_prime = to_double("stage2.tau_prime", v);
                 },
                 [](const ExperimentConfig& c) { return num(c.objective.alignment.tau_prime); }});
    t.push_back({"stage2.clean_ce",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.objective.include_clean_ce = to_bool("stage2.clean_ce", v);
                 },
                 [](const ExperimentConfig& c) { return std::string(c.objective.include_clean_ce ? "true" : "false"); }});
    t.push_back({"stage2.adv_ce",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.objective.include_adv_ce = to_bool("stage2.adv_ce", v);
                 },
                 [](const ExperimentConfig& c) { return std::string(c.objective.include_adv_ce ? "true" : "false"); }});
    t.push_back({"stage2.cma",
                 [](ExperimentConfig& c, const std::string& v) { c.objective.include_cma = to_bool("stage2.cma", v); },
                 [](const ExperimentConfig& c) { return std::string(c.objective.include_cma ? "true" : "false"); }});

    // [eval]
    t.push_back({"eval.epsilons",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval_epsilons.clear();
                   for (const auto& p : split_list(v)) c.eval_epsilons.push_back(to_rational("eval.epsilons", p));
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> parts;
                   for (const auto& e : c.eval_epsilons) parts.push_back(e.str());
                   return join(parts);
                 }});
    t.push_back({"eval.attack",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval_attack = named("eval.attack", [&] { return parse_attack(v); });
                 },
                 [](const ExperimentConfig& c) { return std::string(attack_name(c.eval_attack)); }});
    t.push_back({"eval.iters", [](ExperimentConfig& c, const std::string& v) { c.eval_iters = static_cast<int>(to_uint("eval.iters", v)); },
                 [](const ExperimentConfig& c) { return std::to_string(c.eval_iters); }});
    t.push_back({"eval.restarts",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval_restarts = static_cast<int>(to_uint("eval.restarts", v));
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.eval_restarts); }});
    t.push_back({"eval.per_class", [](ExperimentConfig& c, const std::string& v) { c.eval_per_class = to_uint("eval.per_class", v); },
                 [](const ExperimentConfig& c) { return std::to_string(c.eval_per_class); }});
    t.push_back({"eval.threads", [](ExperimentConfig& c, const std::string& v) { c.threads = static_cast<int>(to_uint("eval.threads", v)); },
                 [](const ExperimentConfig& c) { return std::to_string(c.threads); }});

    // [run]
    t.push_back({"run.seed", [](ExperimentConfig& c, const std::string& v) { c.seed = to_uint("run.seed", v); },
                 [](const ExperimentConfig& c) { return std::to_string(c.seed); }});
    return t;
  }();
  return table;
}

const KeyDef* find_key(const std::string& key) {
  for (const KeyDef& d : key_table()) {
    if (d.key == key) return &d;
  }
  return nullptr;
}

[[noreturn]] void unknown_key(const std::string& key) {
  const auto dot = key.find('.');
  const std::string section = dot == std::string::npos ? key : key.substr(0, dot);
  std::vector<std::string> in_section;
  std::vector<std::string> sections;
  for (const KeyDef& d : key_table()) {
    const std::string s = d.key.substr(0, d.key.find('.'));
    if (s == section) in_section.push_back(d.key.substr(dot + 1));
    if (sections.empty() || sections.back() != s) sections.push_back(s);
  }
  if (in_section.empty()) {
    throw ConfigError("unknown section [" + section + "]; accepted: " + join(sections));
  }
  throw ConfigError("unknown key '" + key + "'; accepted in [" + section + "]: " + join(in_section));
}

}  // namespace

std::string_view source_name(ValueSource source) {
  switch (source) {
    case ValueSource::kDefault: return "default";
    case ValueSource::kFile: return "file";
    case ValueSource::kFlag: return "flag";
  }
  return "?";
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const KeyDef& d : key_table()) k.push_back(d.key);
    return k;
  }();
  return keys;
}

ResolvedConfig parse_config_text(std::string_view text, const std::vector<std::string>& overrides) {
  std::map<std::string, std::pair<std::string, ValueSource>> given;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      bool known = false;
      for (const auto& k : config_keys()) known = known || k.starts_with(section + ".");
      if (!known) unknown_key(section);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    if (section.empty()) throw ConfigError(where + "key outside of any [section]");
    const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
    if (find_key(key) == nullptr) unknown_key(key);
    if (given.count(key) != 0) throw ConfigError(where + "key '" + key + "' given twice");
    given[key] = {trim(std::string_view(line).substr(eq + 1)), ValueSource::kFile};
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + ov + "' is not of the form section.key=value");
    const std::string key = trim(std::string_view(ov).substr(0, eq));
    if (find_key(key) == nullptr) unknown_key(key);
    given[key] = {trim(std::string_view(ov).substr(eq + 1)), ValueSource::kFlag};
  }

  ResolvedConfig out;
  for (const KeyDef& d : key_table()) {
    const auto it = given.find(d.key);
    if (it == given.end()) {
      out.provenance[d.key] = ValueSource::kDefault;
      continue;
    }
    d.set(out.config, it->second.first);
    out.provenance[d.key] = it->second.second;
  }
  out.config.validate();
  return out;
}

ResolvedConfig parse_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  std::string text;
  if (path) {
    if (!std::filesystem::exists(*path)) throw ConfigError("config file '" + path->string() + "' does not exist");
    text = read_file(*path);
  }
  return parse_config_text(text, overrides);
}

std::string config_value(const ExperimentConfig& cfg, const std::string& key) {
  const KeyDef* d = find_key(key);
  if (d == nullptr) unknown_key(key);
  return d->get(cfg);
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const KeyDef& d : key_table()) {
    const auto dot = d.key.find('.');
    const std::string s = d.key.substr(0, dot);
    if (s != section) {
      os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    os << d.key.substr(dot + 1) << " = " << d.get(cfg) << '\n';
  }
  return os.str();
}

}  // namespace rlbind
