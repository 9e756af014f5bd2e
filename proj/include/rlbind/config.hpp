// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration files: INI-style sections with `key = value`
// lines, '#' or ';' comments. Unknown sections and keys are rejected.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlbind/pipeline.hpp"

namespace rlbind {

enum class ValueSource { kDefault, kFile, kFlag };

std::string_view source_name(ValueSource source);

struct ResolvedConfig {
  ExperimentConfig config;
  // Keyed by "section.key"; covers every documented key.
  std::map<std::string, ValueSource> provenance;
};

// Every accepted "section.key", in application order.
const std::vector<std::string>& config_keys();

// text: file contents (may be empty); overrides: "section.key=value" items,
// applied over the file.
ResolvedConfig parse_config_text(std::string_view text, const std::vector<std::string>& overrides = {});
ResolvedConfig parse_config(const std::optional<std::filesystem::path>& path,
                            const std::vector<std::string>& overrides = {});

// Current value of one key, formatted as the parser accepts it.
std::string config_value(const ExperimentConfig& cfg, const std::string& key);
// Complete config file for cfg; parses back to an equal config.
std::string render_config(const ExperimentConfig& cfg);

}  // namespace rlbind
