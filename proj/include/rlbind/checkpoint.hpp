// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor container:
//   "RLBD" | u32 LE version (=1) | u32 LE manifest length | manifest (UTF-8 JSON)
//   | each tensor's values as contiguous little-endian f64, in manifest order.
// The manifest is {"meta": {...}, "tensors": [{"name": ..., "shape": [...]}, ...]}.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rlbind/gradcore.hpp"

namespace rlbind {

inline constexpr std::uint32_t kContainerVersion = 1;

struct TensorContainer {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, grad::Tensor>> tensors;

  const grad::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::string encode_container(const TensorContainer& container);
TensorContainer decode_container(std::string_view bytes);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

void save_container(const std::filesystem::path& path, const TensorContainer& container);
TensorContainer load_container(const std::filesystem::path& path);

}  // namespace rlbind
