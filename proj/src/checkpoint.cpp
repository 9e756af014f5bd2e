// SPDX-License-Identifier: Apache-2.0
#include "rlbind/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rlbind/error.hpp"

namespace rlbind {

namespace {

constexpr char kMagic[4] = {'R', 'L', 'B', 'D'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

double get_f64(std::string_view in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

const grad::Tensor& TensorContainer::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("container: missing tensor '" + name + "'");
}

bool TensorContainer::contains(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

std::string encode_container(const TensorContainer& container) {
  nlohmann::json manifest;
  manifest["meta"] = container.meta;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : container.tensors) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  const std::string text = manifest.dump();
  std::string out(kMagic, 4);
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& entry : container.tensors) {
    for (double v : entry.second.values()) put_f64(out, v);
  }
  return out;
}

TensorContainer decode_container(std::string_view bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("container: bad magic (not an RLBD file)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kContainerVersion) {
    throw FormatError("container: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kContainerVersion) + ")");
  }
  const std::uint32_t manifest_len = get_u32(bytes, 8);
  if (bytes.size() < 12ull + manifest_len) throw FormatError("container: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(12, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw FormatError("container: manifest lacks a tensor list");
  }
  TensorContainer out;
  out.meta = manifest.value("meta", nlohmann::json::object());
  std::size_t at = 12ull + manifest_len;
  for (const auto& entry : manifest["tensors"]) {
    grad::Shape shape;
    std::string name;
    try {
      name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<grad::Shape>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("container: malformed tensor entry: ") + e.what());
    }
    const std::size_t n = grad::shape_numel(shape);
    if (bytes.size() < at + 8 * n) {
      throw FormatError("container: truncated data for tensor '" + name + "'");
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_f64(bytes, at + 8 * i);
    at += 8 * n;
    try {
      out.tensors.emplace_back(name, grad::Tensor(shape, std::move(values)));
    } catch (const ShapeError& e) {
      throw FormatError("container: tensor '" + name + "': " + e.what());
    }
  }
  if (at != bytes.size()) throw FormatError("container: trailing bytes after tensor data");
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void save_container(const std::filesystem::path& path, const TensorContainer& container) {
  write_file_atomic(path, encode_container(container));
}

TensorContainer load_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

}  // namespace rlbind
