// SPDX-License-Identifier: Apache-2.0
#include <filesystem>

#include "doctest.h"
#include "rlbind/checkpoint.hpp"
#include "rlbind/error.hpp"

using namespace rlbind;
using grad::Tensor;
namespace fs = std::filesystem;

namespace {

TensorContainer sample_container() {
  TensorContainer c;
  c.meta = {{"kind", "test"}, {"n", 2}};
  c.tensors.emplace_back("a", Tensor::matrix(2, 2, {1.0, -2.5, 3.25, 1e-300}));
  c.tensors.emplace_back("b", Tensor::vector({0.1, 0.2, 0.3}));
  return c;
}

}  // namespace

TEST_CASE("container round-trip") {
  const std::string bytes = encode_container(sample_container());
  CHECK(bytes.substr(0, 4) == "RLBD");
  const TensorContainer back = decode_container(bytes);
  CHECK(back.meta == sample_container().meta);
  CHECK(back.get("a").to_vector() == sample_container().get("a").to_vector());
  CHECK(back.get("a").shape() == grad::Shape{2, 2});
  CHECK(back.contains("b"));
  CHECK_FALSE(back.contains("c"));
  CHECK_THROWS_AS(back.get("c"), FormatError);
  CHECK(encode_container(back) == bytes);
}

TEST_CASE("corrupt containers fail cleanly") {
  const std::string bytes = encode_container(sample_container());
  for (std::size_t cut : {0ul, 3ul, 10ul, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(decode_container(bytes.substr(0, cut)), FormatError);
  }
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_container(bad), FormatError);
  CHECK_THROWS_AS(decode_container(bytes + "x"), FormatError);
}

TEST_CASE("atomic file writes") {
  const fs::path dir = fs::temp_directory_path() / "rlbind_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path p = dir / "c.rlbd";
  save_container(p, sample_container());
  CHECK(load_container(p).get("b").to_vector() == std::vector<double>{0.1, 0.2, 0.3});
  write_file_atomic(p, "replaced");
  CHECK(read_file(p) == "replaced");
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.is_regular_file() ? 1 : 0;
  CHECK(files == 1);
  fs::remove_all(dir);
  CHECK_THROWS_AS(read_file(p), FormatError);
}
