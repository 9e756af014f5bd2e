// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "rlbind/checkpoint.hpp"
#include "rlbind/encoders.hpp"
#include "rlbind/error.hpp"
#include "rlbind/rng.hpp"

using namespace rlbind;
using grad::Tensor;

namespace {

std::vector<double> random_input(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform();
  return v;
}

// Straight-line forward pass over raw vectors.
std::vector<double> oracle_forward(const Encoder& enc, std::vector<double> x) {
  for (const Layer& layer : enc.layers()) {
    const auto w = layer.weight.values();
    const auto b = layer.bias.values();
    std::vector<double> y(layer.out_dim());
    for (std::size_t o = 0; o < y.size(); ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < x.size(); ++i) acc += w[o * x.size() + i] * x[i];
      y[o] = layer.activation == Activation::kRelu ? std::max(0.0, acc) : acc;
    }
    x = std::move(y);
  }
  return x;
}

std::uint64_t encoder_hash(const Encoder& enc) {
  TensorContainer c;
  c.tensors = enc.named_tensors("enc.");
  return fnv1a(encode_container(c));
}

void perturb(const Encoder& enc) {
  for (Tensor p : enc.trainable_parameters()) {
    for (double& v : p.mutable_values()) v += 0.01;
  }
}

}  // namespace

TEST_CASE("zero weights give a zero embedding") {
  std::vector<Layer> layers;
  layers.push_back({Tensor::zeros({4, 3}), Tensor::zeros({4}), Activation::kRelu, std::nullopt});
  layers.push_back({Tensor::zeros({2, 4}), Tensor::zeros({2}), Activation::kNone, std::nullopt});
  const Encoder enc(std::move(layers));
  for (double v : enc.encode(std::vector<double>{0.3, 0.9, 0.1})) CHECK(v == 0.0);
}

TEST_CASE("identity layer passes input through") {
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[static_cast<std::size_t>(i * 4)] = 1.0;
  const Encoder enc({{Tensor::matrix(3, 3, eye), Tensor::zeros({3}), Activation::kNone, std::nullopt}});
  const std::vector<double> x{0.25, -1.5, 7.0};
  CHECK(enc.encode(x) == x);
}

TEST_CASE("random encoder matches a straight-line oracle") {
  Rng rng(3);
  const Encoder enc = Encoder::random({5, {7}, 4}, 17);
  REQUIRE(enc.layers().size() == 2);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_input(rng, 5);
    const auto got = enc.encode(x);
    const auto want = oracle_forward(enc, x);
    for (std::size_t k = 0; k < got.size(); ++k) CHECK(std::fabs(got[k] - want[k]) <= 1e-12);
  }
  // Batched forward agrees row by row.
  const auto x0 = random_input(rng, 5);
  const auto x1 = random_input(rng, 5);
  std::vector<double> flat = x0;
  flat.insert(flat.end(), x1.begin(), x1.end());
  const Tensor batch = enc.forward(Tensor::matrix(2, 5, flat));
  const auto e1 = enc.encode(x1);
  for (std::size_t k = 0; k < 4; ++k) CHECK(batch.at(4 + k) == doctest::Approx(e1[k]).epsilon(1e-14));
}

TEST_CASE("input dimension is checked") {
  const Encoder enc = Encoder::random({5, {7}, 4}, 1);
  CHECK_THROWS_AS(enc.encode(std::vector<double>(4, 0.0)), ShapeError);
}

TEST_CASE("frozen snapshot is unaffected by training") {
  const Encoder enc = Encoder::random({6, {8, 8}, 4}, 9);
  const Encoder snap = enc.snapshot_frozen();
  const std::vector<double> x(6, 0.5);
  CHECK(snap.encode(x) == enc.encode(x));
  CHECK(snap.trainable_parameters().empty());
  const auto before = encoder_hash(snap);
  for (int step = 0; step < 10; ++step) perturb(enc);
  CHECK(snap.encode(x) != enc.encode(x));
  CHECK(encoder_hash(snap) == before);
}

TEST_CASE("lora adapters") {
  const EncoderGeometry geom{10, {12, 12}, 6};
  const Encoder base = Encoder::random(geom, 4);
  const std::size_t rank = 2;
  const Encoder adapted = base.attach_lora(rank, 8);
  const std::vector<double> x(10, 0.3);

  SUBCASE("forward equals base right after attaching") { CHECK(adapted.encode(x) == base.encode(x)); }

  SUBCASE("trainable count is rank*(in+out) plus biases") {
    std::size_t want = 0;
    for (const Layer& l : base.layers()) want += rank * (l.in_dim() + l.out_dim()) + l.out_dim();
    CHECK(adapted.trainable_parameter_count() == want);
    CHECK(adapted.adapter_rank() == rank);
  }

  SUBCASE("a gradient step moves the adapted output but not the base weights") {
    std::vector<std::vector<double>> base_weights;
    for (const Layer& l : adapted.layers()) base_weights.push_back(l.weight.to_vector());
    const Tensor xt = Tensor::vector(x);
    grad::value_and_grad([&] { return grad::sum(grad::power(adapted.forward(xt), 2.0)); });
    for (Tensor p : adapted.trainable_parameters()) {
      auto v = p.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 0.1 * p.grad()[i];
    }
    CHECK(adapted.encode(x) != base.encode(x));
    for (std::size_t i = 0; i < base_weights.size(); ++i) {
      CHECK(adapted.layers()[i].weight.to_vector() == base_weights[i]);
      CHECK_FALSE(adapted.layers()[i].weight.requires_grad());
    }
  }

  CHECK_THROWS_AS(adapted.attach_lora(1, 0), ArgumentError);
  CHECK_THROWS_AS(base.attach_lora(6, 0), ArgumentError);
}

TEST_CASE("anchor matrix") {
  SUBCASE("two orthogonal anchors in the plane") {
    const AnchorMatrix a = build_anchor_matrix(5, 2, 2, {0.5, true});
    const auto c0 = a.column(0);
    const auto c1 = a.column(1);
    CHECK(std::fabs(c0[0] * c1[0] + c0[1] * c1[1]) <= 1e-12);
  }
  SUBCASE("unit columns and bounded pairwise cosine") {
    const AnchorMatrix a = build_anchor_matrix(21, 8, 16);
    for (std::size_t c = 0; c < 8; ++c) {
      const auto col = a.column(c);
      double n = 0.0;
      for (double v : col) n += v * v;
      CHECK(std::fabs(std::sqrt(n) - 1.0) <= 1e-12);
      for (std::size_t k = 0; k < c; ++k) {
        const auto other = a.column(k);
        double d = 0.0;
        for (std::size_t i = 0; i < col.size(); ++i) d += col[i] * other[i];
        CHECK(d <= 0.5);
      }
    }
  }
  SUBCASE("same seed gives the same matrix") {
    CHECK(build_anchor_matrix(3, 8, 16).matrix().to_vector() == build_anchor_matrix(3, 8, 16).matrix().to_vector());
    CHECK(build_anchor_matrix(3, 8, 16).matrix().to_vector() != build_anchor_matrix(4, 8, 16).matrix().to_vector());
  }
  CHECK_THROWS_AS(build_anchor_matrix(1, 1, 4), ArgumentError);
  CHECK_THROWS_AS(build_anchor_matrix(1, 5, 4, {0.5, true}), ArgumentError);
}
