// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "rlbind/error.hpp"
#include "rlbind/gradcore.hpp"
#include "rlbind/rng.hpp"
#include "support/fd.hpp"

using namespace rlbind;
using namespace rlbind::grad;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("matmul of all-ones 2x3 and 3x2") {
  const Tensor a = Tensor::full({2, 3}, 1.0);
  const Tensor b = Tensor::full({3, 2}, 1.0);
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  for (double v : c.values()) CHECK(v == 3.0);
}

TEST_CASE("softmax of equal logits is uniform") {
  const Tensor s = softmax(Tensor::vector({0.0, 0.0, 0.0}));
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax is stable for large logits") {
  const Tensor s = softmax(Tensor::vector({1000.0, 1000.0}));
  CHECK(s.at(0) == doctest::Approx(0.5));
  const Tensor ls = log_softmax(Tensor::vector({1000.0, 0.0}));
  CHECK(std::isfinite(ls.at(1)));
  CHECK(ls.at(1) == doctest::Approx(-1000.0));
}

TEST_CASE("l2 norm and normalize") {
  CHECK(l2_norm(Tensor::vector({3.0, 4.0})).item() == 5.0);
  const Tensor n = l2_normalize(Tensor::vector({3.0, 4.0}));
  CHECK(n.at(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n.at(1) == doctest::Approx(0.8).epsilon(1e-15));

  const Tensor unit = Tensor::vector({0.0, 1.0, 0.0});
  CHECK(l2_normalize(unit).to_vector() == unit.to_vector());

  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const Tensor r = l2_normalize(random_tensor(rng, {16}, 5.0));
    CHECK(std::fabs(l2_norm(r).item() - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(l2_normalize(Tensor::zeros({3})), DegenerateError);
}

TEST_CASE("gradient of sum of squares") {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  const double v = value_and_grad([&] { return sum(mul(x, x)); });
  CHECK(v == 5.0);
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
}

TEST_CASE("loss that ignores a leaf gives it a zero gradient") {
  Tensor x = Tensor::vector({1.0, -3.0, 2.0}, true);
  value_and_grad([&] { return shift(scale(sum(x), 0.0), 4.0); });
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("random three-layer composition matches finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, {4, 5});
    Tensor w1 = random_tensor(rng, {6, 5}, 0.5);
    Tensor b1 = random_tensor(rng, {6}, 0.1);
    Tensor w2 = random_tensor(rng, {7, 6}, 0.5);
    Tensor w3 = random_tensor(rng, {3, 7}, 0.5);
    auto loss = [&] {
      const Tensor h1 = relu(linear(x, w1, b1));
      const Tensor h2 = exp(scale(linear(h1, w2), 0.3));
      return mean(log_softmax(linear(h2, w3)));
    };
    const auto r = testing::check_gradients(loss, {x, w1, b1, w2, w3});
    CHECK_MESSAGE(r.failures == 0, r.worst);
  }
}

TEST_CASE("primitive gradients match finite differences") {
  Rng rng(5);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {3, 4});
  Tensor v = random_tensor(rng, {4});
  Tensor p = Tensor::vector({0.7, 1.3, 2.1, 0.4});
  const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
      {"matmul", [&] { return sum(matmul(a, transpose(b))); }},
      {"row broadcast", [&] { return sum(mul(add(a, v), sub(b, v))); }},
      {"softmax", [&] { return sum(mul(softmax(a), b)); }},
      {"l2_normalize", [&] { return sum(mul(l2_normalize(a), b)); }},
      {"l2_norm", [&] { return sum(l2_norm(a)); }},
      {"power", [&] { return sum(power(p, 2.5)); }},
      {"log", [&] { return sum(log(p)); }},
      {"abs", [&] { return sum(abs(a)); }},
      {"concat/slice", [&] { return dot(concat({slice(v, 0, 2), element(a, 3), v}), concat({slice(v, 1, 3), element(b, 0), v})); }},
      {"gather", [&] { return sum(gather(a, {0, 5, 5, 11})); }},
      {"maximum", [&] { return sum(maximum(a, b)); }},
      {"clamp", [&] { return sum(mul(clamp(a, -0.5, 0.5), b)); }},
      {"reshape", [&] { return sum(mul(reshape(a, {4, 3}), reshape(b, {4, 3}))); }},
      {"matvec", [&] { return sum(power(matmul(a, v), 2.0)); }},
  };
  for (const auto& [name, fn] : cases) {
    const auto r = testing::check_gradients(fn, {a, b, v, p});
    CHECK_MESSAGE(r.failures == 0, name << ": " << r.worst);
  }
}

TEST_CASE("backward runs once per graph") {
  Tensor x = Tensor::vector({1.0}, true);
  Graph g;
  Tensor loss;
  {
    GraphScope scope(g);
    loss = sum(mul(x, x));
  }
  g.backward(loss);
  CHECK(g.consumed());
  CHECK_THROWS_AS(g.backward(loss), GraphError);
}

TEST_CASE("no graph means detached results") {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  const Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  Graph g;
  GraphScope scope(g);
  {
    NoGradGuard guard;
    CHECK_FALSE(mul(x, x).requires_grad());
  }
  CHECK(mul(x, x).requires_grad());
  CHECK(g.recorded_ops().size() == 1);
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2}).item(), ShapeError);
}

TEST_CASE("detach and clone do not share storage") {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tensor d = x.detach();
  Tensor c = x.clone();
  CHECK_FALSE(d.requires_grad());
  CHECK(c.requires_grad());
  x.mutable_values()[0] = 9.0;
  CHECK(d.at(0) == 1.0);
  CHECK(c.at(0) == 1.0);
}

TEST_CASE("sign has no gradient and sign(0) is 0") {
  Tensor x = Tensor::vector({-2.0, 0.0, 3.0}, true);
  CHECK(sign(x).to_vector() == std::vector<double>{-1.0, 0.0, 1.0});
}
