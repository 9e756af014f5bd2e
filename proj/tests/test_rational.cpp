// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "rlbind/error.hpp"
#include "rlbind/rational.hpp"

using rlbind::Rational;

TEST_CASE("parsing") {
  const Rational r = Rational::parse("2/255");
  CHECK(r.num() == 2);
  CHECK(r.den() == 255);
  CHECK(r.str() == "2/255");
  CHECK(Rational::parse("4/8") == Rational(1, 2));
  CHECK(Rational::parse("0.05") == Rational(1, 20));
  CHECK(Rational::parse("3") == Rational(3, 1));
  CHECK(Rational::parse("3").str() == "3");
  CHECK(Rational::parse(" 1/10 ") == Rational(1, 10));
  CHECK(Rational::parse("0") == Rational());
  CHECK(Rational(1, 20).value() == 0.05);
}

TEST_CASE("malformed values") {
  for (const char* bad : {"", "a/b", "1/0", "-1/2", "1/2/3", "0.1.2", "1e-3", "/3"}) {
    CHECK_THROWS_AS(Rational::parse(bad), rlbind::Error);
  }
  CHECK_THROWS_AS(Rational(1, 0), rlbind::ArgumentError);
}
