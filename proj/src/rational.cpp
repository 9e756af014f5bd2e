// SPDX-License-Identifier: Apache-2.0
#include "rlbind/rational.hpp"

#include <charconv>
#include <numeric>

#include "rlbind/error.hpp"

namespace rlbind {

namespace {

std::int64_t parse_int(std::string_view s, std::string_view whole) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("'" + std::string(whole) + "' is not a rational number (expected a/b or a decimal)");
  }
  return v;
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) {
  if (den <= 0) throw ArgumentError("rational: denominator must be positive");
  if (num < 0) throw ArgumentError("rational: value must be non-negative");
  const std::int64_t g = std::gcd(num, den);
  num_ = num / g;
  den_ = den / g;
}

Rational Rational::parse(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (const auto slash = text.find('/'); slash != std::string_view::npos) {
    const std::int64_t den = parse_int(text.substr(slash + 1), text);
    if (den == 0) throw ConfigError("'" + std::string(text) + "' has a zero denominator");
    return {parse_int(text.substr(0, slash), text), den};
  }
  if (const auto dot = text.find('.'); dot != std::string_view::npos) {
    const std::string_view frac = text.substr(dot + 1);
    if (frac.size() > 15) throw ConfigError("'" + std::string(text) + "' has too many decimal places");
    std::int64_t den = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
    const std::int64_t whole = dot == 0 ? 0 : parse_int(text.substr(0, dot), text);
    const std::int64_t part = frac.empty() ? 0 : parse_int(frac, text);
    if (whole < 0 || part < 0) throw ConfigError("'" + std::string(text) + "' must be non-negative");
    return {whole * den + part, den};
  }
  const std::int64_t v = parse_int(text, text);
  if (v < 0) throw ConfigError("'" + std::string(text) + "' must be non-negative");
  return {v, 1};
}

std::string Rational::str() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

}  // namespace rlbind
