#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <boost/rational.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace topdown {

// Privacy-loss shares and noise scales are kept in exact rational arithmetic;
// doubles appear only at reporting boundaries.
using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::rational<BigInt>;

inline Rational rational(std::int64_t num, std::int64_t den = 1) {
  return Rational(BigInt(num), BigInt(den));
}

inline double to_double(const Rational& r) {
  return r.numerator().convert_to<double>() / r.denominator().convert_to<double>();
}

inline std::string to_string(const Rational& r) {
  if (r.denominator() == 1) return r.numerator().str();
  return r.numerator().str() + "/" + r.denominator().str();
}

// Parses "519/1024", "3", or "-1/2". Whitespace around tokens is ignored.
inline Rational parse_fraction(const std::string& text) {
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    if (a == std::string::npos) return std::string();
    return s.substr(a, b - a + 1);
  };
  const std::string t = trim(text);
  if (t.empty()) throw std::invalid_argument("empty fraction literal");
  const auto slash = t.find('/');
  try {
    if (slash == std::string::npos) return Rational(BigInt(t), BigInt(1));
    const BigInt num(trim(t.substr(0, slash)));
    const BigInt den(trim(t.substr(slash + 1)));
    if (den == 0) throw std::invalid_argument("zero denominator");
    return Rational(num, den);
  } catch (const std::runtime_error&) {
    throw std::invalid_argument("bad fraction literal: '" + text + "'");
  }
}

}  // namespace topdown
