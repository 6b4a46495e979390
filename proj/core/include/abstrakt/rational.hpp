#pragma once

#include <gmpxx.h>

#include <string>

namespace abstrakt {

using Rational = mpq_class;

// Accepts "num/den", integers and plain decimals ("0.7", "-1.25"). Decimals are exact.
Rational parse_rational(const std::string& text);

std::string to_string(const Rational& q);

// Rounded to `digits` places after the point, trailing zeros dropped.
std::string to_decimal(const Rational& q, int digits = 12);

}  // namespace abstrakt
