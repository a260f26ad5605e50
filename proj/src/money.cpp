#include "spotsim/money.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>

namespace spotsim {

MicroUsd micro_from_usd(double usd) {
  return static_cast<MicroUsd>(std::llround(usd * static_cast<double>(kMicroPerUsd)));
}

std::string format_usd(MicroUsd v) {
  char buf[40];
  const char* sign = v < 0 ? "-" : "";
  MicroUsd a = v < 0 ? -v : v;
  std::snprintf(buf, sizeof(buf), "%s%lld.%06lld", sign,
                static_cast<long long>(a / kMicroPerUsd),
                static_cast<long long>(a % kMicroPerUsd));
  return buf;
}

bool parse_usd(std::string_view text, MicroUsd& out) {
  if (text.empty()) return false;
  std::size_t i = 0;
  MicroUsd whole = 0;
  bool any_digit = false;
  for (; i < text.size() && text[i] != '.'; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) return false;
    if (whole > (INT64_MAX - 9) / 10) return false;
    whole = whole * 10 + (text[i] - '0');
    any_digit = true;
  }
  MicroUsd frac = 0;
  int frac_digits = 0;
  if (i < text.size()) {  // at the '.'
    ++i;
    for (; i < text.size(); ++i, ++frac_digits) {
      if (!std::isdigit(static_cast<unsigned char>(text[i]))) return false;
      if (frac_digits >= 6) return false;
      frac = frac * 10 + (text[i] - '0');
      any_digit = true;
    }
  }
  if (!any_digit) return false;
  for (int d = frac_digits; d < 6; ++d) frac *= 10;
  if (whole > INT64_MAX / kMicroPerUsd - 1) return false;
  out = whole * kMicroPerUsd + frac;
  return true;
}

}  // namespace spotsim
