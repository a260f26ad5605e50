#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace spotsim {

// Monetary amounts are integer micro-dollars so that sums of per-instance
// bills are exact and reproducible.
using MicroUsd = std::int64_t;

constexpr MicroUsd kMicroPerUsd = 1'000'000;

// Minimum bid granularity: 0.001 USD.
constexpr MicroUsd kBidGranularity = 1'000;

// Rounds to the nearest micro-dollar.
MicroUsd micro_from_usd(double usd);

inline double usd_from_micro(MicroUsd v) { return static_cast<double>(v) / kMicroPerUsd; }

// Renders with six fraction digits, e.g. 93000 -> "0.093000".
std::string format_usd(MicroUsd v);

// Parses a non-negative decimal with at most six fraction digits
// ("0.085", "3", "12.5"). Returns false on malformed input or overflow.
bool parse_usd(std::string_view text, MicroUsd& out);

}  // namespace spotsim
