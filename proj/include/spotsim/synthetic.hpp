#pragma once

#include "spotsim/market.hpp"
#include "spotsim/sim.hpp"

namespace spotsim {

// Mean-reverting log-price walk per market with exponential waiting times
// between changes. Prices are clamped to [floor_ratio, cap_ratio] x the
// type's on-demand price; a cap above 1.0 lets spot prices occasionally
// spike past the on-demand price, as observed in real traces.
struct SyntheticPriceParams {
  SimTime duration = 100 * kSecondsPerDay;
  double mean_change_interval_s = 1800.0;
  double base_ratio = 0.35;   // long-run spot level vs on-demand price
  double reversion = 0.05;    // pull toward the base level per change
  double volatility = 0.06;   // stddev of each log-price step
  double floor_ratio = 0.05;
  double cap_ratio = 1.3;
};

// Markets are generated in (datacenter, type) order from the single `rng`
// sequence, so output is a pure function of (cloud, params, seed). The
// generator is taken by value: the caller's engine is not advanced.
TraceSet generate_price_traces(const CloudModel& cloud, const SyntheticPriceParams& params, Rng rng);

// CSV rows "timestamp,datacenter,instance_type,price" sorted by timestamp.
std::string price_traces_csv(const CloudModel& cloud, const TraceSet& traces);

}  // namespace spotsim
