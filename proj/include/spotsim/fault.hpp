#pragma once

#include <string_view>

#include "spotsim/money.hpp"
#include "spotsim/sim.hpp"

namespace spotsim {

enum class MechanismKind { None, Checkpointing, Migration, Duplication };

const char* to_string(MechanismKind kind);
bool parse_mechanism(std::string_view name, MechanismKind& out);

// Memory-image transfer rates in MB/s. Restoring across datacenters runs at
// half the local rate by default.
struct TransferRates {
  double serialize_mb_s = 63.67;
  double restore_same_dc_mb_s = 81.27;
  double restore_cross_dc_mb_s = 40.64;
};

// Whole seconds to serialize an m-MB memory image (rounded up).
SimTime suspend_time(int memory_mb, const TransferRates& rates);

// Whole seconds to restore an m-MB image, slower across datacenters.
SimTime resume_time(int memory_mb, bool same_dc, const TransferRates& rates);

// A saved execution state. `progress_ref` counts completed reference-work
// seconds; `size_mb` is the memory image size (the source instance's memory).
struct Snapshot {
  double progress_ref = 0.0;
  int size_mb = 0;
  int stored_in_dc = 0;
  SimTime taken_at = 0;
};

// Estimated bill for finishing a job elsewhere: restore + remaining runtime,
// rounded up to whole hours at the target market's current price.
MicroUsd migration_cost(SimTime resume_s, SimTime remaining_s, MicroUsd hourly_price);

}  // namespace spotsim
