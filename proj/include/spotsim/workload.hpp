#pragma once

#include <cmath>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "spotsim/market.hpp"
#include "spotsim/sim.hpp"

namespace spotsim {

// One accepted line of a standard workload file. Fields beyond the ones
// used by the simulator are not retained.
struct SwfRecord {
  long job_id = 0;
  SimTime submit = 0;
  SimTime runtime_s = 0;
  int status = 0;
  int user_id = 0;
};

struct SwfParseResult {
  std::vector<SwfRecord> records;  // in submit-time order
  int skipped = 0;                 // records with non-positive runtimes
};

// Parses `;`-commented, whitespace-separated workload records. Keeps at most
// `limit` accepted records. Throws ParseError if no record is accepted.
SwfParseResult parse_swf(std::istream& in, std::optional<int> limit = std::nullopt);
SwfParseResult parse_swf_file(const std::string& path, std::optional<int> limit = std::nullopt);

struct Job {
  long id = 0;
  int user_id = 0;
  SimTime submit_time = 0;
  SimTime base_runtime_s = 0;  // runtime on a single-core 1-ECU reference
  double A = 1.0;              // average parallelism
  double sigma = 0.0;          // coefficient of variance of parallelism
  SimTime user_estimate_s = 0;
  SimTime deadline = 0;
};

// Speedup of a moldable job with average parallelism A and variance
// coefficient sigma on n cores. Throws std::domain_error outside
// A >= 1, sigma >= 0, n >= 1.
double downey_speedup(double A, double sigma, int n_cores);

// Reference-work seconds completed per wall second on `type`:
// S(cores) x (ecus / cores).
double compute_rate(const Job& job, const InstanceType& type);

// Wall-clock seconds to run `ref_seconds` of reference work on `type`,
// rounded up, at least 1.
SimTime scaled_runtime(double ref_seconds, const Job& job, const InstanceType& type);

// Wall-clock runtime of the whole job on `type`.
SimTime runtime_on(const Job& job, const InstanceType& type);

struct WorkloadParams {
  double log2_parallelism_max = 5.0;  // log2(A) ~ U[0, max]
  double sigma_max = 2.0;             // sigma ~ U[0, max]
  std::vector<double> estimate_factors = {1.0, 1.5, 2.0, 3.0, 5.0, 10.0};
  std::vector<double> estimate_weights = {1, 1, 1, 1, 1, 1};
  double deadline_multiplier_lo = 1.5;
  double deadline_multiplier_hi = 4.0;
};

// Draws (A, sigma) for one job from the "moldability" stream.
void generate_moldability(Rng& rng, const WorkloadParams& params, double& A, double& sigma);

// User-supplied estimate: actual runtime x a factor drawn from
// estimate_factors (never below the actual runtime).
SimTime generate_user_estimate(SimTime base_runtime_s, Rng& rng, const WorkloadParams& params);

// Deadline: submit + estimate x U[lo, hi].
SimTime assign_deadline(SimTime submit, SimTime estimate_s, Rng& rng, const WorkloadParams& params);

// Turns accepted records into fully-attributed jobs: normalizes submit times
// to start at 0, drops jobs submitted at or after `horizon`, then draws
// moldability, estimate, and deadline per job (in submit order) from the
// "moldability" / "estimates" / "deadlines" streams of `rng`.
std::vector<Job> prepare_jobs(const std::vector<SwfRecord>& records, const WorkloadParams& params,
                              RandomStream& rng, SimTime horizon);

// Seeded batch-workload generator for experiments without a trace file:
// arrival bursts at uniform instants, log-normal runtimes, skewed user mix.
struct SyntheticWorkloadParams {
  int job_count = 800;
  SimTime duration = 6 * kSecondsPerDay;  // arrivals land in [0, duration)
  double mean_burst_size = 3.0;
  double runtime_log_mean = std::log(1800.0);
  double runtime_log_sd = 1.1;
  SimTime runtime_cap_s = 12 * kSecondsPerHour;
  int user_count = 64;
};

std::vector<SwfRecord> generate_workload(const SyntheticWorkloadParams& params, Rng& rng);

// SWF-style text for a record list (for writing sample files).
std::string workload_swf_text(const std::vector<SwfRecord>& records);

}  // namespace spotsim
