#pragma once

#include <compare>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "spotsim/broker.hpp"
#include "spotsim/metrics.hpp"
#include "spotsim/synthetic.hpp"
#include "spotsim/workload.hpp"

namespace spotsim {

struct CellKey {
  BiddingStrategyKind strategy = BiddingStrategyKind::OnDemand;
  double alpha = 2.0;
  MechanismKind mechanism = MechanismKind::None;
  auto operator<=>(const CellKey&) const = default;
};

struct ExperimentConfig {
  std::vector<BiddingStrategyKind> strategies = {BiddingStrategyKind::OnDemand};
  std::vector<double> alphas = {2.0};
  std::vector<MechanismKind> mechanisms = {MechanismKind::None};
  int replications = 31;
  std::uint64_t base_seed = 1;
  SimTime horizon = 7 * kSecondsPerDay;
  CloudModel cloud = CloudModel::default_catalogue();
  WorkloadParams workload;
  BrokerParams broker;  // strategy/alpha/mechanism filled per cell

  // Price source: a pre-loaded trace set, or per-replication synthetic
  // generation when `traces` is empty.
  std::shared_ptr<const TraceSet> traces;
  SyntheticPriceParams synthetic;

  // High bids never fail, so pairing High with a recovery mechanism is
  // skipped unless explicitly requested.
  bool include_excluded_cells = false;

  int threads = 0;  // 0 = hardware concurrency
};

// Shared per-replication inputs: every cell of replication k sees the same
// seed, job attributes, trace, and trace offset, making cells comparable
// pairwise.
struct ReplicationInputs {
  int replication = 0;
  std::uint64_t seed = 0;
  std::vector<Job> jobs;
  std::shared_ptr<const TraceSet> traces;
  SimTime trace_offset = 0;
};

ReplicationInputs prepare_replication(const ExperimentConfig& config,
                                      const std::vector<SwfRecord>& records, int replication);

struct RunResult {
  CellKey cell;
  int replication = 0;
  std::uint64_t seed = 0;
  RunMetrics metrics;
  std::vector<FailureLoss> failure_losses;
  int replicas_created = 0;
};

// One simulation run of one grid cell on one replication's inputs.
RunResult run_single(const ExperimentConfig& config, const ReplicationInputs& inputs, CellKey cell);

struct SweepReport {
  std::vector<RunResult> rows;  // sorted by (cell, replication)
  std::vector<CellKey> skipped_cells;
  std::vector<std::string> errors;  // failed runs, if any (rows omit them)
};

// Runs the whole grid x replications (cells of a replication share inputs).
// Runs execute in parallel; output order is deterministic.
SweepReport run_sweep(const ExperimentConfig& config, const std::vector<SwfRecord>& records);

// results.csv rows: one line per run.
std::string sweep_csv(const SweepReport& report);
// aggregate.csv rows: per-cell mean/sd/CI for each metric.
std::string aggregate_csv(const SweepReport& report);
// One JSON object describing a run (config echo, seed, metrics).
std::string run_json(const ExperimentConfig& config, const RunResult& run);

struct RankedCell {
  CellKey cell;
  double mean_dollars_per_useful = 0.0;
  double ci95_half_width = 0.0;
  double worsening_pct = 0.0;  // vs the best cell
  int runs_with_useful_work = 0;
};

// Cells ordered by mean dollars-per-useful-computation (best first). Cells
// that never finished a job within deadline sort last.
std::vector<RankedCell> rank_cells(const SweepReport& report);
std::vector<RankedCell> rank_cells_from_csv(std::istream& results_csv);
std::string rank_csv(const std::vector<RankedCell>& ranking);
std::string rank_table(const std::vector<RankedCell>& ranking);

const char* csv_header();

}  // namespace spotsim
