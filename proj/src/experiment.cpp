#include "spotsim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "spotsim/log.hpp"

namespace spotsim {

const char* csv_header() {
  return "strategy,alpha,mechanism,replication,seed,total_cost,violations,useful_jobs,"
         "dollars_per_useful,failures,vm_hours";
}

namespace {

std::string format_alpha(double alpha) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", alpha);
  return buf;
}

std::string format_double(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

bool is_excluded(const CellKey& cell) {
  return cell.strategy == BiddingStrategyKind::High && cell.mechanism != MechanismKind::None;
}

}  // namespace

ReplicationInputs prepare_replication(const ExperimentConfig& config,
                                      const std::vector<SwfRecord>& records, int replication) {
  ReplicationInputs inputs;
  inputs.replication = replication;
  inputs.seed = config.base_seed + static_cast<std::uint64_t>(replication);
  RandomStream rng(inputs.seed);

  if (config.traces) {
    inputs.traces = config.traces;
  } else {
    auto generated = std::make_shared<TraceSet>(
        generate_price_traces(config.cloud, config.synthetic, rng.stream("prices")));
    inputs.traces = std::move(generated);
  }

  inputs.jobs = prepare_jobs(records, config.workload, rng, config.horizon);

  const SimTime lo = config.broker.history_window_s;
  const SimTime hi = std::max(lo, inputs.traces->latest_point() - config.horizon);
  inputs.trace_offset = rng.stream("workload-start-offset").uniform_int(lo, hi);
  return inputs;
}

RunResult run_single(const ExperimentConfig& config, const ReplicationInputs& inputs, CellKey cell) {
  Simulation sim;
  CloudProvider provider(sim, config.cloud, *inputs.traces, inputs.trace_offset,
                         config.broker.provisioning_lag_s);
  MetricsCollector metrics;
  BrokerParams bp = config.broker;
  bp.strategy = cell.strategy;
  bp.alpha = cell.alpha;
  bp.mechanism = cell.mechanism;
  Broker broker(sim, provider, config.cloud, metrics, bp);

  provider.start(config.horizon);  // price replay fires before same-instant broker events
  broker.run_workload(inputs.jobs, config.horizon);
  sim.run_until(config.horizon);
  broker.finish(config.horizon);

  RunResult result;
  result.cell = cell;
  result.replication = inputs.replication;
  result.seed = inputs.seed;
  result.metrics = metrics.finalize(provider.total_billed());
  if (result.metrics.failures_out_of_bid != provider.out_of_bid_terminations()) {
    throw std::logic_error("failure count mismatch between broker and provider");
  }
  result.failure_losses = broker.failure_losses();
  result.replicas_created = broker.replicas_created();
  return result;
}

SweepReport run_sweep(const ExperimentConfig& config, const std::vector<SwfRecord>& records) {
  SweepReport report;
  std::vector<CellKey> cells;
  for (const auto strategy : config.strategies) {
    for (const double alpha : config.alphas) {
      for (const auto mechanism : config.mechanisms) {
        const CellKey cell{strategy, alpha, mechanism};
        if (!config.include_excluded_cells && is_excluded(cell)) {
          report.skipped_cells.push_back(cell);
          log_line(LogLevel::Info, std::string("skipping cell ") + to_string(cell.strategy) + "/" +
                                       format_alpha(cell.alpha) + "/" + to_string(cell.mechanism) +
                                       " (high bids do not fail)");
          continue;
        }
        cells.push_back(cell);
      }
    }
  }

  std::vector<ReplicationInputs> reps;
  reps.reserve(config.replications);
  for (int k = 0; k < config.replications; ++k) {
    reps.push_back(prepare_replication(config, records, k));
  }

  const std::size_t task_count = cells.size() * reps.size();
  std::vector<RunResult> results(task_count);
  std::vector<std::string> errors(task_count);

  unsigned thread_count = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                             : std::thread::hardware_concurrency();
  if (thread_count == 0) thread_count = 1;
  thread_count = std::min<unsigned>(thread_count, std::max<std::size_t>(task_count, 1));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= task_count) return;
      const CellKey cell = cells[i / reps.size()];
      const ReplicationInputs& inputs = reps[i % reps.size()];
      try {
        results[i] = run_single(config, inputs, cell);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (thread_count <= 1 || task_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < thread_count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t i = 0; i < task_count; ++i) {
    if (!errors[i].empty()) {
      report.errors.push_back("cell " + std::string(to_string(cells[i / reps.size()].strategy)) +
                              "/" + format_alpha(cells[i / reps.size()].alpha) + "/" +
                              to_string(cells[i / reps.size()].mechanism) + " rep " +
                              std::to_string(i % reps.size()) + ": " + errors[i]);
      continue;
    }
    report.rows.push_back(std::move(results[i]));
  }
  return report;
}

std::string sweep_csv(const SweepReport& report) {
  std::ostringstream out;
  out << csv_header() << '\n';
  for (const auto& row : report.rows) {
    out << to_string(row.cell.strategy) << ',' << format_alpha(row.cell.alpha) << ','
        << to_string(row.cell.mechanism) << ',' << row.replication << ',' << row.seed << ','
        << format_usd(row.metrics.total_cost) << ',' << row.metrics.deadline_violations << ','
        << row.metrics.jobs_within_deadline << ',';
    if (const auto dpu = row.metrics.dollars_per_useful()) {
      out << format_double(*dpu, 9);
    }
    out << ',' << row.metrics.failures_out_of_bid << ',' << row.metrics.vm_hours_charged << '\n';
  }
  return out.str();
}

namespace {

struct CellAccumulator {
  std::vector<double> total_cost;
  std::vector<double> violations;
  std::vector<double> useful;
  std::vector<double> dollars_per_useful;  // only runs with useful work
  std::vector<double> failures;
  std::vector<double> vm_hours;
};

std::map<CellKey, CellAccumulator> accumulate(const SweepReport& report) {
  std::map<CellKey, CellAccumulator> cells;
  for (const auto& row : report.rows) {
    auto& acc = cells[row.cell];
    acc.total_cost.push_back(usd_from_micro(row.metrics.total_cost));
    acc.violations.push_back(row.metrics.deadline_violations);
    acc.useful.push_back(row.metrics.jobs_within_deadline);
    if (const auto dpu = row.metrics.dollars_per_useful()) acc.dollars_per_useful.push_back(*dpu);
    acc.failures.push_back(row.metrics.failures_out_of_bid);
    acc.vm_hours.push_back(row.metrics.vm_hours_charged);
  }
  return cells;
}

}  // namespace

std::string aggregate_csv(const SweepReport& report) {
  std::ostringstream out;
  out << "strategy,alpha,mechanism,metric,n,mean,sd,ci95_half_width\n";
  auto emit = [&out](const CellKey& cell, const char* metric, const std::vector<double>& values) {
    const MetricSummary s = summarize(values);
    out << to_string(cell.strategy) << ',' << format_alpha(cell.alpha) << ','
        << to_string(cell.mechanism) << ',' << metric << ',' << s.n << ','
        << format_double(s.mean, 9) << ',' << format_double(s.sd, 9) << ','
        << format_double(s.ci95_half_width, 9) << '\n';
  };
  for (const auto& [cell, acc] : accumulate(report)) {
    emit(cell, "total_cost", acc.total_cost);
    emit(cell, "violations", acc.violations);
    emit(cell, "useful_jobs", acc.useful);
    emit(cell, "dollars_per_useful", acc.dollars_per_useful);
    emit(cell, "failures", acc.failures);
    emit(cell, "vm_hours", acc.vm_hours);
  }
  return out.str();
}

std::string run_json(const ExperimentConfig& config, const RunResult& run) {
  nlohmann::json j;
  j["cell"] = {{"strategy", to_string(run.cell.strategy)},
               {"alpha", run.cell.alpha},
               {"mechanism", to_string(run.cell.mechanism)}};
  j["replication"] = run.replication;
  j["seed"] = run.seed;
  j["config"] = {{"base_seed", config.base_seed},
                 {"replications", config.replications},
                 {"horizon_s", config.horizon},
                 {"schedule_interval_s", config.broker.schedule_interval_s},
                 {"history_window_s", config.broker.history_window_s},
                 {"provisioning_lag_s", config.broker.provisioning_lag_s},
                 {"duplication_threshold_s", config.broker.duplication_threshold_s},
                 {"mean_time_weighted", config.broker.mean_time_weighted},
                 {"serialize_mb_s", config.broker.rates.serialize_mb_s},
                 {"restore_same_dc_mb_s", config.broker.rates.restore_same_dc_mb_s},
                 {"restore_cross_dc_mb_s", config.broker.rates.restore_cross_dc_mb_s}};
  const auto& m = run.metrics;
  j["metrics"] = {{"total_cost_usd", usd_from_micro(m.total_cost)},
                  {"total_cost_micro", m.total_cost},
                  {"jobs_submitted", m.jobs_submitted},
                  {"jobs_completed", m.jobs_completed},
                  {"jobs_within_deadline", m.jobs_within_deadline},
                  {"deadline_violations", m.deadline_violations},
                  {"censored_jobs", m.censored_jobs},
                  {"failures_out_of_bid", m.failures_out_of_bid},
                  {"vm_hours_charged", m.vm_hours_charged},
                  {"instances_used", m.instances_used},
                  {"replicas_created", run.replicas_created}};
  if (const auto dpu = m.dollars_per_useful()) {
    j["metrics"]["dollars_per_useful"] = *dpu;
  } else {
    j["metrics"]["dollars_per_useful"] = nullptr;
  }
  return j.dump(2);
}

std::vector<RankedCell> rank_cells(const SweepReport& report) {
  std::vector<RankedCell> ranking;
  for (const auto& [cell, acc] : accumulate(report)) {
    RankedCell r;
    r.cell = cell;
    r.runs_with_useful_work = static_cast<int>(acc.dollars_per_useful.size());
    if (r.runs_with_useful_work > 0) {
      const MetricSummary s = summarize(acc.dollars_per_useful);
      r.mean_dollars_per_useful = s.mean;
      r.ci95_half_width = s.ci95_half_width;
    } else {
      r.mean_dollars_per_useful = std::numeric_limits<double>::infinity();
    }
    ranking.push_back(r);
  }
  std::stable_sort(ranking.begin(), ranking.end(), [](const RankedCell& a, const RankedCell& b) {
    return a.mean_dollars_per_useful < b.mean_dollars_per_useful;
  });
  if (!ranking.empty() && std::isfinite(ranking.front().mean_dollars_per_useful)) {
    const double best = ranking.front().mean_dollars_per_useful;
    for (auto& r : ranking) {
      if (std::isfinite(r.mean_dollars_per_useful) && best > 0) {
        r.worsening_pct = 100.0 * (r.mean_dollars_per_useful - best) / best;
      } else {
        r.worsening_pct = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return ranking;
}

std::vector<RankedCell> rank_cells_from_csv(std::istream& results_csv) {
  std::string line;
  if (!std::getline(results_csv, line)) throw ParseError("empty results file");
  // Tolerate trailing \r from files written on other platforms.
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  if (line != csv_header()) throw ParseError("unexpected results header: " + line);

  SweepReport report;
  int line_no = 1;
  while (std::getline(results_csv, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(pos));
        break;
      }
      fields.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    if (fields.size() != 11) throw ParseError("bad results row at line " + std::to_string(line_no));
    RunResult row;
    if (!parse_strategy(fields[0], row.cell.strategy)) {
      throw ParseError("unknown strategy at line " + std::to_string(line_no));
    }
    row.cell.alpha = std::stod(fields[1]);
    if (!parse_mechanism(fields[2], row.cell.mechanism)) {
      throw ParseError("unknown mechanism at line " + std::to_string(line_no));
    }
    row.replication = std::stoi(fields[3]);
    row.seed = std::stoull(fields[4]);
    MicroUsd cost;
    if (!parse_usd(fields[5], cost)) throw ParseError("bad cost at line " + std::to_string(line_no));
    row.metrics.total_cost = cost;
    row.metrics.deadline_violations = std::stoi(fields[6]);
    row.metrics.jobs_within_deadline = std::stoi(fields[7]);
    row.metrics.failures_out_of_bid = std::stoi(fields[9]);
    row.metrics.vm_hours_charged = std::stoi(fields[10]);
    report.rows.push_back(std::move(row));
  }
  return rank_cells(report);
}

std::string rank_csv(const std::vector<RankedCell>& ranking) {
  std::ostringstream out;
  out << "rank,strategy,alpha,mechanism,dollars_per_useful_mean,ci95_half_width,worsening_pct,n\n";
  int rank = 1;
  for (const auto& r : ranking) {
    out << rank++ << ',' << to_string(r.cell.strategy) << ',' << format_alpha(r.cell.alpha) << ','
        << to_string(r.cell.mechanism) << ',';
    if (std::isfinite(r.mean_dollars_per_useful)) {
      out << format_double(r.mean_dollars_per_useful, 9) << ','
          << format_double(r.ci95_half_width, 9) << ',' << format_double(r.worsening_pct, 4);
    } else {
      out << ",,";
    }
    out << ',' << r.runs_with_useful_work << '\n';
  }
  return out.str();
}

std::string rank_table(const std::vector<RankedCell>& ranking) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%4s  %-22s %-9s %-6s %14s %10s\n", "rank", "mechanism", "strategy",
                "alpha", "$/useful-job", "worse%");
  out << buf;
  int rank = 1;
  for (const auto& r : ranking) {
    if (std::isfinite(r.mean_dollars_per_useful)) {
      std::snprintf(buf, sizeof(buf), "%4d  %-22s %-9s %-6s %14.5f %10.2f\n", rank,
                    to_string(r.cell.mechanism), to_string(r.cell.strategy),
                    format_alpha(r.cell.alpha).c_str(), r.mean_dollars_per_useful, r.worsening_pct);
    } else {
      std::snprintf(buf, sizeof(buf), "%4d  %-22s %-9s %-6s %14s %10s\n", rank,
                    to_string(r.cell.mechanism), to_string(r.cell.strategy),
                    format_alpha(r.cell.alpha).c_str(), "n/a", "n/a");
    }
    out << buf;
    ++rank;
  }
  return out.str();
}

}  // namespace spotsim
