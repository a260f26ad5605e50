// Command-line front end: trace-driven spot-market simulation sweeps,
// ranking of finished sweeps, and synthetic price-trace generation.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "spotsim/experiment.hpp"
#include "spotsim/log.hpp"

namespace fs = std::filesystem;
using namespace spotsim;

namespace {

std::vector<BiddingStrategyKind> to_strategies(const std::vector<std::string>& names) {
  std::vector<BiddingStrategyKind> out;
  for (const auto& name : names) {
    BiddingStrategyKind s;
    if (!parse_strategy(name, s)) throw CLI::ValidationError("unknown strategy: " + name);
    out.push_back(s);
  }
  return out;
}

std::vector<MechanismKind> to_mechanisms(const std::vector<std::string>& names) {
  std::vector<MechanismKind> out;
  for (const auto& name : names) {
    MechanismKind m;
    if (!parse_mechanism(name, m)) throw CLI::ValidationError("unknown mechanism: " + name);
    out.push_back(m);
  }
  return out;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string run_file_stem(const RunResult& run) {
  char alpha[32];
  std::snprintf(alpha, sizeof(alpha), "%g", run.cell.alpha);
  return std::string(to_string(run.cell.strategy)) + "_a" + alpha + "_" +
         to_string(run.cell.mechanism) + "_r" + std::to_string(run.replication);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spot-market provisioning simulator"};
  app.require_subcommand(1);

  // ---- run ----------------------------------------------------------------
  auto* run = app.add_subcommand("run", "execute a sweep over strategies x alphas x mechanisms");
  std::string workload_path, prices_spec = "synthetic", out_dir;
  std::vector<std::string> strategy_names = {"OnDemand"};
  std::vector<std::string> mechanism_names = {"None"};
  ExperimentConfig config;
  int jobs_limit = 0;
  int horizon_days = 7;
  SyntheticPriceParams synth;

  run->set_config("--config", "", "flat key=value configuration file");
  run->add_option("--workload", workload_path, "SWF workload trace")->required();
  run->add_option("--prices", prices_spec,
                  "price trace CSV path, or 'synthetic' for generated prices");
  run->add_option("--strategy", strategy_names, "bidding strategies (repeatable)");
  run->add_option("--alpha", config.alphas, "urgency safety factors (repeatable)");
  run->add_option("--mechanism", mechanism_names, "fault mechanisms (repeatable)");
  run->add_option("--replications", config.replications, "independent seeded runs per cell");
  run->add_option("--seed", config.base_seed, "base seed (replication k adds k)");
  run->add_option("--jobs-limit", jobs_limit, "keep at most this many workload jobs");
  run->add_option("--horizon-days", horizon_days, "simulated days per run");
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--threads", config.threads, "worker threads (0 = all cores)");
  run->add_flag("--include-excluded", config.include_excluded_cells,
                "also run High with recovery mechanisms");
  run->add_option("--schedule-interval", config.broker.schedule_interval_s,
                  "seconds between scheduling passes");
  run->add_option("--history-window-days", [&config](const std::vector<std::string>& vals) {
    config.broker.history_window_s = static_cast<SimTime>(std::stod(vals[0]) * kSecondsPerDay);
    return true;
  }, "price-history window for Minimum/Mean bids");
  run->add_flag("!--unweighted-mean", config.broker.mean_time_weighted,
                "use the unweighted mean of price observations for the Mean strategy");
  run->add_option("--synth-days", [&synth](const std::vector<std::string>& vals) {
    synth.duration = static_cast<SimTime>(std::stod(vals[0]) * kSecondsPerDay);
    return true;
  }, "length of generated price traces");
  run->add_option("--synth-interval", synth.mean_change_interval_s, "mean seconds between changes");
  run->add_option("--synth-volatility", synth.volatility, "stddev of each log-price step");
  run->add_option("--synth-reversion", synth.reversion, "pull toward the base level per step");
  run->add_option("--synth-base-ratio", synth.base_ratio, "long-run spot/on-demand ratio");
  run->add_option("--synth-floor-ratio", synth.floor_ratio, "price floor vs on-demand");
  run->add_option("--synth-cap-ratio", synth.cap_ratio, "price cap vs on-demand");

  // ---- rank ---------------------------------------------------------------
  auto* rank = app.add_subcommand("rank", "rank sweep cells by dollars per useful computation");
  std::string rank_dir;
  rank->add_option("--in", rank_dir, "directory containing results.csv")->required();

  // ---- gen-prices ---------------------------------------------------------
  auto* gen = app.add_subcommand("gen-prices", "write a synthetic price trace CSV");
  std::uint64_t gen_seed = 1;
  int gen_days = 100;
  std::string gen_out;
  SyntheticPriceParams gen_params;
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--days", gen_days, "trace length in days");
  gen->add_option("--out", gen_out, "output CSV path")->required();
  gen->add_option("--synth-interval", gen_params.mean_change_interval_s,
                  "mean seconds between changes");
  gen->add_option("--synth-volatility", gen_params.volatility, "stddev of each log-price step");
  gen->add_option("--synth-reversion", gen_params.reversion, "pull toward the base level per step");
  gen->add_option("--synth-base-ratio", gen_params.base_ratio, "long-run spot/on-demand ratio");
  gen->add_option("--synth-floor-ratio", gen_params.floor_ratio, "price floor vs on-demand");
  gen->add_option("--synth-cap-ratio", gen_params.cap_ratio, "price cap vs on-demand");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      gen_params.duration = static_cast<SimTime>(gen_days) * kSecondsPerDay;
      const CloudModel cloud = CloudModel::default_catalogue();
      RandomStream rng(gen_seed);
      const TraceSet traces = generate_price_traces(cloud, gen_params, rng.stream("prices"));
      write_file(gen_out, price_traces_csv(cloud, traces));
      std::cout << "wrote " << gen_out << "\n";
      return 0;
    }

    if (*rank) {
      const fs::path results = fs::path(rank_dir) / "results.csv";
      std::ifstream in(results);
      if (!in) throw std::runtime_error("cannot open " + results.string());
      const auto ranking = rank_cells_from_csv(in);
      std::cout << rank_table(ranking);
      write_file(fs::path(rank_dir) / "rank.csv", rank_csv(ranking));
      return 0;
    }

    // run
    config.strategies = to_strategies(strategy_names);
    config.mechanisms = to_mechanisms(mechanism_names);
    config.horizon = static_cast<SimTime>(horizon_days) * kSecondsPerDay;
    config.synthetic = synth;
    if (prices_spec != "synthetic") {
      config.traces = std::make_shared<TraceSet>(load_price_traces_file(prices_spec, config.cloud));
    }
    const auto parsed = parse_swf_file(
        workload_path, jobs_limit > 0 ? std::optional<int>(jobs_limit) : std::nullopt);
    if (parsed.skipped > 0) {
      std::cerr << "skipped " << parsed.skipped << " workload records without usable runtimes\n";
    }

    const SweepReport report = run_sweep(config, parsed.records);

    fs::create_directories(fs::path(out_dir) / "runs");
    write_file(fs::path(out_dir) / "results.csv", sweep_csv(report));
    write_file(fs::path(out_dir) / "aggregate.csv", aggregate_csv(report));
    write_file(fs::path(out_dir) / "rank.csv", rank_csv(rank_cells(report)));
    for (const auto& row : report.rows) {
      write_file(fs::path(out_dir) / "runs" / (run_file_stem(row) + ".json"),
                 run_json(config, row));
    }
    for (const auto& cell : report.skipped_cells) {
      std::cout << "skipped cell: " << to_string(cell.strategy) << " alpha=" << cell.alpha << " "
                << to_string(cell.mechanism) << " (high bids do not fail)\n";
    }
    std::cout << "wrote " << report.rows.size() << " runs to " << out_dir << "\n";
    if (!report.errors.empty()) {
      for (const auto& e : report.errors) std::cerr << "run failed: " << e << "\n";
      return 2;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
