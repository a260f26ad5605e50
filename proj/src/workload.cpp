#include "spotsim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

namespace spotsim {

SwfParseResult parse_swf(std::istream& in, std::optional<int> limit) {
  SwfParseResult result;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == ';') continue;
    std::istringstream fields(line);
    long job_id;
    double submit, wait, runtime;
    if (!(fields >> job_id >> submit >> wait >> runtime)) {
      throw ParseError("malformed workload record at line " + std::to_string(line_no), line_no);
    }
    // Fields 5..10 are unused; status is field 11 and user id field 12.
    double skip_field;
    for (int f = 5; f <= 10; ++f) fields >> skip_field;
    int status = -1, user_id = 0;
    fields >> status >> user_id;
    if (runtime <= 0) {
      ++result.skipped;
      continue;
    }
    result.records.push_back(SwfRecord{job_id, static_cast<SimTime>(std::llround(submit)),
                                       static_cast<SimTime>(std::llround(runtime)), status, user_id});
    if (limit && static_cast<int>(result.records.size()) >= *limit) break;
  }
  if (result.records.empty()) throw ParseError("no usable workload records");
  std::stable_sort(result.records.begin(), result.records.end(),
                   [](const SwfRecord& a, const SwfRecord& b) { return a.submit < b.submit; });
  return result;
}

SwfParseResult parse_swf_file(const std::string& path, std::optional<int> limit) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open workload: " + path);
  return parse_swf(in, limit);
}

double downey_speedup(double A, double sigma, int n_cores) {
  if (A < 1.0 || sigma < 0.0 || n_cores < 1) {
    throw std::domain_error("downey_speedup: need A >= 1, sigma >= 0, n >= 1");
  }
  const double n = n_cores;
  if (sigma <= 1.0) {
    if (n <= A) return A * n / (A + sigma * (n - 1.0) / 2.0);
    if (n <= 2.0 * A - 1.0) return A * n / (sigma * (A - 0.5) + n * (1.0 - sigma / 2.0));
    return A;
  }
  const double saturation = A + A * sigma - sigma;
  if (n <= saturation) return n * A * (sigma + 1.0) / (sigma * (n + A - 1.0) + A);
  return A;
}

double compute_rate(const Job& job, const InstanceType& type) {
  return downey_speedup(job.A, job.sigma, type.cores) * type.ecus_per_core();
}

SimTime scaled_runtime(double ref_seconds, const Job& job, const InstanceType& type) {
  const double wall = ref_seconds / compute_rate(job, type);
  return std::max<SimTime>(1, static_cast<SimTime>(std::ceil(wall)));
}

SimTime runtime_on(const Job& job, const InstanceType& type) {
  return scaled_runtime(static_cast<double>(job.base_runtime_s), job, type);
}

void generate_moldability(Rng& rng, const WorkloadParams& params, double& A, double& sigma) {
  A = std::exp2(rng.uniform(0.0, params.log2_parallelism_max));
  sigma = rng.uniform(0.0, params.sigma_max);
}

SimTime generate_user_estimate(SimTime base_runtime_s, Rng& rng, const WorkloadParams& params) {
  const double factor = params.estimate_factors.at(rng.pick_weighted(params.estimate_weights));
  const auto estimate = static_cast<SimTime>(std::ceil(factor * static_cast<double>(base_runtime_s)));
  return std::max(estimate, base_runtime_s);
}

SimTime assign_deadline(SimTime submit, SimTime estimate_s, Rng& rng, const WorkloadParams& params) {
  const double mult = rng.uniform(params.deadline_multiplier_lo, params.deadline_multiplier_hi);
  return submit + static_cast<SimTime>(std::llround(mult * static_cast<double>(estimate_s)));
}

std::vector<Job> prepare_jobs(const std::vector<SwfRecord>& records, const WorkloadParams& params,
                              RandomStream& rng, SimTime horizon) {
  std::vector<Job> jobs;
  if (records.empty()) return jobs;
  const SimTime epoch = records.front().submit;
  Rng& moldability = rng.stream("moldability");
  Rng& estimates = rng.stream("estimates");
  Rng& deadlines = rng.stream("deadlines");
  for (const auto& rec : records) {
    const SimTime submit = rec.submit - epoch;
    if (submit >= horizon) continue;
    Job job;
    job.id = rec.job_id;
    job.user_id = rec.user_id;
    job.submit_time = submit;
    job.base_runtime_s = rec.runtime_s;
    generate_moldability(moldability, params, job.A, job.sigma);
    job.user_estimate_s = generate_user_estimate(job.base_runtime_s, estimates, params);
    job.deadline = assign_deadline(submit, job.user_estimate_s, deadlines, params);
    jobs.push_back(job);
  }
  return jobs;
}

std::vector<SwfRecord> generate_workload(const SyntheticWorkloadParams& params, Rng& rng) {
  std::vector<SwfRecord> records;
  records.reserve(params.job_count);
  // Skewed user popularity: weight 1/(k+1) for user k.
  std::vector<double> user_weights(params.user_count);
  for (int u = 0; u < params.user_count; ++u) user_weights[u] = 1.0 / (u + 1.0);

  const double extra_mean = std::max(0.0, params.mean_burst_size - 1.0);
  long next_id = 1;
  while (static_cast<int>(records.size()) < params.job_count) {
    const SimTime burst_at = rng.uniform_int(0, params.duration - 1);
    const int burst =
        1 + (extra_mean > 0.0 ? static_cast<int>(rng.exponential(extra_mean)) : 0);
    for (int i = 0; i < burst && static_cast<int>(records.size()) < params.job_count; ++i) {
      const double raw = std::exp(rng.normal(params.runtime_log_mean, params.runtime_log_sd));
      const SimTime runtime = std::clamp<SimTime>(static_cast<SimTime>(std::llround(raw)), 30,
                                                  params.runtime_cap_s);
      const int user = static_cast<int>(rng.pick_weighted(user_weights));
      records.push_back(SwfRecord{next_id++, burst_at, runtime, 1, user});
    }
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const SwfRecord& a, const SwfRecord& b) { return a.submit < b.submit; });
  for (std::size_t i = 0; i < records.size(); ++i) records[i].job_id = static_cast<long>(i + 1);
  return records;
}

std::string workload_swf_text(const std::vector<SwfRecord>& records) {
  std::ostringstream out;
  out << "; generated workload\n";
  out << "; fields: id submit wait runtime procs avg_cpu mem req_procs req_time req_mem status user\n";
  for (const auto& r : records) {
    out << r.job_id << ' ' << r.submit << " 0 " << r.runtime_s << " 1 -1 -1 1 -1 -1 " << r.status
        << ' ' << r.user_id << " -1 -1 -1 -1 -1 -1\n";
  }
  return out.str();
}

}  // namespace spotsim
