#pragma once

#include <optional>
#include <set>
#include <vector>

#include "spotsim/money.hpp"

namespace spotsim {

struct RunMetrics {
  MicroUsd total_cost = 0;
  int jobs_submitted = 0;
  int jobs_completed = 0;
  int jobs_within_deadline = 0;
  int deadline_violations = 0;  // completed late + unfinished past deadline
  int censored_jobs = 0;        // unfinished, deadline still ahead at the horizon
  int failures_out_of_bid = 0;
  int vm_hours_charged = 0;
  int instances_used = 0;

  // Dollars spent per job finished within its deadline; empty when none was.
  std::optional<double> dollars_per_useful() const;
};

// Per-run event counters. Each instance's final bill may be recorded exactly
// once; finalize cross-checks the accumulated total against the provider's.
class MetricsCollector {
 public:
  void record_submitted();
  void record_bill(int instance_id, MicroUsd amount, int charged_hours);
  void record_completion(bool within_deadline);
  void record_unfinished(bool past_deadline);
  void record_out_of_bid();

  RunMetrics finalize(MicroUsd provider_total_billed) const;

 private:
  RunMetrics m_;
  std::set<int> billed_instances_;
};

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;                // sample standard deviation
  double ci95_half_width = 0.0;   // Student-t, 95%
  int n = 0;
};

// Mean / sample sd / 95% t-interval half-width. n = 1 yields zero spread.
MetricSummary summarize(const std::vector<double>& values);

}  // namespace spotsim
