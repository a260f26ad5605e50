#include "spotsim/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <stdexcept>

namespace spotsim {

std::optional<double> RunMetrics::dollars_per_useful() const {
  if (jobs_within_deadline <= 0) return std::nullopt;
  return usd_from_micro(total_cost) / jobs_within_deadline;
}

void MetricsCollector::record_submitted() { ++m_.jobs_submitted; }

void MetricsCollector::record_bill(int instance_id, MicroUsd amount, int charged_hours) {
  if (!billed_instances_.insert(instance_id).second) {
    throw std::logic_error("final bill recorded twice for instance " + std::to_string(instance_id));
  }
  m_.total_cost += amount;
  m_.vm_hours_charged += charged_hours;
  ++m_.instances_used;
}

void MetricsCollector::record_completion(bool within_deadline) {
  ++m_.jobs_completed;
  if (within_deadline) {
    ++m_.jobs_within_deadline;
  } else {
    ++m_.deadline_violations;
  }
}

void MetricsCollector::record_unfinished(bool past_deadline) {
  if (past_deadline) {
    ++m_.deadline_violations;
  } else {
    ++m_.censored_jobs;
  }
}

void MetricsCollector::record_out_of_bid() { ++m_.failures_out_of_bid; }

RunMetrics MetricsCollector::finalize(MicroUsd provider_total_billed) const {
  if (m_.total_cost != provider_total_billed) {
    throw std::logic_error("cost conservation violated: recorded " + std::to_string(m_.total_cost) +
                           " micro-USD vs provider " + std::to_string(provider_total_billed));
  }
  return m_;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.n = static_cast<int>(values.size());
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / s.n;
  if (s.n < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / (s.n - 1));
  const boost::math::students_t dist(s.n - 1);
  const double t = boost::math::quantile(dist, 0.975);
  s.ci95_half_width = t * s.sd / std::sqrt(static_cast<double>(s.n));
  return s;
}

}  // namespace spotsim
