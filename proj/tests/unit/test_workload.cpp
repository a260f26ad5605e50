#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "spotsim/workload.hpp"

using namespace spotsim;

namespace {

const char* kSampleSwf =
    "; Example workload file\n"
    ";   with a two-line comment header\n"
    "1 100 5 3000 8 -1 -1 8 -1 -1 1 17 -1 -1 -1 -1 -1 -1\n"
    "2 50 0 0 4 -1 -1 4 -1 -1 0 17 -1 -1 -1 -1 -1 -1\n"
    "3 200 9 1200 1 -1 -1 1 -1 -1 1 99 -1 -1 -1 -1 -1 -1\n"
    "4 150 2 -1 2 -1 -1 2 -1 -1 5 23 -1 -1 -1 -1 -1 -1\n";

Job basic_job(SimTime base, double A, double sigma) {
  Job j;
  j.id = 1;
  j.base_runtime_s = base;
  j.A = A;
  j.sigma = sigma;
  j.user_estimate_s = base;
  j.deadline = 1000000;
  return j;
}

}  // namespace

TEST_CASE("workload records parse, skip unusable runtimes, and sort by submit time") {
  std::istringstream in(kSampleSwf);
  SwfParseResult result = parse_swf(in);
  REQUIRE(result.records.size() == 2);
  CHECK(result.skipped == 2);  // one zero runtime, one negative

  CHECK(result.records[0].job_id == 1);
  CHECK(result.records[0].submit == 100);
  CHECK(result.records[0].runtime_s == 3000);
  CHECK(result.records[0].status == 1);
  CHECK(result.records[0].user_id == 17);
  CHECK(result.records[1].job_id == 3);
  CHECK(result.records[1].submit == 200);
  CHECK(result.records[1].user_id == 99);
}

TEST_CASE("workload parsing honors the record limit") {
  std::istringstream in(kSampleSwf);
  SwfParseResult result = parse_swf(in, 1);
  CHECK(result.records.size() == 1);
  CHECK(result.records[0].job_id == 1);
}

TEST_CASE("workloads with no usable records are an error") {
  std::istringstream nothing("; only comments\n");
  CHECK_THROWS_AS(parse_swf(nothing), ParseError);
  std::istringstream zeros("1 0 0 0 1 -1 -1 1 -1 -1 1 1 -1 -1 -1 -1 -1 -1\n");
  CHECK_THROWS_AS(parse_swf(zeros), ParseError);
  std::istringstream garbage("1 abc 0 100 1\n");
  CHECK_THROWS_AS(parse_swf(garbage), ParseError);
}

TEST_CASE("speedup grows from one to the parallelism bound") {
  // sigma = 0 gives ideal linear scaling up to A.
  CHECK(downey_speedup(8.0, 0.0, 1) == doctest::Approx(1.0));
  CHECK(downey_speedup(8.0, 0.0, 4) == doctest::Approx(4.0));
  CHECK(downey_speedup(8.0, 0.0, 8) == doctest::Approx(8.0));
  CHECK(downey_speedup(8.0, 0.0, 64) == doctest::Approx(8.0));

  // Mid-range value pinned against an independent evaluation.
  CHECK(downey_speedup(8.0, 0.5, 4) == doctest::Approx(3.657142857142857).epsilon(1e-12));

  // High-variance branch.
  CHECK(downey_speedup(4.0, 2.0, 4) == doctest::Approx(48.0 / 18.0).epsilon(1e-12));
  CHECK(downey_speedup(4.0, 2.0, 64) == doctest::Approx(4.0));

  // The two low-variance pieces agree where they meet.
  CHECK(downey_speedup(8.0, 0.5, 15) == doctest::Approx(8.0));

  CHECK_THROWS_AS(downey_speedup(0.5, 0.0, 4), std::domain_error);
  CHECK_THROWS_AS(downey_speedup(4.0, -0.1, 4), std::domain_error);
  CHECK_THROWS_AS(downey_speedup(4.0, 0.0, 0), std::domain_error);
}

TEST_CASE("speedup is bounded and monotone over random parameters") {
  Rng rng(314);
  for (int i = 0; i < 10000; ++i) {
    const double A = 1.0 + rng.uniform(0.0, 31.0);
    const double sigma = rng.uniform(0.0, 2.0);
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 63));
    const double s = downey_speedup(A, sigma, n);
    CHECK(s >= 1.0 - 1e-9);
    CHECK(s <= std::min<double>(n, A) + 1e-9);
    if (n > 1) {
      CHECK(downey_speedup(A, sigma, n - 1) <= s + 1e-9);
    }
    CHECK(downey_speedup(A, sigma, 1) == doctest::Approx(1.0));
  }
}

TEST_CASE("runtimes scale with speedup and per-core compute power") {
  const InstanceType reference{"M1.SMALL", 1.0, 1, 1740, 85000};
  const InstanceType fast{"C1.XLARGE", 20.0, 8, 7168, 680000};

  Job j = basic_job(3600, 8.0, 0.0);
  CHECK(compute_rate(j, reference) == doctest::Approx(1.0));
  CHECK(runtime_on(j, reference) == 3600);
  // 8 usable cores at 2.5 compute units each -> 20x the reference rate.
  CHECK(compute_rate(j, fast) == doctest::Approx(20.0));
  CHECK(runtime_on(j, fast) == 180);

  // Serial job gains only the per-core unit advantage.
  Job serial = basic_job(3600, 1.0, 0.0);
  CHECK(runtime_on(serial, fast) == 1440);  // 3600 / 2.5

  // Rounding is always up, with a one-second floor.
  CHECK(scaled_runtime(100.0, j, fast) == 5);
  CHECK(scaled_runtime(101.0, j, fast) == 6);
  CHECK(scaled_runtime(1.0, j, fast) == 1);
  CHECK(scaled_runtime(0.0, j, fast) == 1);
}

TEST_CASE("moldability, estimates, and deadlines come from bounded distributions") {
  WorkloadParams params;
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    double A = 0, sigma = -1;
    generate_moldability(rng, params, A, sigma);
    CHECK(A >= 1.0);
    CHECK(A <= 32.0);
    CHECK(sigma >= 0.0);
    CHECK(sigma <= 2.0);

    const SimTime est = generate_user_estimate(1000, rng, params);
    CHECK(est >= 1000);
    CHECK(est <= 10000);

    const SimTime deadline = assign_deadline(500, est, rng, params);
    CHECK(deadline >= 500 + static_cast<SimTime>(1.5 * est) - 1);
    CHECK(deadline <= 500 + static_cast<SimTime>(4.0 * est) + 1);
  }

  WorkloadParams exact;
  exact.estimate_factors = {2.0};
  exact.estimate_weights = {1.0};
  CHECK(generate_user_estimate(1234, rng, exact) == 2468);
}

TEST_CASE("job preparation normalizes submits, drops late arrivals, and is seeded") {
  std::vector<SwfRecord> records = {
      {10, 5000, 600, 1, 4},
      {11, 6000, 1200, 1, 4},
      {12, 99000, 300, 1, 5},
  };
  WorkloadParams params;
  RandomStream rng(42);
  auto jobs = prepare_jobs(records, params, rng, 50000);
  REQUIRE(jobs.size() == 2);  // the third submits past the horizon
  CHECK(jobs[0].submit_time == 0);
  CHECK(jobs[1].submit_time == 1000);
  CHECK(jobs[0].id == 10);
  CHECK(jobs[0].user_id == 4);
  CHECK(jobs[0].base_runtime_s == 600);
  CHECK(jobs[0].user_estimate_s >= 600);
  CHECK(jobs[0].deadline > jobs[0].submit_time);

  RandomStream rng2(42);
  auto again = prepare_jobs(records, params, rng2, 50000);
  REQUIRE(again.size() == jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    CHECK(jobs[i].A == again[i].A);
    CHECK(jobs[i].sigma == again[i].sigma);
    CHECK(jobs[i].user_estimate_s == again[i].user_estimate_s);
    CHECK(jobs[i].deadline == again[i].deadline);
  }

  RandomStream rng3(43);
  auto other = prepare_jobs(records, params, rng3, 50000);
  bool any_diff = false;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    any_diff = any_diff || jobs[i].deadline != other[i].deadline || jobs[i].A != other[i].A;
  }
  CHECK(any_diff);
}

TEST_CASE("generated workloads are plausible and round-trip through text form") {
  SyntheticWorkloadParams params;
  params.job_count = 120;
  params.duration = 2 * kSecondsPerDay;
  params.user_count = 8;

  Rng rng(7);
  auto records = generate_workload(params, rng);
  REQUIRE(static_cast<int>(records.size()) == params.job_count);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    CHECK(r.job_id == static_cast<long>(i + 1));
    CHECK(r.submit >= 0);
    CHECK(r.submit < params.duration);
    CHECK(r.runtime_s >= 30);
    CHECK(r.runtime_s <= params.runtime_cap_s);
    CHECK(r.user_id >= 0);
    CHECK(r.user_id < params.user_count);
    if (i > 0) CHECK(records[i - 1].submit <= r.submit);
  }

  std::istringstream text(workload_swf_text(records));
  auto parsed = parse_swf(text);
  REQUIRE(parsed.records.size() == records.size());
  CHECK(parsed.skipped == 0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(parsed.records[i].job_id == records[i].job_id);
    CHECK(parsed.records[i].submit == records[i].submit);
    CHECK(parsed.records[i].runtime_s == records[i].runtime_s);
    CHECK(parsed.records[i].user_id == records[i].user_id);
  }
}
