#include <doctest.h>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "spotsim/broker.hpp"

using namespace spotsim;

namespace {

CloudModel one_dc_cloud() {
  CloudModel c;
  c.types = {{"STD", 1.0, 1, 1740, 85000}};
  c.datacenters = {{"dc1", {0}}};
  return c;
}

CloudModel two_dc_cloud() {
  CloudModel c;
  c.types = {{"STD", 1.0, 1, 1740, 85000}};
  c.datacenters = {{"dc1", {0}}, {"dc2", {0}}};
  return c;
}

PriceSeries series_of(std::vector<PricePoint> pts) {
  PriceSeries s;
  for (const auto& p : pts) s.add(p.at, p.price);
  return s;
}

Job make_job(long id, SimTime submit, SimTime base, SimTime estimate, SimTime deadline,
             int user = 1) {
  Job j;
  j.id = id;
  j.user_id = user;
  j.submit_time = submit;
  j.base_runtime_s = base;
  j.A = 1.0;
  j.sigma = 0.0;
  j.user_estimate_s = estimate;
  j.deadline = deadline;
  return j;
}

// A full single-run stack over a fixed trace; mirrors the order used by the
// experiment driver (price replay scheduled before the workload).
struct World {
  Simulation sim;
  CloudModel cloud;
  TraceSet traces;
  MetricsCollector metrics;
  std::unique_ptr<CloudProvider> provider;
  std::unique_ptr<Broker> broker;

  World(CloudModel c, TraceSet t, BrokerParams params) : cloud(std::move(c)), traces(std::move(t)) {
    provider = std::make_unique<CloudProvider>(sim, cloud, traces, 0, params.provisioning_lag_s);
    broker = std::make_unique<Broker>(sim, *provider, cloud, metrics, params);
  }

  RunMetrics run(const std::vector<Job>& jobs, SimTime horizon) {
    provider->start(horizon);
    broker->run_workload(jobs, horizon);
    sim.run_until(horizon);
    broker->finish(horizon);
    return metrics.finalize(provider->total_billed());
  }
};

}  // namespace

TEST_CASE("urgency measures the remaining slack after padded runtime and lag") {
  UrgencyParams p{2.0, 300};
  CHECK(urgency(3600, 0, p, 1000) == 1300);
  CHECK(urgency(2000, 0, p, 1000) == 0);  // clamped at zero
  CHECK(urgency(5600, 2000, p, 1000) == 1300);

  // At alpha=20 the slack is consumed once the deadline is 20e+lag away.
  UrgencyParams conservative{20.0, 300};
  CHECK(urgency(20300, 0, conservative, 1000) == 0);
  CHECK(urgency(20301, 0, conservative, 1000) == 1);
}

TEST_CASE("raising the urgency modifier never shrinks the urgent region") {
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    const SimTime deadline = rng.uniform_int(0, 1000000);
    const SimTime now = rng.uniform_int(0, 1000000);
    const SimTime e = rng.uniform_int(0, 50000);
    const SimTime lo = urgency(deadline, now, UrgencyParams{1.0, 300}, e);
    const SimTime hi = urgency(deadline, now, UrgencyParams{8.0, 300}, e);
    CHECK(hi <= lo);  // more conservative -> urgent earlier (smaller waiting budget)
  }
}

TEST_CASE("each bidding strategy prices from its own signal") {
  PriceWindow history{0, 3000, {{0, 30000}, {1000, 35000}, {2000, 40000}}};
  BidInputs in;
  in.history = &history;
  in.current = 32000;
  in.on_demand = 85000;

  CHECK(compute_bid(BiddingStrategyKind::Minimum, in) == 31000);
  CHECK(compute_bid(BiddingStrategyKind::OnDemand, in) == 85000);
  CHECK(compute_bid(BiddingStrategyKind::High, in) == 100000000);
  CHECK(compute_bid(BiddingStrategyKind::Current, in) == 33000);

  // Time-weighted: 1000s at .030, 1000s at .035, 1000s at .040.
  CHECK(compute_bid(BiddingStrategyKind::Mean, in) == 35000);
  in.mean_time_weighted = false;
  CHECK(compute_bid(BiddingStrategyKind::Mean, in) == 35000);

  PriceWindow skewed{0, 3000, {{0, 30000}, {2900, 60000}}};
  in.history = &skewed;
  in.mean_time_weighted = true;
  CHECK(compute_bid(BiddingStrategyKind::Mean, in) == 31000);  // spike held only 100s
  in.mean_time_weighted = false;
  CHECK(compute_bid(BiddingStrategyKind::Mean, in) == 45000);

  BidInputs no_history;
  no_history.current = 32000;
  no_history.on_demand = 85000;
  CHECK_THROWS_AS(compute_bid(BiddingStrategyKind::Minimum, no_history), std::logic_error);
  CHECK_THROWS_AS(compute_bid(BiddingStrategyKind::Mean, no_history), std::logic_error);
  CHECK(compute_bid(BiddingStrategyKind::OnDemand, no_history) == 85000);
}

TEST_CASE("urgent jobs provision at once, lifting losing bids just above the price") {
  PriceWindow history{0, 3000, {{0, 30000}, {1000, 35000}, {2000, 40000}}};
  BidInputs in;
  in.history = &history;
  in.current = 32000;
  in.on_demand = 50000;
  UrgencyParams p{2.0, 300};

  // No waiting budget left: deadline == now + 2*1000 + 300.
  SUBCASE("a bid at or below the market is overridden") {
    auto d = bid_check(1000, 3300, 1000, p, BiddingStrategyKind::Minimum, in);
    CHECK(d.action == BidDecision::Action::Provision);
    CHECK(d.bid == 33000);  // 0.031 lifted to 0.032 + granularity
  }
  SUBCASE("a bid already above the market stands") {
    auto d = bid_check(1000, 3300, 1000, p, BiddingStrategyKind::OnDemand, in);
    CHECK(d.action == BidDecision::Action::Provision);
    CHECK(d.bid == 50000);
  }
  SUBCASE("remaining budget defers the decision") {
    auto d = bid_check(1000, 4000, 1000, p, BiddingStrategyKind::Minimum, in);
    CHECK(d.action == BidDecision::Action::Recheck);
    CHECK(d.recheck_at == 1700);  // now + 700 of slack
  }
}

TEST_CASE("deferred checks land exactly when the waiting budget runs out") {
  PriceWindow history{0, 3000, {{0, 30000}}};
  BidInputs in;
  in.history = &history;
  in.current = 30000;
  in.on_demand = 85000;

  Rng rng(21);
  for (int i = 0; i < 1000; ++i) {
    const double alpha = 1.0 + rng.uniform(0.0, 19.0);
    UrgencyParams p{alpha, 300};
    const SimTime now = rng.uniform_int(0, 100000);
    const SimTime e = rng.uniform_int(1, 20000);
    const SimTime deadline = now + rng.uniform_int(0, 200000);
    auto d = bid_check(now, deadline, e, p, BiddingStrategyKind::Current, in);
    if (d.action == BidDecision::Action::Recheck) {
      // The recheck lands at deadline - (alpha*e + lag), independent of now...
      CHECK(d.recheck_at == deadline - (static_cast<SimTime>(std::llround(alpha * e)) + 300));
      CHECK(d.recheck_at <= deadline);
      // ...and with an unchanged estimate the budget is exactly zero there.
      auto then = bid_check(d.recheck_at, deadline, e, p, BiddingStrategyKind::Current, in);
      CHECK(then.action == BidDecision::Action::Provision);
      CHECK(urgency(deadline, d.recheck_at, p, e) == 0);
    }
  }
}

TEST_CASE("type preference favors parallelism for long jobs and frugality for short ones") {
  const CloudModel m = CloudModel::default_catalogue();

  // Over an hour everywhere: the most parallel type wins.
  CHECK(preferred_type({36000, 36000, 36000, 36000, 36000}, m.types) == m.type_index("C1.XLARGE"));
  // Under an hour everywhere: the least parallel type wins.
  CHECK(preferred_type({3000, 1200, 700, 1200, 400}, m.types) == m.type_index("M1.SMALL"));
  // Over an hour only on the small types: pick the biggest of those, with the
  // equal-ECU two-core pair resolved by name.
  CHECK(preferred_type({7200, 5000, 3000, 4000, 2000}, m.types) == m.type_index("C1.MEDIUM"));

  // Distinct compute-unit counts break a core-count tie.
  std::vector<InstanceType> custom = {
      {"A", 4.0, 2, 1000, 1}, {"B", 6.0, 2, 1000, 1}, {"C", 1.0, 1, 1000, 1}, {"D", 8.0, 4, 1000, 1}};
  CHECK(preferred_type({5000, 5000, 8000, 3000}, custom) == 1);  // B: 2 cores, more units
  CHECK(preferred_type({900, 800, 700, 600}, custom) == 2);      // all short -> 1 core

  CHECK_THROWS_AS(preferred_type({1, 2}, m.types), std::invalid_argument);
}

TEST_CASE("the runtime estimator averages the last two completions per user") {
  EstimatorState est;
  CHECK(est.reference_estimate(7, 800) == 800);  // no history -> caller's estimate
  est.record_completion(7, 1000);
  CHECK(est.reference_estimate(7, 800) == 1000);
  est.record_completion(7, 2000);
  CHECK(est.reference_estimate(7, 800) == 1500);
  est.record_completion(7, 4000);
  CHECK(est.reference_estimate(7, 800) == 3000);  // only the last two count
  CHECK(est.reference_estimate(8, 123) == 123);   // users do not share history

  // Rescaling a 1500s reference estimate onto a machine 4x as fast.
  Job j = make_job(1, 0, 1500, 1500, 100000);
  j.A = 8.0;
  const InstanceType quad{"QUAD", 4.0, 2, 1000, 1};
  CHECK(scaled_runtime(1500.0, j, quad) == 375);
}

TEST_CASE("a job waits out its budget and then leases exactly one machine") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}}));
  BrokerParams params;
  params.strategy = BiddingStrategyKind::OnDemand;
  params.mechanism = MechanismKind::None;
  params.alpha = 2.0;
  World w(one_dc_cloud(), std::move(traces), params);

  // Estimate 1800 at alpha 2 plus 300s lag: the check lands at 10000-3900.
  auto m = w.run({make_job(1, 0, 1800, 1800, 10000)}, 12000);

  REQUIRE(w.provider->instances().size() == 1);
  CHECK(w.provider->instance(0).lease_start == 6400);  // provisioned at 6100
  CHECK(w.provider->instance(0).bid == 85000);
  CHECK(w.broker->jobs()[0].phase == JobPhase::Done);
  CHECK(w.broker->jobs()[0].finished_at == 8200);
  CHECK(m.jobs_completed == 1);
  CHECK(m.jobs_within_deadline == 1);
  CHECK(m.deadline_violations == 0);
  CHECK(m.total_cost == 30000);  // one exact lease hour, reaped at its boundary
  CHECK(m.vm_hours_charged == 1);
  CHECK(m.instances_used == 1);
  CHECK(m.failures_out_of_bid == 0);
}

TEST_CASE("an urgent low bid is lifted just above the current price") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}, {1000, 32000}}));
  BrokerParams params;
  params.strategy = BiddingStrategyKind::Minimum;
  params.mechanism = MechanismKind::None;
  params.alpha = 2.0;
  World w(one_dc_cloud(), std::move(traces), params);

  // Arrives with no waiting budget at its first pass (t=2040).
  auto m = w.run({make_job(1, 2000, 1800, 1800, 5900)}, 8000);

  REQUIRE(w.provider->instances().size() == 1);
  // Window minimum 0.030 + granularity loses to the current 0.032: the bid
  // goes out as 0.033.
  CHECK(w.provider->instance(0).bid == 33000);
  CHECK(w.provider->instance(0).lease_start == 2340);
  CHECK(w.broker->jobs()[0].finished_at == 4140);
  CHECK(m.jobs_within_deadline == 1);
}

TEST_CASE("without a recovery mechanism lost work is redone from scratch") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}, {5000, 40000}, {6000, 30000}}));
  BrokerParams params;
  params.strategy = BiddingStrategyKind::Current;
  params.mechanism = MechanismKind::None;
  params.alpha = 2.0;
  World w(one_dc_cloud(), std::move(traces), params);

  auto m = w.run({make_job(1, 0, 6000, 6000, 12300)}, 13000);

  // First lease: bid 0.031 placed at t=0, killed by the rise at t=5000.
  REQUIRE(w.provider->instances().size() == 2);
  CHECK(w.provider->instance(0).bid == 31000);
  CHECK(w.provider->instance(0).end_reason == InstanceEndReason::OutOfBid);
  REQUIRE(w.broker->failure_losses().size() == 1);
  CHECK(w.broker->failure_losses()[0].lost_wall_s == doctest::Approx(4700.0));
  CHECK(w.broker->failure_losses()[0].mechanism == MechanismKind::None);

  // Retry at the next pass bids above the new price and redoes all 6000s.
  CHECK(w.provider->instance(1).bid == 41000);
  CHECK(w.provider->instance(1).lease_start == 5340);
  CHECK(w.broker->jobs()[0].finished_at == 11340);
  CHECK(m.jobs_within_deadline == 1);
  CHECK(m.failures_out_of_bid == 1);
  // First lease pays only its full first hour (the cut partial is free);
  // the second pays two exact hours, one at 0.040 and one at 0.030.
  CHECK(m.total_cost == 30000 + 70000);
  CHECK(m.vm_hours_charged == 3);
}

TEST_CASE("hourly state saves bound the rollback and resume on the original request") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}, {4000, 40000}, {4500, 25000}}));
  BrokerParams params;
  params.strategy = BiddingStrategyKind::Current;
  params.mechanism = MechanismKind::Checkpointing;
  params.alpha = 2.0;
  World w(one_dc_cloud(), std::move(traces), params);

  auto m = w.run({make_job(1, 0, 5000, 5000, 10300)}, 12000);

  // One broker-side machine, two physical leases of the same request.
  CHECK(w.broker->vms().size() == 1);
  REQUIRE(w.provider->instances().size() == 2);
  CHECK(w.provider->instance(0).request_id == w.provider->instance(1).request_id);

  // The boundary at 3900 wrote a 28s snapshot at progress 3600; the kill at
  // 4000 rolled back only the 72s that followed it.
  REQUIRE(w.broker->failure_losses().size() == 1);
  CHECK(w.broker->failure_losses()[0].lost_wall_s == doctest::Approx(72.0));
  CHECK(w.broker->failure_losses()[0].suspend_s == 28);

  // Back in bid at 4500, running at 4800, 22s local restore, 1400s remain.
  CHECK(w.provider->instance(1).lease_start == 4800);
  CHECK(w.broker->jobs()[0].finished_at == 6222);
  CHECK(m.jobs_within_deadline == 1);
  CHECK(m.failures_out_of_bid == 1);
  // 0.030 for the first lease hour; its cut partial is free; 0.025 for the
  // exact resumed hour.
  CHECK(m.total_cost == 55000);
}

TEST_CASE("relocation picks the cheaper market and restores across datacenters") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}, {4000, 40000}}));
  traces.put({1, 0}, series_of({{0, 35000}}));
  BrokerParams params;
  params.strategy = BiddingStrategyKind::Current;
  params.mechanism = MechanismKind::Migration;
  params.alpha = 2.0;
  World w(two_dc_cloud(), std::move(traces), params);

  auto m = w.run({make_job(1, 0, 5000, 5000, 7000)}, 9000);

  // Kill at 4000 with a snapshot at 3600: no waiting budget remains, so the
  // job moves immediately to the cheaper other-datacenter market.
  REQUIRE(w.provider->instances().size() == 2);
  CHECK(w.provider->instance(0).dc == 0);
  CHECK(w.provider->instance(1).dc == 1);
  CHECK(w.provider->instance(1).bid == 36000);  // current 0.035 + granularity
  CHECK(w.provider->instance(1).lease_start == 4300);
  REQUIRE(w.broker->failure_losses().size() == 1);
  CHECK(w.broker->failure_losses()[0].lost_wall_s == doctest::Approx(72.0));

  // 43s cross-datacenter restore, then the remaining 1400s of work.
  CHECK(w.broker->jobs()[0].finished_at == 5743);
  CHECK(m.jobs_within_deadline == 1);
  CHECK(m.total_cost == 30000 + 35000);
  CHECK(w.broker->vms().size() == 2);
}

TEST_CASE("relocation with remaining budget waits for the scheduled recheck") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}, {4000, 40000}}));
  traces.put({1, 0}, series_of({{0, 35000}}));
  BrokerParams params;
  params.strategy = BiddingStrategyKind::Current;
  params.mechanism = MechanismKind::Migration;
  params.alpha = 2.0;
  World w(two_dc_cloud(), std::move(traces), params);

  auto m = w.run({make_job(1, 0, 5000, 5000, 8000)}, 10000);

  // At the kill (t=4000) the move needs 43+1400s; with alpha padding that
  // leaves 814s of budget, so the new lease starts only after the recheck.
  REQUIRE(w.provider->instances().size() == 2);
  CHECK(w.provider->instance(1).dc == 1);
  CHECK(w.provider->instance(1).lease_start == 4814 + 300);
  CHECK(w.broker->jobs()[0].finished_at == 5114 + 43 + 1400);
  CHECK(m.jobs_within_deadline == 1);
}

TEST_CASE("long jobs are duplicated in a different market and the copy dies with the winner") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}}));
  traces.put({1, 0}, series_of({{0, 35000}}));
  BrokerParams params;
  params.strategy = BiddingStrategyKind::OnDemand;
  params.mechanism = MechanismKind::Duplication;
  params.alpha = 2.0;
  World w(two_dc_cloud(), std::move(traces), params);

  auto m = w.run({make_job(1, 0, 7200, 7200, 20000)}, 22000);

  CHECK(w.broker->replicas_created() == 1);
  REQUIRE(w.broker->jobs().size() == 2);
  CHECK(w.broker->jobs()[1].is_replica);

  // Original and copy lease in different datacenters, both at the deferred
  // provisioning point (5300) + lag.
  REQUIRE(w.provider->instances().size() == 2);
  CHECK(w.provider->instance(0).dc != w.provider->instance(1).dc);
  CHECK(w.provider->instance(0).lease_start == 5600);
  CHECK(w.provider->instance(1).lease_start == 5600);

  // The original finishes first (same speed, earlier event) and the copy is
  // cancelled; only one completion is counted.
  CHECK(w.broker->jobs()[0].phase == JobPhase::Done);
  CHECK(w.broker->jobs()[0].finished_at == 12800);
  CHECK(w.broker->jobs()[1].phase == JobPhase::Cancelled);
  CHECK(m.jobs_submitted == 1);
  CHECK(m.jobs_completed == 1);
  CHECK(m.jobs_within_deadline == 1);

  // Both leases ran 5600->12800 (two exact hours each): 2x0.030 + 2x0.035.
  CHECK(m.total_cost == 60000 + 70000);
}

TEST_CASE("short jobs reuse an already-paid machine instead of leasing") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}}));
  BrokerParams params;
  params.strategy = BiddingStrategyKind::OnDemand;
  params.mechanism = MechanismKind::None;
  params.alpha = 2.0;
  World w(one_dc_cloud(), std::move(traces), params);

  auto m = w.run({make_job(1, 0, 1000, 1000, 2300), make_job(2, 1340, 600, 600, 10000, 2)}, 6000);

  // The second job lands inside the first lease's paid remainder.
  CHECK(w.provider->instances().size() == 1);
  CHECK(w.broker->jobs()[0].finished_at == 1300);
  CHECK(w.broker->jobs()[1].finished_at == 1980);  // 1380 pass + 600s
  CHECK(m.instances_used == 1);
  CHECK(m.total_cost == 30000);
  CHECK(m.jobs_within_deadline == 2);
}

TEST_CASE("jobs queue behind a busy machine when it frees up inside their budget") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}}));
  BrokerParams params;
  params.strategy = BiddingStrategyKind::OnDemand;
  params.mechanism = MechanismKind::None;
  params.alpha = 2.0;
  World w(one_dc_cloud(), std::move(traces), params);

  auto m = w.run({make_job(1, 0, 3000, 3000, 6300), make_job(2, 0, 600, 600, 50000, 2)}, 9000);

  // Job 2's huge budget lets it queue behind job 1 on the provisioning
  // machine rather than trigger a second lease.
  CHECK(w.provider->instances().size() == 1);
  CHECK(w.broker->jobs()[0].finished_at == 3300);
  CHECK(w.broker->jobs()[1].finished_at == 3900);
  CHECK(m.instances_used == 1);
  CHECK(m.jobs_within_deadline == 2);
  CHECK(m.total_cost == 2 * 30000);  // 300->7500 is two exact hours
}

TEST_CASE("work cut off at the horizon splits into violations and censored jobs") {
  TraceSet traces;
  traces.put({0, 0}, series_of({{0, 30000}}));

  SUBCASE("deadline already passed: a violation") {
    BrokerParams params;
    params.strategy = BiddingStrategyKind::OnDemand;
    World w(one_dc_cloud(), std::move(traces), params);
    auto m = w.run({make_job(1, 0, 10000, 10000, 1500)}, 2000);
    CHECK(m.jobs_completed == 0);
    CHECK(m.deadline_violations == 1);
    CHECK(m.censored_jobs == 0);
    CHECK(m.total_cost == 30000);  // the cut partial hour was client-initiated
  }
  SUBCASE("deadline still ahead: censored, not blamed") {
    BrokerParams params;
    params.strategy = BiddingStrategyKind::OnDemand;
    World w(one_dc_cloud(), std::move(traces), params);
    auto m = w.run({make_job(1, 0, 10000, 10000, 5000)}, 2000);
    CHECK(m.deadline_violations == 0);
    CHECK(m.censored_jobs == 1);
  }
}
