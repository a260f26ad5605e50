#include "spotsim/broker.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "spotsim/log.hpp"

namespace spotsim {

const char* to_string(BiddingStrategyKind kind) {
  switch (kind) {
    case BiddingStrategyKind::Minimum: return "Minimum";
    case BiddingStrategyKind::Mean: return "Mean";
    case BiddingStrategyKind::OnDemand: return "OnDemand";
    case BiddingStrategyKind::High: return "High";
    case BiddingStrategyKind::Current: return "Current";
  }
  return "unknown";
}

bool parse_strategy(std::string_view name, BiddingStrategyKind& out) {
  std::string folded(name);
  for (char& c : folded) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (folded == "minimum") out = BiddingStrategyKind::Minimum;
  else if (folded == "mean") out = BiddingStrategyKind::Mean;
  else if (folded == "ondemand" || folded == "on-demand") out = BiddingStrategyKind::OnDemand;
  else if (folded == "high") out = BiddingStrategyKind::High;
  else if (folded == "current") out = BiddingStrategyKind::Current;
  else return false;
  return true;
}

SimTime urgency(SimTime deadline, SimTime now, const UrgencyParams& params,
                SimTime estimated_runtime_s) {
  const auto padded = static_cast<SimTime>(
      std::llround(params.alpha * static_cast<double>(estimated_runtime_s)));
  const SimTime slack = deadline - now - (padded + params.provisioning_lag_s);
  return std::max<SimTime>(0, slack);
}

MicroUsd compute_bid(BiddingStrategyKind strategy, const BidInputs& inputs) {
  switch (strategy) {
    case BiddingStrategyKind::Minimum:
      if (inputs.history == nullptr || inputs.history->points.empty()) {
        throw std::logic_error("Minimum strategy needs price history");
      }
      return inputs.history->minimum() + kBidGranularity;
    case BiddingStrategyKind::Mean:
      if (inputs.history == nullptr || inputs.history->points.empty()) {
        throw std::logic_error("Mean strategy needs price history");
      }
      return inputs.mean_time_weighted ? inputs.history->time_weighted_mean()
                                       : inputs.history->plain_mean();
    case BiddingStrategyKind::OnDemand:
      return inputs.on_demand;
    case BiddingStrategyKind::High:
      return kHighBid;
    case BiddingStrategyKind::Current:
      return inputs.current + kBidGranularity;
  }
  throw std::logic_error("unknown bidding strategy");
}

BidDecision bid_check(SimTime now, SimTime deadline, SimTime estimated_runtime_s,
                      const UrgencyParams& params, BiddingStrategyKind strategy,
                      const BidInputs& inputs) {
  MicroUsd bid = compute_bid(strategy, inputs);
  const SimTime u = urgency(deadline, now, params, estimated_runtime_s);
  if (u == 0) {
    if (bid <= inputs.current) bid = inputs.current + kBidGranularity;
    return BidDecision{BidDecision::Action::Provision, bid, 0};
  }
  return BidDecision{BidDecision::Action::Recheck, 0, now + u};
}

namespace {

int preferred_type_masked(const std::vector<SimTime>& est, const std::vector<InstanceType>& types,
                          const std::vector<bool>& allowed) {
  // Prefer (most cores, most ECUs, lowest name) among over-an-hour types;
  // otherwise (fewest cores, fewest ECUs, lowest name).
  int best = -1;
  auto better = [&](int a, int b, bool want_long) {
    // true if a beats b
    if (want_long) {
      if (types[a].cores != types[b].cores) return types[a].cores > types[b].cores;
      if (types[a].ecus != types[b].ecus) return types[a].ecus > types[b].ecus;
    } else {
      if (types[a].cores != types[b].cores) return types[a].cores < types[b].cores;
      if (types[a].ecus != types[b].ecus) return types[a].ecus < types[b].ecus;
    }
    return types[a].name < types[b].name;
  };
  bool any_long = false;
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (allowed[i] && est[i] > kSecondsPerHour) any_long = true;
  }
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (!allowed[i]) continue;
    const int ti = static_cast<int>(i);
    const bool is_long = est[i] > kSecondsPerHour;
    if (any_long && !is_long) continue;
    if (best < 0 || better(ti, best, any_long)) best = ti;
  }
  if (best < 0) throw std::logic_error("no instance type available");
  return best;
}

}  // namespace

int preferred_type(const std::vector<SimTime>& est_runtime_per_type,
                   const std::vector<InstanceType>& types) {
  if (est_runtime_per_type.size() != types.size() || types.empty()) {
    throw std::invalid_argument("preferred_type: estimate/type size mismatch");
  }
  std::vector<bool> allowed(types.size(), true);
  return preferred_type_masked(est_runtime_per_type, types, allowed);
}

void EstimatorState::record_completion(int user_id, SimTime actual_reference_runtime_s) {
  History& h = users_[user_id];
  if (h.count < 2) {
    h.runs[h.count++] = actual_reference_runtime_s;
  } else {
    h.runs[0] = h.runs[1];
    h.runs[1] = actual_reference_runtime_s;
  }
}

SimTime EstimatorState::reference_estimate(int user_id, SimTime fallback_s) const {
  auto it = users_.find(user_id);
  if (it == users_.end() || it->second.count == 0) return fallback_s;
  const History& h = it->second;
  if (h.count == 1) return h.runs[0];
  return static_cast<SimTime>(
      std::llround((static_cast<double>(h.runs[0]) + static_cast<double>(h.runs[1])) / 2.0));
}

Broker::Broker(Simulation& sim, CloudProvider& provider, const CloudModel& cloud,
               MetricsCollector& metrics, BrokerParams params)
    : sim_(sim), provider_(provider), cloud_(cloud), metrics_(metrics), params_(std::move(params)) {
  urgency_params_ = UrgencyParams{params_.alpha, params_.provisioning_lag_s};
  CloudProvider::Callbacks cb;
  cb.on_instance_running = [this](int iid) { on_instance_running(iid); };
  cb.on_out_of_bid = [this](int iid) { on_out_of_bid(iid); };
  cb.on_request_rejected = [this](int rid) { on_request_rejected(rid); };
  cb.on_hour_boundary = [this](int iid) { on_hour_boundary(iid); };
  cb.on_billed = [this](const Instance& inst) {
    metrics_.record_bill(inst.id, inst.bill_total(), inst.charged_hours());
  };
  provider_.set_callbacks(std::move(cb));
}

void Broker::run_workload(const std::vector<Job>& jobs, SimTime horizon) {
  horizon_ = horizon;
  jobs_.reserve(jobs.size() * 2);
  for (const auto& job : jobs) {
    const int idx = static_cast<int>(jobs_.size());
    JobRec rec;
    rec.job = job;
    rec.idx = idx;
    jobs_.push_back(std::move(rec));
    sim_.schedule(job.submit_time, EventKind::JobArrival, [this, idx] { on_arrival(idx); });
  }
  sim_.schedule(0, EventKind::SchedulePass, [this] { on_pass(); });
}

void Broker::on_arrival(int idx) {
  JobRec& rec = jobs_[idx];
  rec.phase = JobPhase::Unscheduled;
  pending_alloc_.insert(idx);
  metrics_.record_submitted();
}

void Broker::on_pass() {
  const std::vector<int> snapshot(pending_alloc_.begin(), pending_alloc_.end());
  std::vector<int> created_replicas;
  for (int idx : snapshot) {
    if (!pending_alloc_.count(idx)) continue;  // resolved earlier in this pass
    JobRec& rec = jobs_[idx];
    if (rec.phase == JobPhase::Unscheduled) {
      maybe_duplicate(idx, created_replicas);
      run_allocation(idx);
    } else if (rec.phase == JobPhase::WaitingRecheck && !rec.migrating_recheck) {
      if (try_existing_capacity(idx)) {
        // placed on existing capacity; the pending bid check is obsolete
      }
    }
  }
  for (int idx : created_replicas) {
    if (pending_alloc_.count(idx) && jobs_[idx].phase == JobPhase::Unscheduled) {
      run_allocation(idx);
    }
  }
  const SimTime next = sim_.now() + params_.schedule_interval_s;
  if (next <= horizon_) {
    sim_.schedule(next, EventKind::SchedulePass, [this] { on_pass(); });
  }
}

void Broker::on_bid_check(int idx) {
  JobRec& rec = jobs_[idx];
  rec.recheck = {};
  if (rec.phase != JobPhase::WaitingRecheck) return;
  if (rec.migrating_recheck) {
    recover_migration(idx);
  } else {
    rec.phase = JobPhase::Unscheduled;
    run_allocation(idx);
  }
}

SimTime Broker::ref_estimate(const JobRec& rec) const {
  return estimator_.reference_estimate(rec.job.user_id, rec.job.user_estimate_s);
}

SimTime Broker::est_on(const JobRec& rec, int type) const {
  return scaled_runtime(static_cast<double>(ref_estimate(rec)), rec.job, cloud_.types[type]);
}

std::optional<MarketKey> Broker::occupied_market(const JobRec& rec) const {
  if (rec.vm >= 0) {
    const VmRec& vm = vms_[rec.vm];
    if (vm.phase != VmRec::Phase::Closed) return MarketKey{vm.dc, vm.type};
  }
  // Not placed yet: its current target market.
  std::vector<SimTime> est(cloud_.types.size());
  for (std::size_t t = 0; t < cloud_.types.size(); ++t) {
    est[t] = est_on(rec, static_cast<int>(t));
  }
  const int ty = preferred_type(est, cloud_.types);
  const int dc = provider_.cheapest_datacenter(ty, sim_.now());
  if (dc < 0) return std::nullopt;
  return MarketKey{dc, ty};
}

std::optional<MarketKey> Broker::forbidden_market(const JobRec& rec) const {
  if (!rec.is_replica || rec.sibling < 0) return std::nullopt;
  const JobRec& original = jobs_[rec.sibling];
  if (original.phase == JobPhase::Done || original.phase == JobPhase::Cancelled) {
    return std::nullopt;
  }
  return occupied_market(original);
}

SimTime Broker::expected_idle_at(const VmRec& vm) const {
  const SimTime now = sim_.now();
  SimTime at = now;
  if (vm.phase == VmRec::Phase::Provisioning) {
    at = std::max(now, vm.submitted_at + params_.provisioning_lag_s);
  }
  if (vm.paused) at = std::max(at, vm.pause_end);
  if (vm.running_job >= 0) {
    const JobRec& rec = jobs_[vm.running_job];
    const double rate = compute_rate(rec.job, cloud_.types[vm.type]);
    double wall_done = rec.progress_ref / rate;
    if (!vm.paused && vm.stint_start >= 0) wall_done += static_cast<double>(now - vm.stint_start);
    const SimTime est_total = est_on(rec, vm.type);
    at += std::max<SimTime>(0, est_total - static_cast<SimTime>(wall_done));
  }
  for (int q : vm.queue) at += est_on(jobs_[q], vm.type);
  return at;
}

bool Broker::try_existing_capacity(int idx) {
  JobRec& rec = jobs_[idx];
  const SimTime now = sim_.now();
  const auto forb = forbidden_market(rec);

  std::vector<SimTime> est(cloud_.types.size());
  for (std::size_t t = 0; t < cloud_.types.size(); ++t) est[t] = est_on(rec, static_cast<int>(t));

  // An idle VM whose already-paid hour remainder covers the job.
  int best_vm = -1;
  SimTime best_slack = 0;
  for (const auto& vm : vms_) {
    if (vm.phase != VmRec::Phase::Running || vm.running_job >= 0 || !vm.queue.empty()) continue;
    if (forb && forb->dc == vm.dc && forb->type == vm.type) continue;
    const SimTime lease_start = provider_.instance(vm.instance_id).lease_start;
    const SimTime remainder = kSecondsPerHour - (now - lease_start) % kSecondsPerHour;
    const SimTime need = est[vm.type];
    if (need <= remainder) {
      const SimTime slack = remainder - need;
      if (best_vm < 0 || slack < best_slack) {
        best_vm = vm.id;
        best_slack = slack;
      }
    }
  }
  if (best_vm >= 0) {
    if (rec.recheck.valid()) sim_.cancel(rec.recheck);
    rec.recheck = {};
    rec.migrating_recheck = false;
    start_job_on(vms_[best_vm], idx);
    return true;
  }

  // A VM expected to free up within the job's waiting budget.
  const int pt = preferred_type(est, cloud_.types);
  const SimTime budget = urgency(rec.job.deadline, now, urgency_params_, est[pt]);
  best_vm = -1;
  SimTime best_idle = 0;
  for (const auto& vm : vms_) {
    if (vm.phase != VmRec::Phase::Running && vm.phase != VmRec::Phase::Provisioning) continue;
    if (vm.phase == VmRec::Phase::Running && vm.running_job < 0 && vm.queue.empty()) continue;
    if (forb && forb->dc == vm.dc && forb->type == vm.type) continue;
    const SimTime idle_at = expected_idle_at(vm);
    if (idle_at - now > budget) continue;
    if (idle_at + est[vm.type] > rec.job.deadline) continue;
    if (best_vm < 0 || idle_at < best_idle) {
      best_vm = vm.id;
      best_idle = idle_at;
    }
  }
  if (best_vm >= 0) {
    if (rec.recheck.valid()) sim_.cancel(rec.recheck);
    rec.recheck = {};
    rec.migrating_recheck = false;
    vms_[best_vm].queue.push_back(idx);
    rec.phase = JobPhase::Assigned;
    rec.vm = best_vm;
    pending_alloc_.erase(idx);
    return true;
  }
  return false;
}

BidInputs Broker::market_inputs(int dc, int type, PriceWindow& scratch) const {
  scratch = provider_.history_window(dc, type, sim_.now(), params_.history_window_s);
  BidInputs inputs;
  inputs.history = &scratch;
  inputs.current = provider_.current_price(dc, type);
  inputs.on_demand = cloud_.types[type].on_demand_price;
  inputs.mean_time_weighted = params_.mean_time_weighted;
  return inputs;
}

void Broker::run_allocation(int idx) {
  if (try_existing_capacity(idx)) return;
  run_new_lease_check(idx);
}

void Broker::run_new_lease_check(int idx) {
  JobRec& rec = jobs_[idx];
  const SimTime now = sim_.now();
  const auto forb = forbidden_market(rec);

  std::vector<SimTime> est(cloud_.types.size());
  std::vector<bool> allowed(cloud_.types.size(), false);
  for (std::size_t t = 0; t < cloud_.types.size(); ++t) {
    est[t] = est_on(rec, static_cast<int>(t));
    const int exclude_dc = (forb && forb->type == static_cast<int>(t)) ? forb->dc : -1;
    allowed[t] = provider_.cheapest_datacenter(static_cast<int>(t), now, exclude_dc) >= 0;
  }
  const int ty = preferred_type_masked(est, cloud_.types, allowed);
  const int exclude_dc = (forb && forb->type == ty) ? forb->dc : -1;
  const int dc = provider_.cheapest_datacenter(ty, now, exclude_dc);
  if (dc < 0) throw std::logic_error("no datacenter available for chosen type");

  PriceWindow scratch;
  const BidInputs inputs = market_inputs(dc, ty, scratch);
  const BidDecision decision =
      bid_check(now, rec.job.deadline, est[ty], urgency_params_, params_.strategy, inputs);

  if (decision.action == BidDecision::Action::Recheck) {
    if (rec.recheck.valid()) sim_.cancel(rec.recheck);
    rec.recheck = sim_.schedule(decision.recheck_at, EventKind::BidCheck,
                                [this, idx] { on_bid_check(idx); });
    rec.phase = JobPhase::WaitingRecheck;
    rec.migrating_recheck = false;
    return;
  }

  // Provision now: weigh extending an existing lease against a new one.
  struct Candidate {
    bool feasible = false;
    MicroUsd cost = 0;
    bool is_new = true;
    int vm_id = -1;
  };
  std::vector<Candidate> candidates;
  for (const auto& vm : vms_) {
    if (vm.phase != VmRec::Phase::Running) continue;
    if (forb && forb->dc == vm.dc && forb->type == vm.type) continue;
    const SimTime est_v = est[vm.type];
    const SimTime wait_v = std::max<SimTime>(0, expected_idle_at(vm) - now);
    const SimTime hours = (est_v + kSecondsPerHour - 1) / kSecondsPerHour;
    Candidate c;
    c.feasible = now + wait_v + est_v <= rec.job.deadline;
    c.cost = hours * provider_.current_price(vm.dc, vm.type);
    c.is_new = false;
    c.vm_id = vm.id;
    candidates.push_back(c);
  }
  {
    Candidate c;
    const SimTime hours = (est[ty] + kSecondsPerHour - 1) / kSecondsPerHour;
    c.feasible = now + params_.provisioning_lag_s + est[ty] <= rec.job.deadline;
    c.cost = hours * decision.bid;
    c.is_new = true;
    candidates.push_back(c);
  }
  const Candidate best = *std::min_element(
      candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.feasible != b.feasible) return a.feasible;
        if (a.cost != b.cost) return a.cost < b.cost;
        if (a.is_new != b.is_new) return !a.is_new;
        return a.vm_id < b.vm_id;
      });

  if (rec.recheck.valid()) sim_.cancel(rec.recheck);
  rec.recheck = {};
  rec.migrating_recheck = false;

  if (!best.is_new) {
    VmRec& vm = vms_[best.vm_id];
    if (vm.running_job < 0 && vm.queue.empty() && !vm.paused) {
      start_job_on(vm, idx);
    } else {
      vm.queue.push_back(idx);
      rec.phase = JobPhase::Assigned;
      rec.vm = vm.id;
      pending_alloc_.erase(idx);
    }
    return;
  }

  const bool persistent = params_.mechanism == MechanismKind::Checkpointing;
  const int rid = provider_.submit_request(ty, decision.bid, dc, persistent);
  if (provider_.request(rid).state != RequestState::Provisioning) {
    throw std::logic_error("fresh request not provisioning despite bid above price");
  }
  const int vm_id = new_vm_for_request(rid, dc, ty, idx);
  rec.phase = JobPhase::Assigned;
  rec.vm = vm_id;
  pending_alloc_.erase(idx);
}

int Broker::new_vm_for_request(int request_id, int dc, int type, int first_job) {
  const int vm_id = static_cast<int>(vms_.size());
  VmRec vm;
  vm.id = vm_id;
  vm.request_id = request_id;
  vm.dc = dc;
  vm.type = type;
  vm.phase = VmRec::Phase::Provisioning;
  vm.submitted_at = sim_.now();
  if (first_job >= 0) vm.queue.push_back(first_job);
  vms_.push_back(std::move(vm));
  vm_by_request_[request_id] = vm_id;
  return vm_id;
}

void Broker::maybe_duplicate(int idx, std::vector<int>& created) {
  JobRec& rec = jobs_[idx];
  if (params_.mechanism != MechanismKind::Duplication) return;
  if (rec.is_replica || rec.replica_made) return;
  std::vector<SimTime> est(cloud_.types.size());
  for (std::size_t t = 0; t < cloud_.types.size(); ++t) est[t] = est_on(rec, static_cast<int>(t));
  const int pt = preferred_type(est, cloud_.types);
  if (est[pt] <= params_.duplication_threshold_s) return;

  const int replica_idx = static_cast<int>(jobs_.size());
  JobRec replica;
  replica.job = rec.job;
  replica.idx = replica_idx;
  replica.phase = JobPhase::Unscheduled;
  replica.is_replica = true;
  replica.sibling = idx;
  rec.sibling = replica_idx;
  rec.replica_made = true;
  jobs_.push_back(std::move(replica));
  pending_alloc_.insert(replica_idx);
  created.push_back(replica_idx);
  ++replicas_created_;
  if (log_enabled(LogLevel::Debug)) {
    log_line(LogLevel::Debug, "t=" + std::to_string(sim_.now()) + " job " +
                                  std::to_string(rec.job.id) + " duplicated");
  }
}

void Broker::start_job_on(VmRec& vm, int idx) {
  JobRec& rec = jobs_[idx];
  rec.phase = JobPhase::Running;
  rec.vm = vm.id;
  vm.running_job = idx;
  pending_alloc_.erase(idx);
  if (rec.recheck.valid()) {
    sim_.cancel(rec.recheck);
    rec.recheck = {};
  }
  if (rec.needs_restore && rec.snapshot) {
    vm.paused = true;
    vm.writing_snapshot = false;
    vm.pause_end = sim_.now() + resume_time(rec.snapshot->size_mb,
                                            rec.snapshot->stored_in_dc == vm.dc, params_.rates);
    const int vm_id = vm.id;
    vm.io_done = sim_.schedule(vm.pause_end, EventKind::SnapshotDone,
                               [this, vm_id] { on_io_done(vm_id); });
    if (log_enabled(LogLevel::Info)) {
      log_line(LogLevel::Info, "t=" + std::to_string(sim_.now()) + " job " +
                                   std::to_string(rec.job.id) + " restoring snapshot on vm " +
                                   std::to_string(vm.id));
    }
    return;
  }
  begin_compute(vm);
}

void Broker::begin_compute(VmRec& vm) {
  JobRec& rec = jobs_[vm.running_job];
  vm.stint_start = sim_.now();
  const double remaining_ref = static_cast<double>(rec.job.base_runtime_s) - rec.progress_ref;
  const int vm_id = vm.id;
  SimTime fire = sim_.now();
  if (remaining_ref > 1e-9) {
    fire += scaled_runtime(remaining_ref, rec.job, cloud_.types[vm.type]);
  }
  vm.completion = sim_.schedule(fire, EventKind::JobCompletion, [this, vm_id] { on_completion(vm_id); });
}

void Broker::accrue_progress(VmRec& vm) {
  if (vm.running_job < 0 || vm.paused || vm.stint_start < 0) return;
  JobRec& rec = jobs_[vm.running_job];
  const double rate = compute_rate(rec.job, cloud_.types[vm.type]);
  rec.progress_ref += static_cast<double>(sim_.now() - vm.stint_start) * rate;
  rec.progress_ref = std::min(rec.progress_ref, static_cast<double>(rec.job.base_runtime_s));
  vm.stint_start = sim_.now();
}

void Broker::detach_compute(VmRec& vm) {
  if (vm.completion.valid()) {
    sim_.cancel(vm.completion);
    vm.completion = {};
  }
  if (vm.io_done.valid()) {
    sim_.cancel(vm.io_done);
    vm.io_done = {};
  }
  vm.paused = false;
  vm.writing_snapshot = false;
  vm.stint_start = -1;
}

void Broker::on_instance_running(int instance_id) {
  const Instance& inst = provider_.instance(instance_id);
  auto it = vm_by_request_.find(inst.request_id);
  if (it == vm_by_request_.end()) throw std::logic_error("instance for unknown request");
  VmRec& vm = vms_[it->second];
  vm.instance_id = instance_id;
  vm.phase = VmRec::Phase::Running;

  if (vm.running_job >= 0) {
    // Re-fulfilled persistent request: resume the bound job.
    start_job_on(vm, vm.running_job);
    return;
  }
  if (!vm.queue.empty()) {
    const int idx = vm.queue.front();
    vm.queue.pop_front();
    start_job_on(vm, idx);
  }
}

void Broker::on_request_rejected(int request_id) {
  // Price rose past the bid during the provisioning lag (non-persistent).
  auto it = vm_by_request_.find(request_id);
  if (it == vm_by_request_.end()) return;
  VmRec& vm = vms_[it->second];
  vm.phase = VmRec::Phase::Closed;
  for (int q : vm.queue) {
    JobRec& rec = jobs_[q];
    rec.phase = JobPhase::Unscheduled;
    rec.vm = -1;
    pending_alloc_.insert(q);
  }
  vm.queue.clear();
  if (vm.running_job >= 0) {
    JobRec& rec = jobs_[vm.running_job];
    rec.phase = JobPhase::Unscheduled;
    rec.vm = -1;
    pending_alloc_.insert(vm.running_job);
    vm.running_job = -1;
  }
}

void Broker::on_hour_boundary(int instance_id) {
  VmRec& vm = vm_of_instance(instance_id);
  if (vm.running_job < 0 && vm.queue.empty()) {
    client_terminate_vm(vm);  // idle at the billing boundary
    return;
  }
  const bool takes_snapshots = params_.mechanism == MechanismKind::Checkpointing ||
                               params_.mechanism == MechanismKind::Migration;
  if (!takes_snapshots || vm.running_job < 0 || vm.paused) return;

  accrue_progress(vm);
  JobRec& rec = jobs_[vm.running_job];
  const double remaining = static_cast<double>(rec.job.base_runtime_s) - rec.progress_ref;
  if (remaining <= 1e-6) return;  // completion due this instant; skip the write

  if (vm.completion.valid()) {
    sim_.cancel(vm.completion);
    vm.completion = {};
  }
  vm.paused = true;
  vm.writing_snapshot = true;
  vm.pause_end = sim_.now() + suspend_time(cloud_.types[vm.type].memory_mb, params_.rates);
  rec.inflight = Snapshot{rec.progress_ref, cloud_.types[vm.type].memory_mb, vm.dc, sim_.now()};
  const int vm_id = vm.id;
  vm.io_done =
      sim_.schedule(vm.pause_end, EventKind::SnapshotDone, [this, vm_id] { on_io_done(vm_id); });
  if (log_enabled(LogLevel::Info)) {
    log_line(LogLevel::Info, "t=" + std::to_string(sim_.now()) + " snapshot of job " +
                                 std::to_string(rec.job.id) + " started on vm " +
                                 std::to_string(vm.id));
  }
}

void Broker::on_io_done(int vm_id) {
  VmRec& vm = vms_[vm_id];
  vm.io_done = {};
  vm.paused = false;
  JobRec& rec = jobs_[vm.running_job];
  if (vm.writing_snapshot) {
    vm.writing_snapshot = false;
    rec.snapshot = rec.inflight;
    rec.inflight.reset();
    if (log_enabled(LogLevel::Info)) {
      log_line(LogLevel::Info, "t=" + std::to_string(sim_.now()) + " snapshot of job " +
                                   std::to_string(rec.job.id) + " stored (progress=" +
                                   std::to_string(rec.snapshot->progress_ref) + ")");
    }
  } else {
    rec.needs_restore = false;
    if (log_enabled(LogLevel::Info)) {
      log_line(LogLevel::Info, "t=" + std::to_string(sim_.now()) + " job " +
                                   std::to_string(rec.job.id) + " restored on vm " +
                                   std::to_string(vm.id));
    }
  }
  begin_compute(vm);
}

void Broker::record_outcome_completed(JobRec& rec, SimTime at) {
  JobRec& original = rec.is_replica ? jobs_[rec.sibling] : rec;
  if (original.outcome_recorded) return;
  original.outcome_recorded = true;
  metrics_.record_completion(at <= rec.job.deadline);
  estimator_.record_completion(rec.job.user_id, rec.job.base_runtime_s);
}

void Broker::on_completion(int vm_id) {
  VmRec& vm = vms_[vm_id];
  vm.completion = {};
  const int idx = vm.running_job;
  JobRec& rec = jobs_[idx];
  rec.progress_ref = static_cast<double>(rec.job.base_runtime_s);
  rec.phase = JobPhase::Done;
  rec.finished_at = sim_.now();
  vm.running_job = -1;
  vm.stint_start = -1;
  record_outcome_completed(rec, sim_.now());
  if (log_enabled(LogLevel::Debug)) {
    log_line(LogLevel::Debug, "t=" + std::to_string(sim_.now()) + " job " +
                                  std::to_string(rec.job.id) +
                                  (rec.is_replica ? " (replica)" : "") + " completed");
  }
  if (rec.sibling >= 0) cancel_sibling(rec.sibling);

  if (!vm.queue.empty()) {
    const int next = vm.queue.front();
    vm.queue.pop_front();
    start_job_on(vm, next);
  }
}

void Broker::cancel_sibling(int idx) {
  JobRec& rec = jobs_[idx];
  switch (rec.phase) {
    case JobPhase::Done:
    case JobPhase::Cancelled:
      return;
    case JobPhase::Unscheduled:
    case JobPhase::WaitingRecheck: {
      if (rec.recheck.valid()) {
        sim_.cancel(rec.recheck);
        rec.recheck = {};
      }
      pending_alloc_.erase(idx);
      break;
    }
    case JobPhase::Assigned: {
      VmRec& vm = vms_[rec.vm];
      auto it = std::find(vm.queue.begin(), vm.queue.end(), idx);
      if (it != vm.queue.end()) vm.queue.erase(it);
      if (vm.phase == VmRec::Phase::Provisioning && vm.queue.empty() && vm.running_job < 0) {
        provider_.cancel_request(vm.request_id);
        vm.phase = VmRec::Phase::Closed;
      }
      break;
    }
    case JobPhase::Running: {
      VmRec& vm = vms_[rec.vm];
      detach_compute(vm);
      rec.inflight.reset();
      vm.running_job = -1;
      if (!vm.queue.empty()) {
        const int next = vm.queue.front();
        vm.queue.pop_front();
        rec.phase = JobPhase::Cancelled;
        rec.vm = -1;
        start_job_on(vm, next);
        return;
      }
      // The superseded copy's VM has nothing else to do: stop paying for it.
      client_terminate_vm(vm);
      break;
    }
    case JobPhase::WaitingRequest: {
      VmRec& vm = vms_[rec.vm];
      provider_.cancel_request(vm.request_id);
      vm.running_job = -1;
      vm.phase = VmRec::Phase::Closed;
      break;
    }
    case JobPhase::NotArrived:
      break;
  }
  rec.phase = JobPhase::Cancelled;
  rec.vm = -1;
}

void Broker::on_out_of_bid(int instance_id) {
  VmRec& vm = vm_of_instance(instance_id);
  metrics_.record_out_of_bid();
  vm.instance_id = -1;

  if (vm.running_job >= 0 && !vm.paused) accrue_progress(vm);
  const int running = vm.running_job;
  if (running >= 0) {
    JobRec& rec = jobs_[running];
    if (vm.paused && vm.writing_snapshot) rec.inflight.reset();  // in-flight write lost
  }
  detach_compute(vm);

  // Queued jobs return to the scheduling pool.
  for (int q : vm.queue) {
    JobRec& qrec = jobs_[q];
    qrec.phase = JobPhase::Unscheduled;
    qrec.vm = -1;
    pending_alloc_.insert(q);
  }
  vm.queue.clear();

  if (running < 0) {
    // Idle instance lost; nothing to recover.
    if (params_.mechanism == MechanismKind::Checkpointing) {
      provider_.cancel_request(vm.request_id);
    }
    vm.phase = VmRec::Phase::Closed;
    return;
  }

  JobRec& rec = jobs_[running];
  const double rate = compute_rate(rec.job, cloud_.types[vm.type]);
  const double recovered_ref =
      (params_.mechanism == MechanismKind::Checkpointing ||
       params_.mechanism == MechanismKind::Migration) && rec.snapshot
          ? rec.snapshot->progress_ref
          : 0.0;
  losses_.push_back(FailureLoss{sim_.now(), rec.job.id,
                                std::max(0.0, rec.progress_ref - recovered_ref) / rate,
                                suspend_time(cloud_.types[vm.type].memory_mb, params_.rates),
                                params_.mechanism});

  switch (params_.mechanism) {
    case MechanismKind::None:
    case MechanismKind::Duplication: {
      rec.progress_ref = 0.0;
      rec.snapshot.reset();
      rec.needs_restore = false;
      rec.phase = JobPhase::Unscheduled;
      rec.vm = -1;
      vm.running_job = -1;
      pending_alloc_.insert(running);
      vm.phase = VmRec::Phase::Closed;
      break;
    }
    case MechanismKind::Checkpointing: {
      rec.progress_ref = recovered_ref;
      rec.needs_restore = rec.snapshot.has_value() && recovered_ref > 0.0;
      rec.phase = JobPhase::WaitingRequest;
      vm.phase = VmRec::Phase::WaitingInBid;  // bound to the waiting request
      break;
    }
    case MechanismKind::Migration: {
      rec.progress_ref = recovered_ref;
      vm.running_job = -1;
      vm.phase = VmRec::Phase::Closed;
      rec.vm = -1;
      if (rec.snapshot && recovered_ref > 0.0) {
        rec.needs_restore = true;
        recover_migration(running);
      } else {
        rec.needs_restore = false;
        rec.phase = JobPhase::Unscheduled;
        pending_alloc_.insert(running);
      }
      break;
    }
  }
}

void Broker::recover_migration(int idx) {
  JobRec& rec = jobs_[idx];
  const SimTime now = sim_.now();
  const Snapshot& snap = *rec.snapshot;
  const double remaining_ref = static_cast<double>(rec.job.base_runtime_s) - rec.progress_ref;

  // Candidate markets, the snapshot's own datacenter first.
  std::vector<int> dc_order;
  dc_order.push_back(snap.stored_in_dc);
  for (std::size_t dc = 0; dc < cloud_.datacenters.size(); ++dc) {
    if (static_cast<int>(dc) != snap.stored_in_dc) dc_order.push_back(static_cast<int>(dc));
  }
  int best_dc = -1, best_type = -1;
  SimTime best_total = 0;
  MicroUsd best_cost = 0;
  for (int dc : dc_order) {
    for (int ty : cloud_.datacenters[dc].offered_types) {
      const SimTime resume = resume_time(snap.size_mb, dc == snap.stored_in_dc, params_.rates);
      const SimTime rem_wall = scaled_runtime(std::max(remaining_ref, 1.0), rec.job, cloud_.types[ty]);
      const MicroUsd cost =
          migration_cost(resume, rem_wall, provider_.current_price(dc, ty, now));
      if (best_dc < 0 || cost < best_cost) {
        best_dc = dc;
        best_type = ty;
        best_cost = cost;
        best_total = resume + rem_wall;
      }
    }
  }
  if (best_dc < 0) throw std::logic_error("no migration target available");

  PriceWindow scratch;
  const BidInputs inputs = market_inputs(best_dc, best_type, scratch);
  const BidDecision decision =
      bid_check(now, rec.job.deadline, best_total, urgency_params_, params_.strategy, inputs);
  if (decision.action == BidDecision::Action::Recheck) {
    if (rec.recheck.valid()) sim_.cancel(rec.recheck);
    rec.recheck = sim_.schedule(decision.recheck_at, EventKind::BidCheck,
                                [this, idx] { on_bid_check(idx); });
    rec.phase = JobPhase::WaitingRecheck;
    rec.migrating_recheck = true;
    return;
  }
  const int rid = provider_.submit_request(best_type, decision.bid, best_dc, false);
  if (provider_.request(rid).state != RequestState::Provisioning) {
    throw std::logic_error("migration request not provisioning despite bid above price");
  }
  const int vm_id = new_vm_for_request(rid, best_dc, best_type, idx);
  rec.phase = JobPhase::Assigned;
  rec.vm = vm_id;
  rec.migrating_recheck = false;
  pending_alloc_.erase(idx);
  if (log_enabled(LogLevel::Info)) {
    log_line(LogLevel::Info, "t=" + std::to_string(now) + " job " + std::to_string(rec.job.id) +
                                 " migrating to (" + cloud_.datacenters[best_dc].id + ", " +
                                 cloud_.types[best_type].name + ")");
  }
}

void Broker::client_terminate_vm(VmRec& vm) {
  detach_compute(vm);
  if (vm.instance_id >= 0 && provider_.instance(vm.instance_id).running()) {
    provider_.terminate_by_client(vm.instance_id);
  } else if (vm.phase == VmRec::Phase::Provisioning || vm.phase == VmRec::Phase::WaitingInBid) {
    provider_.cancel_request(vm.request_id);
  }
  vm.phase = VmRec::Phase::Closed;
  vm.instance_id = -1;
}

Broker::VmRec& Broker::vm_of_instance(int instance_id) {
  const Instance& inst = provider_.instance(instance_id);
  auto it = vm_by_request_.find(inst.request_id);
  if (it == vm_by_request_.end()) throw std::logic_error("instance for unknown request");
  return vms_[it->second];
}

void Broker::finish(SimTime horizon) {
  for (auto& vm : vms_) {
    if (vm.phase == VmRec::Phase::Closed) continue;
    client_terminate_vm(vm);
  }
  for (auto& rec : jobs_) {
    if (rec.is_replica || rec.outcome_recorded) continue;
    if (rec.phase == JobPhase::Cancelled || rec.phase == JobPhase::NotArrived) continue;
    if (rec.phase == JobPhase::Done) continue;  // outcome already recorded at completion
    rec.outcome_recorded = true;
    metrics_.record_unfinished(rec.job.deadline < horizon);
  }
  provider_.verify_all_closed();
}

}  // namespace spotsim
