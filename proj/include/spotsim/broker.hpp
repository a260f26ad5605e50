#pragma once

#include <array>
#include <deque>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "spotsim/fault.hpp"
#include "spotsim/market.hpp"
#include "spotsim/metrics.hpp"
#include "spotsim/sim.hpp"
#include "spotsim/workload.hpp"

namespace spotsim {

enum class BiddingStrategyKind { Minimum, Mean, OnDemand, High, Current };

const char* to_string(BiddingStrategyKind kind);
bool parse_strategy(std::string_view name, BiddingStrategyKind& out);

// Constant bid of the High strategy (well above any realistic spot price).
constexpr MicroUsd kHighBid = 100 * kMicroPerUsd;

struct UrgencyParams {
  double alpha = 2.0;                // runtime-estimate safety factor
  SimTime provisioning_lag_s = 300;  // expected request-to-running delay
};

// Seconds a job can still afford to wait: max(0, D - now - (alpha*e + lag)).
SimTime urgency(SimTime deadline, SimTime now, const UrgencyParams& params,
                SimTime estimated_runtime_s);

struct BidInputs {
  const PriceWindow* history = nullptr;  // needed by Minimum and Mean
  MicroUsd current = 0;
  MicroUsd on_demand = 0;
  bool mean_time_weighted = true;
};

// Bid value of a strategy over the given market observations.
MicroUsd compute_bid(BiddingStrategyKind strategy, const BidInputs& inputs);

struct BidDecision {
  enum class Action { Provision, Recheck } action;
  MicroUsd bid = 0;        // when Provision
  SimTime recheck_at = 0;  // when Recheck
};

// Urgency-gated bid check: when the job cannot wait, provision now (lifting
// bids at or below the current price to price + granularity); otherwise
// schedule a re-check exactly when the waiting budget runs out.
BidDecision bid_check(SimTime now, SimTime deadline, SimTime estimated_runtime_s,
                      const UrgencyParams& params, BiddingStrategyKind strategy,
                      const BidInputs& inputs);

// Picks the instance type for a job from its estimated runtime on each type:
// among types still needing more than an hour, the most parallel one (cores,
// then ECUs, then name); if every type finishes within the hour, the least
// parallel one.
int preferred_type(const std::vector<SimTime>& est_runtime_per_type,
                   const std::vector<InstanceType>& types);

// Per-user runtime estimator: mean of the last two observed runtimes
// (reference seconds), falling back to the job's own estimate.
class EstimatorState {
 public:
  void record_completion(int user_id, SimTime actual_reference_runtime_s);
  SimTime reference_estimate(int user_id, SimTime fallback_s) const;

 private:
  struct History {
    std::array<SimTime, 2> runs{};
    int count = 0;
  };
  std::unordered_map<int, History> users_;
};

struct BrokerParams {
  BiddingStrategyKind strategy = BiddingStrategyKind::OnDemand;
  MechanismKind mechanism = MechanismKind::None;
  double alpha = 2.0;
  SimTime schedule_interval_s = 60;
  SimTime history_window_s = kSecondsPerWeek;
  SimTime provisioning_lag_s = 300;
  TransferRates rates;
  bool mean_time_weighted = true;
  SimTime duplication_threshold_s = kSecondsPerHour;
};

enum class JobPhase {
  NotArrived,
  Unscheduled,     // waiting for a scheduling decision
  WaitingRecheck,  // bid check deferred until urgency runs out
  Assigned,        // queued on a VM (possibly still provisioning)
  Running,         // on a VM (computing or in snapshot/restore I/O)
  WaitingRequest,  // bound to an out-of-bid persistent request
  Done,
  Cancelled,       // duplication sibling superseded
};

// Work lost to one out-of-bid termination (audit trail for recovery bounds).
struct FailureLoss {
  SimTime at = 0;
  long job_id = 0;
  double lost_wall_s = 0.0;  // compute seconds rolled back on the failed VM
  SimTime suspend_s = 0;     // snapshot-write overhead of that VM's type
  MechanismKind mechanism = MechanismKind::None;
};

// Deadline-driven provisioning broker. Jobs arrive over time; every
// scheduling interval the broker places what it can on existing capacity and
// otherwise runs the urgency-gated bid check; fault handling follows the
// configured mechanism.
class Broker {
 public:
  struct JobRec {
    Job job;
    int idx = -1;
    JobPhase phase = JobPhase::NotArrived;
    double progress_ref = 0.0;
    int vm = -1;
    std::optional<Snapshot> snapshot;   // latest durable state
    std::optional<Snapshot> inflight;   // being written, not yet durable
    bool needs_restore = false;
    Simulation::Handle recheck{};
    bool migrating_recheck = false;
    int sibling = -1;
    bool is_replica = false;
    bool replica_made = false;
    bool outcome_recorded = false;
    SimTime finished_at = -1;
  };

  struct VmRec {
    enum class Phase { Provisioning, Running, WaitingInBid, Closed };
    int id = -1;
    int request_id = -1;
    int instance_id = -1;
    int dc = 0;
    int type = 0;
    Phase phase = Phase::Provisioning;
    int running_job = -1;
    std::deque<int> queue;
    bool paused = false;
    bool writing_snapshot = false;
    SimTime pause_end = -1;
    SimTime stint_start = -1;
    Simulation::Handle completion{};
    Simulation::Handle io_done{};
    SimTime submitted_at = 0;
  };

  Broker(Simulation& sim, CloudProvider& provider, const CloudModel& cloud,
         MetricsCollector& metrics, BrokerParams params);

  // Registers jobs (arrival events) and the recurring scheduling pass.
  void run_workload(const std::vector<Job>& jobs, SimTime horizon);

  // Terminates remaining capacity and books unfinished jobs. Call once after
  // the simulation reaches the horizon.
  void finish(SimTime horizon);

  const std::vector<JobRec>& jobs() const { return jobs_; }
  const std::vector<VmRec>& vms() const { return vms_; }
  const std::vector<FailureLoss>& failure_losses() const { return losses_; }
  const EstimatorState& estimator() const { return estimator_; }
  int replicas_created() const { return replicas_created_; }

 private:
  // --- provider callbacks
  void on_instance_running(int instance_id);
  void on_out_of_bid(int instance_id);
  void on_request_rejected(int request_id);
  void on_hour_boundary(int instance_id);

  // --- event handlers
  void on_arrival(int idx);
  void on_pass();
  void on_bid_check(int idx);
  void on_io_done(int vm_id);
  void on_completion(int vm_id);

  // --- policy steps
  void run_allocation(int idx);
  bool try_existing_capacity(int idx);     // steps 2-3
  void run_new_lease_check(int idx);       // step 4
  void recover_migration(int idx);
  void maybe_duplicate(int idx, std::vector<int>& created);

  // --- helpers
  SimTime ref_estimate(const JobRec& rec) const;
  SimTime est_on(const JobRec& rec, int type) const;
  std::optional<MarketKey> forbidden_market(const JobRec& rec) const;
  std::optional<MarketKey> occupied_market(const JobRec& rec) const;
  SimTime expected_idle_at(const VmRec& vm) const;
  void start_job_on(VmRec& vm, int idx);
  void begin_compute(VmRec& vm);
  void accrue_progress(VmRec& vm);
  void detach_compute(VmRec& vm);
  void client_terminate_vm(VmRec& vm);
  void cancel_sibling(int idx);
  void record_outcome_completed(JobRec& rec, SimTime at);
  VmRec& vm_of_instance(int instance_id);
  int new_vm_for_request(int request_id, int dc, int type, int first_job);
  BidInputs market_inputs(int dc, int type, PriceWindow& scratch) const;

  Simulation& sim_;
  CloudProvider& provider_;
  const CloudModel& cloud_;
  MetricsCollector& metrics_;
  BrokerParams params_;
  UrgencyParams urgency_params_;

  std::vector<JobRec> jobs_;
  std::vector<VmRec> vms_;
  std::unordered_map<int, int> vm_by_request_;
  std::set<int> pending_alloc_;  // Unscheduled or WaitingRecheck job indices
  EstimatorState estimator_;
  std::vector<FailureLoss> losses_;
  SimTime horizon_ = 0;
  int replicas_created_ = 0;
};

}  // namespace spotsim
