#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "spotsim/money.hpp"
#include "spotsim/sim.hpp"

namespace spotsim {

struct InstanceType {
  std::string name;
  double ecus = 1.0;  // total compute units across all cores
  int cores = 1;
  int memory_mb = 0;
  MicroUsd on_demand_price = 0;  // per hour

  double ecus_per_core() const { return ecus / cores; }
};

struct Datacenter {
  std::string id;
  std::vector<int> offered_types;  // indices into CloudModel::types
};

struct CloudModel {
  std::vector<InstanceType> types;
  std::vector<Datacenter> datacenters;

  // Index of the named type, or -1.
  int type_index(std::string_view name) const;
  int datacenter_index(std::string_view id) const;
  bool offers(int dc, int type) const;

  // Five-type, four-datacenter default catalogue (all types offered
  // everywhere).
  static CloudModel default_catalogue();
};

struct PricePoint {
  SimTime at;
  MicroUsd price;
};

// Right-continuous step function: value_at(t) is the price set by the latest
// point with timestamp <= t, held until the next point (and past the last).
class PriceSeries {
 public:
  void add(SimTime at, MicroUsd price);  // strictly increasing timestamps
  MicroUsd value_at(SimTime t) const;    // throws std::out_of_range before the first point
  SimTime start() const;
  SimTime last_change() const;
  bool empty() const { return points_.empty(); }
  const std::vector<PricePoint>& points() const { return points_; }

 private:
  std::vector<PricePoint> points_;
};

struct MarketKey {
  int dc = 0;
  int type = 0;
  auto operator<=>(const MarketKey&) const = default;
};

// Price observations covering [start, end]: the first point may be stamped
// before `start` (it sets the price at the window opening).
struct PriceWindow {
  SimTime start = 0;
  SimTime end = 0;
  std::vector<PricePoint> points;

  MicroUsd minimum() const;             // lowest observed price
  MicroUsd time_weighted_mean() const;  // weighted by holding duration, rounded
  MicroUsd plain_mean() const;          // unweighted mean of observations, rounded
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what, int line = 0)
      : std::runtime_error(what), line(line) {}
  int line;
};

// One price series per (datacenter, type) market over a common time axis.
class TraceSet {
 public:
  void put(MarketKey key, PriceSeries series);
  bool has(MarketKey key) const;
  const PriceSeries& series(MarketKey key) const;  // throws if absent
  SimTime latest_point() const;                    // max last-change across markets
  const std::map<MarketKey, PriceSeries>& all() const { return markets_; }

 private:
  std::map<MarketKey, PriceSeries> markets_;
};

// Reads "timestamp,datacenter,instance_type,price" rows. Timestamps are
// integer seconds or ISO-8601; an optional header row is detected by a first
// field that parses as neither. Rows may arrive out of order (sorted on
// load); duplicate timestamps within one market are rejected. All timestamps
// are shifted so the earliest row lands at 0.
TraceSet load_price_traces(std::istream& in, const CloudModel& cloud);
TraceSet load_price_traces_file(const std::string& path, const CloudModel& cloud);

enum class InstanceEndReason { OutOfBid, ClientTerminated };

struct BillingRecord {
  int hour_index = 0;        // 0-based hour of the lease
  MicroUsd price = 0;        // spot price at that hour's start
  bool charged = true;       // provider-terminated partial hours are free
};

struct Instance {
  int id = -1;
  int request_id = -1;
  int dc = 0;
  int type = 0;
  MicroUsd bid = 0;
  SimTime lease_start = 0;
  std::optional<SimTime> lease_end;
  std::optional<InstanceEndReason> end_reason;
  std::vector<BillingRecord> billing;

  bool running() const { return !lease_end.has_value(); }
  MicroUsd bill_total() const;
  int charged_hours() const;
};

enum class RequestState { Waiting, Provisioning, Active, Closed };

struct SpotRequest {
  int id = -1;
  int dc = 0;
  int type = 0;
  MicroUsd bid = 0;
  bool persistent = false;
  RequestState state = RequestState::Closed;
  int instance_id = -1;  // most recent instance, if any
};

// Spot-market provider: replays a price trace, fulfils requests after a
// fixed provisioning lag when bid > price, terminates instances whose bid is
// <= the new price, and bills by the hour (spot price at each hour's start;
// the final partial hour is charged only on client-initiated termination).
class CloudProvider {
 public:
  struct Callbacks {
    std::function<void(int instance_id)> on_instance_running;
    std::function<void(int instance_id)> on_out_of_bid;
    std::function<void(int request_id)> on_request_rejected;  // non-persistent, out-of-bid at fulfilment
    std::function<void(int instance_id)> on_hour_boundary;    // fired while the instance still runs
    std::function<void(const Instance&)> on_billed;           // after the final bill is fixed
  };

  CloudProvider(Simulation& sim, const CloudModel& cloud, const TraceSet& traces,
                SimTime trace_offset, SimTime provisioning_lag);

  void set_callbacks(Callbacks cb) { cb_ = std::move(cb); }

  // Schedules replay of every price change that lands in (0, horizon].
  void start(SimTime horizon);

  // Submits a spot request; `dc` -1 picks the cheapest offering datacenter.
  // A request that is out-of-bid at submission waits if persistent and is
  // closed immediately otherwise. Returns the request id.
  int submit_request(int type, MicroUsd bid, int dc, bool persistent);

  // Cancels a request that has no running instance (Waiting/Provisioning).
  void cancel_request(int request_id);

  // Client-initiated termination; returns the final bill.
  MicroUsd terminate_by_client(int instance_id);

  MicroUsd current_price(int dc, int type) const { return current_price(dc, type, sim_.now()); }
  MicroUsd current_price(int dc, int type, SimTime t) const;
  // Observations over [t - window, t]; see PriceWindow.
  PriceWindow history_window(int dc, int type, SimTime t, SimTime window_seconds) const;
  // Cheapest datacenter offering `type` (ties to the lowest index); skips
  // `exclude_dc`; -1 if none qualifies.
  int cheapest_datacenter(int type, SimTime t, int exclude_dc = -1) const;

  const SpotRequest& request(int id) const { return requests_.at(id); }
  const Instance& instance(int id) const { return instances_.at(id); }
  const std::vector<Instance>& instances() const { return instances_; }

  MicroUsd total_billed() const { return total_billed_; }
  int out_of_bid_terminations() const { return out_of_bid_count_; }
  int running_instance_count() const;

  // Throws std::logic_error if any instance is still running or any request
  // is still open (call after the final horizon cleanup).
  void verify_all_closed() const;

  // Stand-alone hour-walk billing used by the provider itself.
  static std::vector<BillingRecord> make_billing(const PriceSeries& series, SimTime trace_offset,
                                                 SimTime lease_start, SimTime lease_end,
                                                 bool client_initiated);

 private:
  void apply_price_change(MarketKey key, MicroUsd new_price);
  void handle_provision_done(int request_id);
  void handle_hour_boundary(int instance_id);
  void close_instance(Instance& inst, SimTime end, InstanceEndReason reason);
  void begin_provisioning(SpotRequest& req);

  Simulation& sim_;
  const CloudModel& cloud_;
  const TraceSet& traces_;
  SimTime trace_offset_;
  SimTime lag_;
  Callbacks cb_;

  std::vector<SpotRequest> requests_;
  std::vector<Instance> instances_;
  std::map<MarketKey, std::vector<int>> running_by_market_;  // instance ids
  MicroUsd total_billed_ = 0;
  int out_of_bid_count_ = 0;
};

}  // namespace spotsim
