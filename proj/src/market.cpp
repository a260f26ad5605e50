#include "spotsim/market.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

#include "spotsim/log.hpp"

namespace spotsim {

int CloudModel::type_index(std::string_view name) const {
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (types[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int CloudModel::datacenter_index(std::string_view id) const {
  for (std::size_t i = 0; i < datacenters.size(); ++i) {
    if (datacenters[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

bool CloudModel::offers(int dc, int type) const {
  if (dc < 0 || dc >= static_cast<int>(datacenters.size())) return false;
  const auto& offered = datacenters[dc].offered_types;
  return std::find(offered.begin(), offered.end(), type) != offered.end();
}

CloudModel CloudModel::default_catalogue() {
  CloudModel m;
  m.types = {
      {"M1.SMALL", 1.0, 1, 1740, 85'000},
      {"M1.LARGE", 5.0, 2, 7680, 340'000},
      {"M1.XLARGE", 8.0, 4, 15360, 680'000},
      {"C1.MEDIUM", 5.0, 2, 1740, 170'000},
      {"C1.XLARGE", 20.0, 8, 7168, 680'000},
  };
  std::vector<int> all_types = {0, 1, 2, 3, 4};
  m.datacenters = {
      {"dc1", all_types},
      {"dc2", all_types},
      {"dc3", all_types},
      {"dc4", all_types},
  };
  return m;
}

void PriceSeries::add(SimTime at, MicroUsd price) {
  if (!points_.empty() && at <= points_.back().at) {
    throw std::invalid_argument("price points must have strictly increasing timestamps");
  }
  if (price <= 0) throw std::invalid_argument("price must be positive");
  points_.push_back({at, price});
}

MicroUsd PriceSeries::value_at(SimTime t) const {
  if (points_.empty() || t < points_.front().at) {
    throw std::out_of_range("price queried before series start");
  }
  // Last point with at <= t.
  auto it = std::upper_bound(points_.begin(), points_.end(), t,
                             [](SimTime v, const PricePoint& p) { return v < p.at; });
  return std::prev(it)->price;
}

SimTime PriceSeries::start() const {
  if (points_.empty()) throw std::out_of_range("empty price series");
  return points_.front().at;
}

SimTime PriceSeries::last_change() const {
  if (points_.empty()) throw std::out_of_range("empty price series");
  return points_.back().at;
}

MicroUsd PriceWindow::minimum() const {
  if (points.empty()) throw std::logic_error("empty price window");
  MicroUsd best = points.front().price;
  for (const auto& p : points) best = std::min(best, p.price);
  return best;
}

MicroUsd PriceWindow::time_weighted_mean() const {
  if (points.empty()) throw std::logic_error("empty price window");
  if (end <= start) return points.back().price;
  long double acc = 0.0L;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const SimTime seg_start = std::max(points[i].at, start);
    const SimTime seg_end = (i + 1 < points.size()) ? std::min(points[i + 1].at, end) : end;
    if (seg_end > seg_start) acc += static_cast<long double>(points[i].price) * (seg_end - seg_start);
  }
  return static_cast<MicroUsd>(std::llroundl(acc / (end - start)));
}

MicroUsd PriceWindow::plain_mean() const {
  if (points.empty()) throw std::logic_error("empty price window");
  long double acc = 0.0L;
  for (const auto& p : points) acc += static_cast<long double>(p.price);
  return static_cast<MicroUsd>(std::llroundl(acc / points.size()));
}

void TraceSet::put(MarketKey key, PriceSeries series) { markets_[key] = std::move(series); }

bool TraceSet::has(MarketKey key) const { return markets_.count(key) > 0; }

const PriceSeries& TraceSet::series(MarketKey key) const {
  auto it = markets_.find(key);
  if (it == markets_.end()) throw std::out_of_range("no price series for market");
  return it->second;
}

SimTime TraceSet::latest_point() const {
  SimTime latest = 0;
  for (const auto& [key, series] : markets_) {
    if (!series.empty()) latest = std::max(latest, series.last_change());
  }
  return latest;
}

namespace {

bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  return true;
}

// Accepts integer seconds, "YYYY-MM-DDTHH:MM:SS[Z]" or "YYYY-MM-DD HH:MM:SS".
bool parse_timestamp(std::string_view s, SimTime& out) {
  if (all_digits(s)) {
    out = 0;
    for (char c : s) {
      if (out > (std::numeric_limits<SimTime>::max() - 9) / 10) return false;
      out = out * 10 + (c - '0');
    }
    return true;
  }
  std::tm tm = {};
  int y, mo, d, h, mi, se;
  char sep;
  std::string str(s);
  if (std::sscanf(str.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &se) == 7 &&
      (sep == 'T' || sep == ' ')) {
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = se;
    const std::time_t t = timegm(&tm);
    if (t == -1) return false;
    out = static_cast<SimTime>(t);
    return true;
  }
  return false;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

TraceSet load_price_traces(std::istream& in, const CloudModel& cloud) {
  struct Row {
    SimTime at;
    MicroUsd price;
  };
  std::map<MarketKey, std::vector<Row>> rows;
  std::string line;
  int line_no = 0;
  bool seen_data = false;
  SimTime min_at = std::numeric_limits<SimTime>::max();

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    auto fields = split_csv(sv);
    if (fields.size() != 4) {
      throw ParseError("expected 4 comma-separated fields, got " + std::to_string(fields.size()) +
                           " at line " + std::to_string(line_no),
                       line_no);
    }
    SimTime at;
    if (!parse_timestamp(trim(fields[0]), at)) {
      if (!seen_data) continue;  // header row
      throw ParseError("bad timestamp at line " + std::to_string(line_no), line_no);
    }
    const int dc = cloud.datacenter_index(trim(fields[1]));
    if (dc < 0) {
      throw ParseError("unknown datacenter '" + std::string(trim(fields[1])) + "' at line " +
                           std::to_string(line_no),
                       line_no);
    }
    const int ty = cloud.type_index(trim(fields[2]));
    if (ty < 0) {
      throw ParseError("unknown instance type '" + std::string(trim(fields[2])) + "' at line " +
                           std::to_string(line_no),
                       line_no);
    }
    MicroUsd price;
    if (!parse_usd(trim(fields[3]), price) || price <= 0) {
      throw ParseError("bad price at line " + std::to_string(line_no), line_no);
    }
    seen_data = true;
    min_at = std::min(min_at, at);
    rows[{dc, ty}].push_back({at, price});
  }
  if (!seen_data) throw ParseError("price trace contains no data rows");

  TraceSet out;
  for (auto& [key, market_rows] : rows) {
    std::stable_sort(market_rows.begin(), market_rows.end(),
                     [](const Row& a, const Row& b) { return a.at < b.at; });
    PriceSeries series;
    for (std::size_t i = 0; i < market_rows.size(); ++i) {
      if (i > 0 && market_rows[i].at == market_rows[i - 1].at) {
        throw ParseError("duplicate timestamp " + std::to_string(market_rows[i].at) +
                         " in market (" + cloud.datacenters[key.dc].id + ", " +
                         cloud.types[key.type].name + ")");
      }
      series.add(market_rows[i].at - min_at, market_rows[i].price);
    }
    out.put(key, std::move(series));
  }
  return out;
}

TraceSet load_price_traces_file(const std::string& path, const CloudModel& cloud) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open price trace: " + path);
  return load_price_traces(in, cloud);
}

MicroUsd Instance::bill_total() const {
  MicroUsd total = 0;
  for (const auto& rec : billing) {
    if (rec.charged) total += rec.price;
  }
  return total;
}

int Instance::charged_hours() const {
  int n = 0;
  for (const auto& rec : billing) {
    if (rec.charged) ++n;
  }
  return n;
}

CloudProvider::CloudProvider(Simulation& sim, const CloudModel& cloud, const TraceSet& traces,
                             SimTime trace_offset, SimTime provisioning_lag)
    : sim_(sim), cloud_(cloud), traces_(traces), trace_offset_(trace_offset), lag_(provisioning_lag) {
  for (std::size_t dc = 0; dc < cloud_.datacenters.size(); ++dc) {
    for (int ty : cloud_.datacenters[dc].offered_types) {
      const MarketKey key{static_cast<int>(dc), ty};
      if (!traces_.has(key) || traces_.series(key).empty()) {
        throw std::runtime_error("no price series for offered market (" + cloud_.datacenters[dc].id +
                                 ", " + cloud_.types[ty].name + ")");
      }
      if (traces_.series(key).start() > trace_offset_) {
        throw std::runtime_error("trace offset precedes series start for market (" +
                                 cloud_.datacenters[dc].id + ", " + cloud_.types[ty].name + ")");
      }
      running_by_market_[key] = {};
    }
  }
}

void CloudProvider::start(SimTime horizon) {
  for (const auto& [key, series] : traces_.all()) {
    for (const auto& point : series.points()) {
      const SimTime fires_at = point.at - trace_offset_;
      if (fires_at <= 0 || fires_at > horizon) continue;
      const MarketKey k = key;
      const MicroUsd price = point.price;
      sim_.schedule(fires_at, EventKind::PriceChange,
                    [this, k, price] { apply_price_change(k, price); });
    }
  }
}

MicroUsd CloudProvider::current_price(int dc, int type, SimTime t) const {
  return traces_.series({dc, type}).value_at(trace_offset_ + t);
}

PriceWindow CloudProvider::history_window(int dc, int type, SimTime t, SimTime window_seconds) const {
  const PriceSeries& series = traces_.series({dc, type});
  const SimTime trace_end = trace_offset_ + t;
  const SimTime trace_start = std::max(series.start(), trace_end - window_seconds);
  PriceWindow w;
  w.start = trace_start - trace_offset_;
  w.end = t;
  const auto& pts = series.points();
  // Last point at or before trace_start opens the window.
  auto it = std::upper_bound(pts.begin(), pts.end(), trace_start,
                             [](SimTime v, const PricePoint& p) { return v < p.at; });
  if (it != pts.begin()) --it;
  for (; it != pts.end() && it->at <= trace_end; ++it) {
    w.points.push_back({it->at - trace_offset_, it->price});
  }
  return w;
}

int CloudProvider::cheapest_datacenter(int type, SimTime t, int exclude_dc) const {
  int best = -1;
  MicroUsd best_price = 0;
  for (std::size_t dc = 0; dc < cloud_.datacenters.size(); ++dc) {
    const int dci = static_cast<int>(dc);
    if (dci == exclude_dc || !cloud_.offers(dci, type)) continue;
    const MicroUsd p = current_price(dci, type, t);
    if (best < 0 || p < best_price) {
      best = dci;
      best_price = p;
    }
  }
  return best;
}

int CloudProvider::submit_request(int type, MicroUsd bid, int dc, bool persistent) {
  if (type < 0 || type >= static_cast<int>(cloud_.types.size())) {
    throw std::invalid_argument("unknown instance type index " + std::to_string(type));
  }
  if (bid < kBidGranularity) {
    throw std::invalid_argument("bid below minimum granularity");
  }
  if (dc >= 0 && !cloud_.offers(dc, type)) {
    throw std::invalid_argument("datacenter does not offer requested type");
  }
  if (dc < 0) {
    dc = cheapest_datacenter(type, sim_.now());
    if (dc < 0) throw std::invalid_argument("no datacenter offers requested type");
  }

  const int id = static_cast<int>(requests_.size());
  requests_.push_back(SpotRequest{id, dc, type, bid, persistent, RequestState::Waiting, -1});
  SpotRequest& req = requests_.back();

  if (bid > current_price(dc, type, sim_.now())) {
    begin_provisioning(req);
  } else if (!persistent) {
    req.state = RequestState::Closed;  // rejected immediately
  }
  if (log_enabled(LogLevel::Debug)) {
    log_line(LogLevel::Debug, "t=" + std::to_string(sim_.now()) + " request " + std::to_string(id) +
                                  " " + cloud_.types[type].name + "@" + cloud_.datacenters[dc].id +
                                  " bid=" + format_usd(bid) + " state=" +
                                  std::to_string(static_cast<int>(req.state)));
  }
  return id;
}

void CloudProvider::begin_provisioning(SpotRequest& req) {
  req.state = RequestState::Provisioning;
  const int id = req.id;
  sim_.schedule(sim_.now() + lag_, EventKind::ProvisionDone, [this, id] { handle_provision_done(id); });
}

void CloudProvider::handle_provision_done(int request_id) {
  SpotRequest& req = requests_[request_id];
  if (req.state != RequestState::Provisioning) return;  // cancelled meanwhile
  const MicroUsd p = current_price(req.dc, req.type, sim_.now());
  if (req.bid <= p) {
    // Price rose during the provisioning lag.
    if (req.persistent) {
      req.state = RequestState::Waiting;
    } else {
      req.state = RequestState::Closed;
      if (cb_.on_request_rejected) cb_.on_request_rejected(request_id);
    }
    return;
  }
  const int iid = static_cast<int>(instances_.size());
  instances_.push_back(Instance{iid, request_id, req.dc, req.type, req.bid, sim_.now(), {}, {}, {}});
  req.state = RequestState::Active;
  req.instance_id = iid;
  running_by_market_[{req.dc, req.type}].push_back(iid);
  sim_.schedule(sim_.now() + kSecondsPerHour, EventKind::HourBoundary,
                [this, iid] { handle_hour_boundary(iid); });
  if (log_enabled(LogLevel::Info)) {
    log_line(LogLevel::Info, "t=" + std::to_string(sim_.now()) + " instance " + std::to_string(iid) +
                                 " running (" + cloud_.types[req.type].name + "@" +
                                 cloud_.datacenters[req.dc].id + " bid=" + format_usd(req.bid) + ")");
  }
  if (cb_.on_instance_running) cb_.on_instance_running(iid);
}

void CloudProvider::handle_hour_boundary(int instance_id) {
  Instance& inst = instances_[instance_id];
  if (!inst.running()) return;
  if (cb_.on_hour_boundary) cb_.on_hour_boundary(instance_id);
  if (instances_[instance_id].running()) {
    sim_.schedule(sim_.now() + kSecondsPerHour, EventKind::HourBoundary,
                  [this, instance_id] { handle_hour_boundary(instance_id); });
  }
}

void CloudProvider::apply_price_change(MarketKey key, MicroUsd new_price) {
  // Terminate running instances that are now out of bid (bid <= price).
  auto& running = running_by_market_[key];
  std::vector<int> to_terminate;
  for (int iid : running) {
    if (instances_[iid].bid <= new_price) to_terminate.push_back(iid);
  }
  for (int iid : to_terminate) {
    Instance& inst = instances_[iid];
    ++out_of_bid_count_;
    if (log_enabled(LogLevel::Info)) {
      log_line(LogLevel::Info, "t=" + std::to_string(sim_.now()) + " instance " + std::to_string(iid) +
                                   " out of bid (bid=" + format_usd(inst.bid) +
                                   " price=" + format_usd(new_price) + ")");
    }
    close_instance(inst, sim_.now(), InstanceEndReason::OutOfBid);
    SpotRequest& req = requests_[inst.request_id];
    if (req.persistent) {
      req.state = RequestState::Waiting;
    } else {
      req.state = RequestState::Closed;
    }
    if (cb_.on_out_of_bid) cb_.on_out_of_bid(iid);
  }

  // Fulfil waiting persistent requests that are now in bid.
  for (auto& req : requests_) {
    if (req.state == RequestState::Waiting && req.dc == key.dc && req.type == key.type &&
        req.bid > new_price) {
      begin_provisioning(req);
    }
  }

  // No instance may survive a price at or above its bid.
  for (int iid : running_by_market_[key]) {
    if (instances_[iid].running() && instances_[iid].bid <= new_price) {
      throw std::logic_error("instance survived an out-of-bid price change");
    }
  }
}

void CloudProvider::close_instance(Instance& inst, SimTime end, InstanceEndReason reason) {
  inst.lease_end = end;
  inst.end_reason = reason;
  inst.billing = make_billing(traces_.series({inst.dc, inst.type}), trace_offset_, inst.lease_start,
                              end, reason == InstanceEndReason::ClientTerminated);
  total_billed_ += inst.bill_total();
  auto& running = running_by_market_[{inst.dc, inst.type}];
  running.erase(std::remove(running.begin(), running.end(), inst.id), running.end());
  if (cb_.on_billed) cb_.on_billed(inst);
}

MicroUsd CloudProvider::terminate_by_client(int instance_id) {
  Instance& inst = instances_.at(instance_id);
  if (!inst.running()) throw std::logic_error("terminate_by_client: instance is not running");
  close_instance(inst, sim_.now(), InstanceEndReason::ClientTerminated);
  requests_[inst.request_id].state = RequestState::Closed;
  if (log_enabled(LogLevel::Info)) {
    log_line(LogLevel::Info, "t=" + std::to_string(sim_.now()) + " instance " +
                                 std::to_string(instance_id) + " terminated by client, bill=" +
                                 format_usd(inst.bill_total()));
  }
  return inst.bill_total();
}

void CloudProvider::cancel_request(int request_id) {
  SpotRequest& req = requests_.at(request_id);
  if (req.state == RequestState::Active) {
    throw std::logic_error("cancel_request: request has a running instance");
  }
  req.state = RequestState::Closed;
}

int CloudProvider::running_instance_count() const {
  int n = 0;
  for (const auto& inst : instances_) {
    if (inst.running()) ++n;
  }
  return n;
}

void CloudProvider::verify_all_closed() const {
  for (const auto& inst : instances_) {
    if (inst.running()) throw std::logic_error("instance still running at teardown");
  }
  for (const auto& req : requests_) {
    if (req.state != RequestState::Closed) throw std::logic_error("request still open at teardown");
  }
}

std::vector<BillingRecord> CloudProvider::make_billing(const PriceSeries& series,
                                                       SimTime trace_offset, SimTime lease_start,
                                                       SimTime lease_end, bool client_initiated) {
  std::vector<BillingRecord> records;
  for (int h = 0; lease_start + static_cast<SimTime>(h) * kSecondsPerHour < lease_end; ++h) {
    const SimTime hour_start = lease_start + static_cast<SimTime>(h) * kSecondsPerHour;
    records.push_back({h, series.value_at(trace_offset + hour_start), true});
  }
  const bool ends_on_boundary = (lease_end - lease_start) % kSecondsPerHour == 0;
  if (!client_initiated && !ends_on_boundary && !records.empty()) {
    records.back().charged = false;
  }
  return records;
}

}  // namespace spotsim
