#include "spotsim/sim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace spotsim {

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::PriceChange: return "price-change";
    case EventKind::JobArrival: return "job-arrival";
    case EventKind::SchedulePass: return "schedule-pass";
    case EventKind::HourBoundary: return "hour-boundary";
    case EventKind::BidCheck: return "bid-check";
    case EventKind::SnapshotDone: return "snapshot-done";
    case EventKind::ProvisionDone: return "provision-done";
    case EventKind::JobCompletion: return "job-completion";
  }
  return "unknown";
}

Simulation::Handle Simulation::schedule(SimTime fire_time, EventKind kind, Handler handler) {
  if (fire_time < now_) {
    throw std::invalid_argument("cannot schedule event at " + std::to_string(fire_time) +
                                " before current time " + std::to_string(now_));
  }
  const std::uint64_t id = next_id_++;
  queue_.push(Entry{fire_time, id, kind});
  handlers_.emplace(id, std::move(handler));
  return Handle{id};
}

bool Simulation::cancel(Handle handle) {
  if (!handle.valid()) return false;
  return handlers_.erase(handle.id) > 0;
}

std::size_t Simulation::run_until(SimTime end) {
  std::size_t count = 0;
  while (!queue_.empty() && queue_.top().fire <= end) {
    const Entry entry = queue_.top();
    queue_.pop();
    auto it = handlers_.find(entry.id);
    if (it == handlers_.end()) continue;  // cancelled
    Handler handler = std::move(it->second);
    handlers_.erase(it);
    now_ = entry.fire;
    handler();
    ++count;
  }
  if (end > now_) now_ = end;
  dispatched_ += count;
  return count;
}

double Rng::u01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * u01();
}

double Rng::exponential(double mean) {
  // u01 < 1, so log1p(-u) is finite.
  return -mean * std::log1p(-u01());
}

double Rng::normal(double mean, double stddev) {
  if (have_spare_) {
    have_spare_ = false;
    return mean + stddev * spare_;
  }
  const double u1 = 1.0 - u01();  // (0, 1]
  const double u2 = u01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const double span = static_cast<double>(hi - lo + 1);
  auto offset = static_cast<std::int64_t>(u01() * span);
  if (offset > hi - lo) offset = hi - lo;
  return lo + offset;
}

std::size_t Rng::pick_weighted(const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (weights.empty() || total <= 0.0) throw std::invalid_argument("pick_weighted: no mass");
  double x = u01() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    x -= weights[i];
    if (x < 0.0) return i;
  }
  return weights.size() - 1;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng& RandomStream::stream(std::string_view name) {
  auto it = streams_.find(name);
  if (it == streams_.end()) {
    const std::uint64_t sub_seed = splitmix64(seed_ ^ fnv1a64(name));
    it = streams_.emplace(std::string(name), Rng(sub_seed)).first;
  }
  return it->second;
}

}  // namespace spotsim
