#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <queue>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace spotsim {

// Simulated time: whole seconds since the simulation epoch.
using SimTime = std::int64_t;

constexpr SimTime kSecondsPerHour = 3600;
constexpr SimTime kSecondsPerDay = 24 * kSecondsPerHour;
constexpr SimTime kSecondsPerWeek = 7 * kSecondsPerDay;

enum class EventKind {
  PriceChange,
  JobArrival,
  SchedulePass,
  HourBoundary,
  BidCheck,
  SnapshotDone,
  ProvisionDone,
  JobCompletion,
};

const char* to_string(EventKind kind);

// Deterministic discrete-event engine. Events that fire at the same instant
// are dispatched in the order they were scheduled.
class Simulation {
 public:
  struct Handle {
    std::uint64_t id = 0;
    bool valid() const { return id != 0; }
  };
  using Handler = std::function<void()>;

  SimTime now() const { return now_; }

  // Schedules `handler` to run at `fire_time` (>= now). Throws
  // std::invalid_argument for times in the past.
  Handle schedule(SimTime fire_time, EventKind kind, Handler handler);

  // Removes a pending event. Returns false if it already fired or was
  // cancelled (or the handle is empty).
  bool cancel(Handle handle);

  // Dispatches every pending event with fire time <= end, in (time,
  // scheduling order). Events scheduled by handlers within the bound are
  // dispatched in the same call. Afterwards the clock reads `end` (or later
  // if it already was). Returns the number of events dispatched.
  std::size_t run_until(SimTime end);

  std::size_t total_dispatched() const { return dispatched_; }
  std::size_t pending() const { return handlers_.size(); }

 private:
  struct Entry {
    SimTime fire;
    std::uint64_t id;
    EventKind kind;
  };
  struct LaterFirst {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.fire != b.fire) return a.fire > b.fire;
      return a.id > b.id;
    }
  };

  std::priority_queue<Entry, std::vector<Entry>, LaterFirst> queue_;
  std::unordered_map<std::uint64_t, Handler> handlers_;
  SimTime now_ = 0;
  std::uint64_t next_id_ = 1;
  std::size_t dispatched_ = 0;
};

// Deterministic samplers over mt19937_64. The transforms are written out
// here (rather than using std::*_distribution) so that draw sequences do not
// depend on the standard-library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1), 53-bit resolution.
  double u01();
  double uniform(double lo, double hi);
  // Exponential with the given mean (inverse transform).
  double exponential(double mean);
  // Normal via Box-Muller (pairs cached).
  double normal(double mean, double stddev);
  // Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Index draw proportional to non-negative weights.
  std::size_t pick_weighted(const std::vector<double>& weights);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view text);
std::uint64_t splitmix64(std::uint64_t x);

// Named sub-streams derived from one seed. Each concern (moldability,
// estimates, deadlines, ...) draws from its own engine, so adding a consumer
// does not perturb the sequences seen by others.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Returns the sub-stream for `name`, creating it on first use with a seed
  // mixed from (seed, hash(name)).
  Rng& stream(std::string_view name);

 private:
  std::uint64_t seed_;
  std::map<std::string, Rng, std::less<>> streams_;
};

}  // namespace spotsim
