#include "spotsim/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace spotsim {

TraceSet generate_price_traces(const CloudModel& cloud, const SyntheticPriceParams& params, Rng rng) {
  TraceSet out;
  for (std::size_t dc = 0; dc < cloud.datacenters.size(); ++dc) {
    for (int ty : cloud.datacenters[dc].offered_types) {
      const double od = usd_from_micro(cloud.types[ty].on_demand_price);
      const double base_log = std::log(params.base_ratio * od);
      const MicroUsd floor_price =
          std::max<MicroUsd>(kBidGranularity, micro_from_usd(params.floor_ratio * od));
      const MicroUsd cap_price = micro_from_usd(params.cap_ratio * od);

      PriceSeries series;
      double x = base_log;
      series.add(0, std::clamp(micro_from_usd(std::exp(x)), floor_price, cap_price));
      SimTime t = 0;
      while (true) {
        const SimTime gap = std::max<SimTime>(
            1, static_cast<SimTime>(std::llround(rng.exponential(params.mean_change_interval_s))));
        t += gap;
        if (t > params.duration) break;
        x += params.reversion * (base_log - x) + rng.normal(0.0, params.volatility);
        series.add(t, std::clamp(micro_from_usd(std::exp(x)), floor_price, cap_price));
      }
      out.put({static_cast<int>(dc), ty}, std::move(series));
    }
  }
  return out;
}

std::string price_traces_csv(const CloudModel& cloud, const TraceSet& traces) {
  struct Row {
    SimTime at;
    int dc;
    int type;
    MicroUsd price;
  };
  std::vector<Row> rows;
  for (const auto& [key, series] : traces.all()) {
    for (const auto& p : series.points()) rows.push_back({p.at, key.dc, key.type, p.price});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.at != b.at) return a.at < b.at;
    if (a.dc != b.dc) return a.dc < b.dc;
    return a.type < b.type;
  });
  std::ostringstream out;
  out << "timestamp,datacenter,instance_type,price\n";
  for (const auto& r : rows) {
    out << r.at << ',' << cloud.datacenters[r.dc].id << ',' << cloud.types[r.type].name << ','
        << format_usd(r.price) << '\n';
  }
  return out.str();
}

}  // namespace spotsim
