#include "odflow/synth.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "odflow/kernels.hpp"

namespace odflow::synth {

namespace {

// splitmix64 finalizer
uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based stream keyed by a field tuple. Streams with distinct keys
// are independent, so generation can be parallelized over (day, station)
// without changing the output.
class KeyedRng {
 public:
  KeyedRng(std::initializer_list<uint64_t> fields) {
    state_ = 0x5eedBA5Eu;
    for (uint64_t f : fields) state_ = mix64(state_ ^ f);
  }
  uint64_t next() { return mix64(state_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // (0,1] variant, safe inside log()
  double uniform_pos() { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }
  double gaussian() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }
  // Poisson by inversion for small rates, normal approximation for large.
  int64_t poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda < 60.0) {
      const double u = uniform();
      double p = std::exp(-lambda);
      double cdf = p;
      int64_t k = 0;
      while (u > cdf && k < 10000) {
        ++k;
        p *= lambda / static_cast<double>(k);
        cdf += p;
      }
      return k;
    }
    const double v = lambda + std::sqrt(lambda) * gaussian();
    return v > 0.0 ? static_cast<int64_t>(std::llround(v)) : 0;
  }

 private:
  uint64_t state_;
  uint64_t counter_ = 0;
};

int fn_index(StationFn f) { return static_cast<int>(f); }

double gaussian_bump(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z);
}

std::vector<double> normalized_to_mean_one(std::vector<double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  const double scale = s > 0.0 ? static_cast<double>(w.size()) / s : 1.0;
  for (double& v : w) v *= scale;
  return w;
}

}  // namespace

const char* to_string(StationFn f) {
  switch (f) {
    case StationFn::Business: return "business";
    case StationFn::Residential: return "residential";
    case StationFn::Mixed: return "mixed";
  }
  return "mixed";
}

StationFn station_fn_from_string(const std::string& s) {
  if (s == "business") return StationFn::Business;
  if (s == "residential") return StationFn::Residential;
  if (s == "mixed") return StationFn::Mixed;
  throw InvalidConfig("unknown station function '" + s + "'");
}

void SynthConfig::validate() const {
  if (days <= 0) throw InvalidConfig("days must be positive");
  if (granularity_min <= 0 || close_min <= open_min ||
      (close_min - open_min) % granularity_min != 0)
    throw InvalidConfig("bad operating window");
  if (stations.size() < 2) throw InvalidConfig("need at least 2 stations");
  if (speed_kmh <= 0.0) throw InvalidConfig("speed must be positive");
  if (noise_frac < 0.0 || noise_frac >= 1.0) throw InvalidConfig("noise_frac must be in [0,1)");
  if (access_time_s < 0.0) throw InvalidConfig("access time must be nonnegative");
  const int T = slots_per_day();
  for (const auto& per_fn : profiles)
    for (const auto& p : per_fn)
      if (static_cast<int>(p.size()) != T)
        throw InvalidConfig("profile length must equal slots per day");
  for (const auto& e : events) {
    if (e.day < 0 || e.day >= days) throw OutOfPeriod("event day outside study period");
    if (e.slot_begin < 0 || e.slot_end > T || e.slot_begin >= e.slot_end)
      throw InvalidConfig("bad event slot range");
    if (e.intensity < 0.0) throw InvalidConfig("event intensity must be nonnegative");
    for (int i : e.origins)
      if (i < 0 || i >= static_cast<int>(stations.size()))
        throw InvalidConfig("event origin out of range");
    for (int i : e.dests)
      if (i < 0 || i >= static_cast<int>(stations.size()))
        throw InvalidConfig("event dest out of range");
  }
}

NetworkSpec SynthConfig::network_spec() const {
  NetworkSpec spec;
  spec.granularity_min = granularity_min;
  spec.open_min = open_min;
  spec.close_min = close_min;
  spec.first_epoch_day = first_epoch_day;
  spec.study_days = days;
  for (const auto& s : stations) spec.stations.push_back(Station{s.id, s.lat, s.lon});
  return spec;
}

SynthConfig default_config(uint64_t seed, int n_stations, int days) {
  SynthConfig c;
  c.seed = seed;
  c.days = days;

  // Two crossing lines through a center at (22.55 N, 114.05 E); offsets in
  // km, roughly 0.009 deg/km in latitude.
  const double lat0 = 22.55, lon0 = 114.05;
  const double dlat = 1.0 / 111.195;
  const double dlon = dlat / std::cos(lat0 * 3.14159265358979323846 / 180.0);
  const StationFn cycle[5] = {StationFn::Residential, StationFn::Business, StationFn::Mixed,
                              StationFn::Residential, StationFn::Business};
  KeyedRng place{seed, 0xA11Au};
  for (int i = 0; i < n_stations; ++i) {
    SynthStation s;
    char buf[8];
    std::snprintf(buf, sizeof buf, "S%02d", i);
    s.id = buf;
    double x, y;
    if (i % 2 == 0) {  // east-west line
      x = -8.0 + 16.0 * (i / 2) / std::max(1.0, std::ceil(n_stations / 2.0) - 1.0);
      y = 0.6 * (place.uniform() - 0.5);
    } else {  // north-south line
      y = -6.0 + 12.0 * (i / 2) / std::max(1.0, std::floor(n_stations / 2.0) - 1.0);
      x = 0.6 * (place.uniform() - 0.5);
    }
    s.lat = lat0 + y * dlat;
    s.lon = lon0 + x * dlon;
    s.fn = cycle[i % 5];
    s.base_rate = 12.0 + 8.0 * place.uniform();
    s.attraction = s.fn == StationFn::Business ? 1.4 : (s.fn == StationFn::Mixed ? 1.0 : 0.75);
    c.stations.push_back(std::move(s));
  }

  const int T = c.slots_per_day();
  auto shape = [&](double a1, double mu1, double s1, double a2, double mu2, double s2) {
    std::vector<double> w(T);
    for (int s = 0; s < T; ++s)
      w[s] = 0.6 + a1 * gaussian_bump(s, mu1, s1) + a2 * gaussian_bump(s, mu2, s2);
    return normalized_to_mean_one(w);
  };
  const double am = 0.09 * T;   // ~08:25 for T=64
  const double pm = 0.66 * T;   // ~17:30
  const double mid = 0.44 * T;  // ~14:00
  auto& prof = c.profiles;
  prof[fn_index(StationFn::Business)][0] = shape(0.5, am, 4.0, 2.4, pm, 3.5);
  prof[fn_index(StationFn::Residential)][0] = shape(2.4, am, 3.5, 0.6, pm, 5.0);
  prof[fn_index(StationFn::Mixed)][0] = shape(1.3, am, 4.0, 1.3, pm, 4.0);
  for (int f = 0; f < 3; ++f) prof[f][1] = shape(0.9, mid, 8.0, 0.3, pm, 6.0);

  // A few demand shocks scattered over the study period, test days included.
  KeyedRng ev{seed, 0xE7E7u};
  const int n_events = std::max(1, days / 3);
  for (int k = 0; k < n_events; ++k) {
    Event e;
    e.day = static_cast<int>(ev.next() % static_cast<uint64_t>(days));
    const int span = 8 + static_cast<int>(ev.next() % 9);
    e.slot_begin = static_cast<int>(ev.next() % static_cast<uint64_t>(T - span));
    e.slot_end = e.slot_begin + span;
    e.origins = {static_cast<int>(ev.next() % n_stations)};
    if (ev.uniform() < 0.5) e.origins.push_back(static_cast<int>(ev.next() % n_stations));
    e.dests = {static_cast<int>(ev.next() % n_stations)};
    const double kinds[4] = {0.3, 2.0, 2.5, 3.0};
    e.intensity = kinds[ev.next() % 4];
    c.events.push_back(std::move(e));
  }
  c.validate();
  return c;
}

SynthConfig inject_event(SynthConfig c, Event e) {
  if (e.day < 0 || e.day >= c.days) throw OutOfPeriod("event day outside study period");
  c.events.push_back(std::move(e));
  c.validate();
  return c;
}

namespace {

struct GenContext {
  const SynthConfig& cfg;
  int n;
  int T;
  Mat dist;  // km
  std::vector<int> fn;

  explicit GenContext(const SynthConfig& c)
      : cfg(c), n(static_cast<int>(c.stations.size())), T(c.slots_per_day()) {
    Vec lat(n), lon(n);
    for (int i = 0; i < n; ++i) {
      lat[i] = c.stations[i].lat;
      lon[i] = c.stations[i].lon;
      fn.push_back(fn_index(c.stations[i].fn));
    }
    kern::pairwise_haversine(lat, lon, dist);
  }

  bool is_am(int slot) const { return slot < static_cast<int>(0.4 * T); }

  // Gravity weight of destination j from origin i at a given slot, before
  // event boosts. Zero for j == i.
  double base_weight(int i, int j, int slot) const {
    if (i == j) return 0.0;
    const double d = std::max(dist(i, j), 0.5);
    double w = cfg.stations[j].attraction / std::pow(d, cfg.gravity_exponent);
    const double tilt = cfg.dest_tilt;
    if (is_am(slot)) {
      if (fn[j] == fn_index(StationFn::Business)) w *= 1.0 + tilt;
      if (fn[j] == fn_index(StationFn::Residential)) w /= 1.0 + tilt;
    } else {
      if (fn[j] == fn_index(StationFn::Residential)) w *= 1.0 + tilt;
      if (fn[j] == fn_index(StationFn::Business)) w /= 1.0 + tilt;
    }
    return w;
  }

  // Event multiplier on the (i, j) pair at (day, slot).
  double event_mult(int day, int slot, int i, int j) const {
    double m = 1.0;
    for (const auto& e : cfg.events) {
      if (e.day != day || slot < e.slot_begin || slot >= e.slot_end) continue;
      const bool oi = std::find(e.origins.begin(), e.origins.end(), i) != e.origins.end();
      const bool dj = std::find(e.dests.begin(), e.dests.end(), j) != e.dests.end();
      if (oi && dj) m *= e.intensity;
    }
    return m;
  }

  double day_multiplier(int day) const {
    KeyedRng r{cfg.seed, 0xDA11u, static_cast<uint64_t>(day)};
    return std::exp(cfg.day_scale_sigma * r.gaussian());
  }

  // Entry rate and destination weights for (day, slot, origin).
  double rates(int day, int slot, int i, std::vector<double>& weights) const {
    const int wc = week_class_of(day);
    const auto& profile = cfg.profiles[fn[i]][wc];
    double lambda = cfg.stations[i].base_rate * profile[slot] * day_multiplier(day);
    if (wc == 1) lambda *= cfg.weekend_rate_scale;
    weights.resize(n);
    double base_sum = 0.0, boosted_sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double w = base_weight(i, j, slot);
      base_sum += w;
      weights[j] = w * event_mult(day, slot, i, j);
      boosted_sum += weights[j];
    }
    if (base_sum > 0.0) lambda *= boosted_sum / base_sum;
    return boosted_sum > 0.0 ? lambda : 0.0;
  }

  int week_class_of(int day) const {
    const int64_t ep = cfg.first_epoch_day + day;
    const int wd = static_cast<int>(((ep + 3) % 7 + 7) % 7);
    return wd >= 5 ? 1 : 0;
  }
};

}  // namespace

double expected_pair_count(const SynthConfig& cfg, int day, int slot_begin, int slot_end,
                           int origin, int dest) {
  GenContext ctx(cfg);
  std::vector<double> w;
  double total = 0.0;
  for (int s = slot_begin; s < slot_end; ++s) {
    const double lambda = ctx.rates(day, s, origin, w);
    double wsum = 0.0;
    for (double v : w) wsum += v;
    if (wsum > 0.0) total += lambda * w[dest] / wsum;
  }
  return total;
}

SynthResult generate(const SynthConfig& cfg) {
  cfg.validate();
  GenContext ctx(cfg);
  const int n = ctx.n, T = ctx.T;

  // Per-day buckets keep the output order deterministic under the parallel
  // loop: day-major, then slot, station, trip index.
  std::vector<std::vector<TripRecord>> by_day(cfg.days);

#pragma omp parallel for schedule(dynamic)
  for (int day = 0; day < cfg.days; ++day) {
    std::vector<TripRecord>& out = by_day[day];
    std::vector<double> weights;
    const int64_t day_open =
        (cfg.first_epoch_day + day) * 86400 + static_cast<int64_t>(cfg.open_min) * 60;
    for (int slot = 0; slot < T; ++slot) {
      for (int i = 0; i < n; ++i) {
        const double lambda = ctx.rates(day, slot, i, weights);
        KeyedRng cnt{cfg.seed, 0xC0u, static_cast<uint64_t>(day), static_cast<uint64_t>(slot),
                     static_cast<uint64_t>(i)};
        const int64_t k = cnt.poisson(lambda);
        if (k == 0) continue;
        double wsum = 0.0;
        for (double v : weights) wsum += v;
        for (int64_t trip = 0; trip < k; ++trip) {
          KeyedRng r{cfg.seed, 0x7219u, static_cast<uint64_t>(day), static_cast<uint64_t>(slot),
                     static_cast<uint64_t>(i), static_cast<uint64_t>(trip)};
          // destination by CDF inversion
          double u = r.uniform() * wsum;
          int j = n - 1;
          double acc = 0.0;
          for (int cand = 0; cand < n; ++cand) {
            acc += weights[cand];
            if (u < acc) {
              j = cand;
              break;
            }
          }
          const int64_t entry = day_open + static_cast<int64_t>(slot) * cfg.granularity_min * 60 +
                                static_cast<int64_t>(r.uniform() * cfg.granularity_min * 60.0);
          const double ride_s = ctx.dist(i, j) / cfg.speed_kmh * 3600.0;
          const double noisy = ride_s * (1.0 + cfg.noise_frac * (2.0 * r.uniform() - 1.0));
          const int64_t duration =
              std::max<int64_t>(1, static_cast<int64_t>(std::llround(noisy + cfg.access_time_s)));
          TripRecord t;
          char buf[48];
          std::snprintf(buf, sizeof buf, "C%03d%03d%03d%04d", day, slot, i,
                        static_cast<int>(trip));
          t.card_id = buf;
          t.origin = i;
          t.destination = j;
          t.entry_ts = entry;
          t.exit_ts = entry + duration;
          out.push_back(std::move(t));
        }
      }
    }
  }

  SynthResult res;
  res.spec = cfg.network_spec();
  size_t total = 0;
  for (const auto& v : by_day) total += v.size();
  res.trips.reserve(total);
  for (auto& v : by_day)
    for (auto& t : v) res.trips.push_back(std::move(t));
  return res;
}

Oracle::Oracle(std::vector<TripRecord> trips, NetworkSpec spec)
    : trips_(std::move(trips)), spec_(std::move(spec)) {
  const int T = spec_.slots_per_day();
  entry_bucket_.assign(spec_.study_days, std::vector<std::vector<int>>(T));
  exit_bucket_.assign(spec_.study_days, std::vector<std::vector<int>>(T));
  for (int idx = 0; idx < static_cast<int>(trips_.size()); ++idx) {
    const TripRecord& t = trips_[idx];
    const SlotIndex e = slot_of(t.entry_ts, spec_);
    entry_bucket_[e.day][e.slot].push_back(idx);
    // Arrivals count only when the exit lands inside the same day's window.
    try {
      const SlotIndex x = slot_of(t.exit_ts, spec_);
      if (x.day == e.day)
        exit_bucket_[x.day][x.slot].push_back(idx);
      else
        ++oow_exits_;
    } catch (const OutOfWindow&) {
      ++oow_exits_;
    } catch (const OutOfPeriod&) {
      ++oow_exits_;
    }
  }
}

Mat Oracle::full_od(SlotIndex t) const {
  const int n = spec_.station_count();
  Mat m(n, n);
  for (int idx : entry_bucket_[t.day][t.slot])
    m(trips_[idx].origin, trips_[idx].destination) += 1.0;
  return m;
}

Mat Oracle::finished_od(SlotIndex t, SlotIndex ref) const {
  const int n = spec_.station_count();
  const int64_t cutoff = start_timestamp(ref, spec_);
  Mat m(n, n);
  for (int idx : entry_bucket_[t.day][t.slot])
    if (trips_[idx].exit_ts < cutoff) m(trips_[idx].origin, trips_[idx].destination) += 1.0;
  return m;
}

Mat Oracle::delayed_od(SlotIndex t, SlotIndex ref) const {
  const int n = spec_.station_count();
  const int64_t cutoff = start_timestamp(ref, spec_);
  Mat m(n, n);
  for (int idx : entry_bucket_[t.day][t.slot])
    if (trips_[idx].exit_ts >= cutoff) m(trips_[idx].origin, trips_[idx].destination) += 1.0;
  return m;
}

Mat Oracle::delayed_probability(SlotIndex t, SlotIndex ref) const {
  Mat m = delayed_od(t, ref);
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m(i, j);
    if (s > 0.0)
      for (int j = 0; j < m.cols; ++j) m(i, j) /= s;
  }
  return m;
}

Mat Oracle::true_delayed_ratio(SlotIndex t, SlotIndex ref) const {
  Mat full = full_od(t);
  Mat delayed = delayed_od(t, ref);
  Mat r(full.rows, full.cols);
  for (size_t i = 0; i < full.size(); ++i)
    r.d[i] = full.d[i] > 0.0 ? delayed.d[i] / full.d[i] : 0.0;
  return r;
}

Mat Oracle::odt(SlotIndex t) const {
  const int n = spec_.station_count();
  Mat m(n, n);
  for (int idx : exit_bucket_[t.day][t.slot])
    m(trips_[idx].origin, trips_[idx].destination) += 1.0;
  return m;
}

Vec Oracle::inflow(SlotIndex t) const { return row_sums(full_od(t)); }

Vec Oracle::finished_inflow(SlotIndex t, SlotIndex ref) const {
  return row_sums(finished_od(t, ref));
}

Vec Oracle::delayed_inflow(SlotIndex t, SlotIndex ref) const {
  return row_sums(delayed_od(t, ref));
}

Vec Oracle::outflow(SlotIndex t) const { return col_sums(odt(t)); }

std::string SynthConfig::to_json_text() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["days"] = days;
  j["granularity_minutes"] = granularity_min;
  j["open_min"] = open_min;
  j["close_min"] = close_min;
  j["first_epoch_day"] = first_epoch_day;
  j["gravity_exponent"] = gravity_exponent;
  j["dest_tilt"] = dest_tilt;
  j["weekend_rate_scale"] = weekend_rate_scale;
  j["speed_kmh"] = speed_kmh;
  j["noise_frac"] = noise_frac;
  j["access_time_s"] = access_time_s;
  j["day_scale_sigma"] = day_scale_sigma;
  j["stations"] = nlohmann::json::array();
  for (const auto& s : stations)
    j["stations"].push_back({{"id", s.id},
                             {"lat", s.lat},
                             {"lon", s.lon},
                             {"function", to_string(s.fn)},
                             {"base_rate", s.base_rate},
                             {"attraction", s.attraction}});
  const char* fn_names[3] = {"business", "residential", "mixed"};
  const char* wc_names[2] = {"weekday", "weekend"};
  for (int f = 0; f < 3; ++f)
    for (int w = 0; w < 2; ++w) j["profiles"][fn_names[f]][wc_names[w]] = profiles[f][w];
  j["events"] = nlohmann::json::array();
  for (const auto& e : events)
    j["events"].push_back({{"day", e.day},
                           {"slot_begin", e.slot_begin},
                           {"slot_end", e.slot_end},
                           {"origins", e.origins},
                           {"dests", e.dests},
                           {"intensity", e.intensity}});
  return j.dump(2);
}

SynthConfig SynthConfig::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SynthConfig c;
  c.seed = j.at("seed").get<uint64_t>();
  c.days = j.at("days").get<int>();
  c.granularity_min = j.at("granularity_minutes").get<int>();
  c.open_min = j.at("open_min").get<int>();
  c.close_min = j.at("close_min").get<int>();
  c.first_epoch_day = j.at("first_epoch_day").get<int64_t>();
  c.gravity_exponent = j.at("gravity_exponent").get<double>();
  c.dest_tilt = j.value("dest_tilt", c.dest_tilt);
  c.weekend_rate_scale = j.value("weekend_rate_scale", c.weekend_rate_scale);
  c.speed_kmh = j.at("speed_kmh").get<double>();
  c.noise_frac = j.at("noise_frac").get<double>();
  c.access_time_s = j.at("access_time_s").get<double>();
  c.day_scale_sigma = j.value("day_scale_sigma", c.day_scale_sigma);
  c.stations.clear();
  for (const auto& s : j.at("stations")) {
    SynthStation st;
    st.id = s.at("id").get<std::string>();
    st.lat = s.at("lat").get<double>();
    st.lon = s.at("lon").get<double>();
    st.fn = station_fn_from_string(s.at("function").get<std::string>());
    st.base_rate = s.at("base_rate").get<double>();
    st.attraction = s.at("attraction").get<double>();
    c.stations.push_back(std::move(st));
  }
  const char* fn_names[3] = {"business", "residential", "mixed"};
  const char* wc_names[2] = {"weekday", "weekend"};
  for (int f = 0; f < 3; ++f)
    for (int w = 0; w < 2; ++w)
      c.profiles[f][w] = j.at("profiles").at(fn_names[f]).at(wc_names[w]).get<std::vector<double>>();
  if (j.contains("events"))
    for (const auto& e : j["events"]) {
      Event ev;
      ev.day = e.at("day").get<int>();
      ev.slot_begin = e.at("slot_begin").get<int>();
      ev.slot_end = e.at("slot_end").get<int>();
      ev.origins = e.at("origins").get<std::vector<int>>();
      ev.dests = e.at("dests").get<std::vector<int>>();
      ev.intensity = e.at("intensity").get<double>();
      c.events.push_back(std::move(ev));
    }
  c.validate();
  return c;
}

}  // namespace odflow::synth
