#include "odflow/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace odflow {

DropReport& DropReport::operator+=(const DropReport& o) {
  accepted += o.accepted;
  unknown_station += o.unknown_station;
  non_positive_duration += o.non_positive_duration;
  out_of_window += o.out_of_window;
  out_of_period += o.out_of_period;
  malformed_row += o.malformed_row;
  return *this;
}

std::string DropReport::to_json_text() const {
  nlohmann::json j;
  j["accepted"] = accepted;
  j["dropped"] = dropped();
  j["reasons"] = {{"unknown_station", unknown_station},
                  {"non_positive_duration", non_positive_duration},
                  {"out_of_window", out_of_window},
                  {"out_of_period", out_of_period},
                  {"malformed_row", malformed_row}};
  return j.dump(2);
}

namespace {

constexpr const char* kCsvHeader = "card_id,origin_id,entry_ts,dest_id,exit_ts";

bool parse_int64(const std::string& s, int64_t& out) {
  if (s.empty()) return false;
  size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

bool in_window(int64_t ts, const NetworkSpec& spec, int64_t& epoch_day) {
  epoch_day = ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
  const int64_t sec = ts - epoch_day * 86400;
  return sec >= static_cast<int64_t>(spec.open_min) * 60 &&
         sec < static_cast<int64_t>(spec.close_min) * 60;
}

}  // namespace

ParseResult parse_trips(std::istream& in, NetworkSpec spec) {
  std::string line;
  if (!std::getline(in, line)) throw MalformedHeader("empty trip stream");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader)
    throw MalformedHeader("expected '" + std::string(kCsvHeader) + "', got '" + line + "'");

  std::unordered_map<std::string, int> index;
  for (int i = 0; i < spec.station_count(); ++i) index.emplace(spec.stations[i].id, i);

  ParseResult res;
  std::vector<int64_t> entry_days;
  std::string field[5];
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t start = 0;
    int nf = 0;
    bool bad = false;
    for (int f = 0; f < 5; ++f) {
      const size_t comma = line.find(',', start);
      if (f < 4) {
        if (comma == std::string::npos) {
          bad = true;
          break;
        }
        field[f] = line.substr(start, comma - start);
        start = comma + 1;
      } else {
        if (comma != std::string::npos) {
          bad = true;  // extra columns
          break;
        }
        field[f] = line.substr(start);
      }
      ++nf;
    }
    int64_t entry = 0, exit = 0;
    if (bad || nf != 5 || !parse_int64(field[2], entry) || !parse_int64(field[4], exit)) {
      ++res.report.malformed_row;
      continue;
    }
    const auto o = index.find(field[1]);
    const auto d = index.find(field[3]);
    if (o == index.end() || d == index.end()) {
      ++res.report.unknown_station;
      continue;
    }
    if (exit <= entry) {
      ++res.report.non_positive_duration;
      continue;
    }
    int64_t epoch_day = 0;
    if (!in_window(entry, spec, epoch_day)) {
      ++res.report.out_of_window;
      continue;
    }
    if (spec.study_days > 0) {
      const int64_t day = epoch_day - spec.first_epoch_day;
      if (day < 0 || day >= spec.study_days) {
        ++res.report.out_of_period;
        continue;
      }
    }
    TripRecord t;
    t.card_id = field[0];
    t.origin = o->second;
    t.destination = d->second;
    t.entry_ts = entry;
    t.exit_ts = exit;
    res.trips.push_back(std::move(t));
    entry_days.push_back(epoch_day);
    ++res.report.accepted;
  }

  if (spec.study_days == 0 && !entry_days.empty()) {
    const auto [lo, hi] = std::minmax_element(entry_days.begin(), entry_days.end());
    spec.first_epoch_day = *lo;
    spec.study_days = static_cast<int>(*hi - *lo + 1);
  }
  res.spec = std::move(spec);
  return res;
}

ParseResult parse_trips_file(const std::filesystem::path& path, NetworkSpec spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trips file " + path.string());
  return parse_trips(in, std::move(spec));
}

void write_trips_csv(std::ostream& out, const std::vector<TripRecord>& trips,
                     const NetworkSpec& spec) {
  out << kCsvHeader << "\n";
  for (const auto& t : trips)
    out << t.card_id << ',' << spec.stations[t.origin].id << ',' << t.entry_ts << ','
        << spec.stations[t.destination].id << ',' << t.exit_ts << "\n";
}

OdMatrix build_full_od(const std::vector<TripRecord>& trips, const NetworkSpec& spec,
                       SlotIndex t) {
  const int n = spec.station_count();
  OdMatrix m;
  m.slot = t;
  m.kind = OdKind::Full;
  m.values = Mat(n, n);
  for (const auto& trip : trips) {
    SlotIndex e;
    try {
      e = slot_of(trip.entry_ts, spec);
    } catch (const Error&) {
      continue;
    }
    if (e == t) m.values(trip.origin, trip.destination) += 1.0;
  }
  return m;
}

OdMatrix build_finished_od(const std::vector<TripRecord>& trips, const NetworkSpec& spec,
                           SlotIndex t, SlotIndex ref) {
  const int n = spec.station_count();
  const int64_t cutoff = start_timestamp(ref, spec);
  OdMatrix m;
  m.slot = t;
  m.kind = OdKind::Finished;
  m.ref = ref;
  m.values = Mat(n, n);
  for (const auto& trip : trips) {
    SlotIndex e;
    try {
      e = slot_of(trip.entry_ts, spec);
    } catch (const Error&) {
      continue;
    }
    if (e == t && trip.exit_ts < cutoff) m.values(trip.origin, trip.destination) += 1.0;
  }
  return m;
}

Mat build_odt(const std::vector<TripRecord>& trips, const NetworkSpec& spec, SlotIndex t) {
  const int n = spec.station_count();
  Mat m(n, n);
  for (const auto& trip : trips) {
    SlotIndex e, x;
    try {
      e = slot_of(trip.entry_ts, spec);
      x = slot_of(trip.exit_ts, spec);
    } catch (const Error&) {
      continue;
    }
    if (x == t && x.day == e.day) m(trip.origin, trip.destination) += 1.0;
  }
  return m;
}

double completeness(const OdMatrix& mf, const OdMatrix& m) {
  if (mf.kind != OdKind::Finished || m.kind != OdKind::Full)
    throw KindMismatch("completeness expects (Finished, Full)");
  if (!(mf.slot == m.slot)) throw KindMismatch("completeness: slot mismatch");
  require_same_shape(mf.values, m.values, "completeness");
  const double num = mf.values.sum();
  const double den = m.values.sum();
  if (den == 0.0) return 1.0;
  return num / den;
}

double TravelTimeStats::quantile(double q) const {
  if (sorted.empty()) return 0.0;
  if (q <= 0.0) return sorted.front();
  if (q >= 1.0) return sorted.back();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

TravelTimeStats TravelTimeStats::from_trips(const std::vector<TripRecord>& trips,
                                            const NetworkSpec& spec) {
  if (trips.empty()) throw EmptyInput("no trips for travel-time stats");
  const int n = spec.station_count();
  TravelTimeStats s;
  s.pair_count = Mat(n, n);
  s.pair_mean = Mat(n, n);
  s.pair_min = Mat(n, n, std::numeric_limits<double>::infinity());
  s.pair_max = Mat(n, n);
  s.sorted.reserve(trips.size());
  for (const auto& t : trips) {
    const double dur = static_cast<double>(t.exit_ts - t.entry_ts);
    s.sorted.push_back(dur);
    s.pair_count(t.origin, t.destination) += 1.0;
    s.pair_mean(t.origin, t.destination) += dur;
    s.pair_min(t.origin, t.destination) = std::min(s.pair_min(t.origin, t.destination), dur);
    s.pair_max(t.origin, t.destination) = std::max(s.pair_max(t.origin, t.destination), dur);
  }
  std::sort(s.sorted.begin(), s.sorted.end());
  s.min_s = s.sorted.front();
  s.max_s = s.sorted.back();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (s.pair_count(i, j) > 0.0)
        s.pair_mean(i, j) /= s.pair_count(i, j);
      else
        s.pair_min(i, j) = 0.0;
    }
  return s;
}

size_t SlotStore::at(SlotIndex s) const {
  return static_cast<size_t>(s.day) * spec_.slots_per_day() + s.slot;
}

SlotStore::SlotStore(const std::vector<TripRecord>& trips, NetworkSpec spec, int max_gap)
    : spec_(std::move(spec)), max_gap_(max_gap) {
  const int T = spec_.slots_per_day();
  const int n = spec_.station_count();
  const size_t slots = static_cast<size_t>(spec_.study_days) * T;
  full_.assign(slots, Mat(n, n));
  odt_.assign(slots, Mat(n, n));
  finished_.assign(slots * max_gap_, Mat());
  for (size_t s = 0; s < slots; ++s) {
    const int slot = static_cast<int>(s % T);
    for (int g = 1; g <= max_gap_ && slot + g < T; ++g) finished_[s * max_gap_ + g - 1] = Mat(n, n);
  }

  for (const auto& trip : trips) {
    const SlotIndex e = slot_of(trip.entry_ts, spec_);
    const size_t se = at(e);
    full_[se](trip.origin, trip.destination) += 1.0;
    ++total_;
    for (int g = 1; g <= max_gap_ && e.slot + g < T; ++g) {
      const int64_t cutoff = start_timestamp(SlotIndex{e.day, e.slot + g}, spec_);
      if (trip.exit_ts < cutoff)
        finished_[se * max_gap_ + g - 1](trip.origin, trip.destination) += 1.0;
    }
    try {
      const SlotIndex x = slot_of(trip.exit_ts, spec_);
      if (x.day == e.day) odt_[at(x)](trip.origin, trip.destination) += 1.0;
    } catch (const Error&) {
      // exit after close (or out of period): never an observed arrival
    }
  }
}

const Mat& SlotStore::full(SlotIndex s) const { return full_[at(s)]; }
const Mat& SlotStore::odt(SlotIndex s) const { return odt_[at(s)]; }

const Mat& SlotStore::finished(SlotIndex t, int gap) const {
  if (gap < 1 || gap > max_gap_)
    throw InsufficientHistory("finished OD gap " + std::to_string(gap) + " unavailable");
  const Mat& m = finished_[at(t) * max_gap_ + gap - 1];
  if (m.empty()) throw InsufficientHistory("finished OD crosses the day boundary");
  return m;
}

Vec SlotStore::inflow(SlotIndex s) const { return row_sums(full(s)); }
Vec SlotStore::finished_inflow(SlotIndex s, int gap) const { return row_sums(finished(s, gap)); }
Vec SlotStore::outflow(SlotIndex s) const { return col_sums(odt(s)); }

Normalizer fit_normalizer(const Vec& values) {
  if (values.empty()) throw EmptyInput("fit_normalizer: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(values.size());
  Normalizer nz;
  nz.mean = mean;
  nz.std = var > 0.0 ? std::sqrt(var) : 1.0;
  return nz;
}

Normalizer fit_normalizer(const SlotStore& store, const std::vector<int>& days) {
  const int T = store.spec().slots_per_day();
  Vec values;
  for (int day : days)
    for (int s = 0; s < T; ++s) {
      const Mat& m = store.full(SlotIndex{day, s});
      values.insert(values.end(), m.d.begin(), m.d.end());
    }
  return fit_normalizer(values);
}

size_t DelayedRatioTable::at(WeekClass w, int slot, int gap) const {
  return (static_cast<size_t>(week_class_index(w)) * slots_ + slot) * max_gap_ + gap - 1;
}

DelayedRatioTable::DelayedRatioTable(const std::vector<TripRecord>& trips,
                                     const NetworkSpec& spec,
                                     const std::vector<int>& history_days, int max_gap)
    : slots_(spec.slots_per_day()), max_gap_(max_gap) {
  if (history_days.empty()) throw EmptyHistory("delayed-ratio table: no history days");
  const int n = spec.station_count();
  const int T = slots_;
  std::vector<char> in_history(spec.study_days, 0);
  for (int d : history_days)
    if (d >= 0 && d < spec.study_days) in_history[d] = 1;

  std::vector<Mat> total(2ull * T * max_gap_, Mat(n, n));
  delayed_.assign(2ull * T * max_gap_, Mat(n, n));

  int64_t seen = 0;
  for (const auto& trip : trips) {
    const SlotIndex e = slot_of(trip.entry_ts, spec);
    if (!in_history[e.day]) continue;
    const int wc = week_class_index(week_class(spec, e.day));
    ++seen;
    has_class_[wc] = true;
    for (int g = 1; g <= max_gap_ && e.slot + g < T; ++g) {
      const size_t idx = (static_cast<size_t>(wc) * T + e.slot) * max_gap_ + g - 1;
      total[idx](trip.origin, trip.destination) += 1.0;
      const int64_t cutoff = start_timestamp(SlotIndex{e.day, e.slot + g}, spec);
      if (trip.exit_ts >= cutoff) delayed_[idx](trip.origin, trip.destination) += 1.0;
    }
  }
  if (seen == 0) throw EmptyHistory("delayed-ratio table: history days contain no trips");

  ratio_.assign(2ull * T * max_gap_, OdMatrix{});
  for (int wc = 0; wc < 2; ++wc) {
    if (!has_class_[wc]) continue;
    // week-class/gap ratio pooled over slots and pairs, the last fallback
    std::vector<double> class_gap_ratio(max_gap_, 0.0);
    for (int g = 1; g <= max_gap_; ++g) {
      double del = 0.0, tot = 0.0;
      for (int s = 0; s < T; ++s) {
        const size_t idx = (static_cast<size_t>(wc) * T + s) * max_gap_ + g - 1;
        del += delayed_[idx].sum();
        tot += total[idx].sum();
      }
      class_gap_ratio[g - 1] = tot > 0.0 ? del / tot : 0.0;
    }
    for (int s = 0; s < T; ++s)
      for (int g = 1; g <= max_gap_; ++g) {
        const size_t idx = (static_cast<size_t>(wc) * T + s) * max_gap_ + g - 1;
        const Mat& del = delayed_[idx];
        const Mat& tot = total[idx];
        const double bucket_del = del.sum();
        const double bucket_tot = tot.sum();
        const double bucket_ratio =
            bucket_tot > 0.0 ? bucket_del / bucket_tot : class_gap_ratio[g - 1];
        OdMatrix r;
        r.kind = OdKind::DelayedRatio;
        r.slot = SlotIndex{0, s};
        r.gap = g;
        r.values = Mat(n, n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            r.values(i, j) =
                tot(i, j) > 0.0 ? del(i, j) / tot(i, j) : bucket_ratio;
        ratio_[idx] = std::move(r);
      }
  }
}

const OdMatrix& DelayedRatioTable::ratio(WeekClass w, int slot, int gap) const {
  if (gap < 1 || gap > max_gap_ || slot < 0 || slot >= slots_)
    throw EmptyHistory("delayed ratio outside table range");
  if (!has_class_[week_class_index(w)])
    throw EmptyHistory("no history for requested week class");
  return ratio_[at(w, slot, gap)];
}

Mat DelayedRatioTable::pooled_mdp(WeekClass w, int slot, int gap) const {
  if (gap < 1 || gap > max_gap_ || slot < 0 || slot >= slots_)
    throw EmptyHistory("pooled MDP outside table range");
  if (!has_class_[week_class_index(w)])
    throw EmptyHistory("no history for requested week class");
  Mat m = delayed_[at(w, slot, gap)];
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m(i, j);
    if (s > 0.0)
      for (int j = 0; j < m.cols; ++j) m(i, j) /= s;
  }
  return m;
}

DataSplit split_days(int study_days) {
  const int train = static_cast<int>(std::floor(0.7 * study_days));
  const int val = static_cast<int>(std::floor(0.1 * study_days));
  const int test = study_days - train - val;
  if (train < 1 || val < 1 || test < 1)
    throw TooFewDays("cannot split " + std::to_string(study_days) + " days 70/10/20");
  DataSplit s;
  for (int d = 0; d < train; ++d) s.train_days.push_back(d);
  for (int d = train; d < train + val; ++d) s.val_days.push_back(d);
  for (int d = train + val; d < study_days; ++d) s.test_days.push_back(d);
  return s;
}

std::vector<SampleIndex> make_samples(const NetworkSpec& spec, const std::vector<int>& days,
                                      int window) {
  std::vector<SampleIndex> out;
  const int T = spec.slots_per_day();
  for (int day : days)
    for (int s = window; s < T; ++s) out.push_back(SampleIndex{day, s});
  return out;
}

SlotTensors build_slot_tensors(const SlotStore& store, SlotIndex target, int window) {
  if (target.slot < window)
    throw InsufficientHistory("target slot " + std::to_string(target.slot) + " needs " +
                              std::to_string(window) + " same-day predecessors");
  SlotTensors st;
  st.target = target;
  for (int k = window; k >= 1; --k) {
    const SlotIndex t{target.day, target.slot - k};
    st.slots.push_back(t);
    OdMatrix mf;
    mf.slot = t;
    mf.kind = OdKind::Finished;
    mf.ref = target;
    mf.values = store.finished(t, k);
    st.finished.push_back(std::move(mf));
    st.inflow.push_back(FlowVector{t, FlowKind::Inflow, target, store.inflow(t)});
    st.finished_inflow.push_back(
        FlowVector{t, FlowKind::FinishedInflow, target, store.finished_inflow(t, k)});
    st.outflow.push_back(FlowVector{t, FlowKind::Outflow, target, store.outflow(t)});
    st.odt.push_back(store.odt(t));
  }
  return st;
}

Sample materialize_sample(const SlotStore& store, const DelayedRatioTable* mdr,
                          SampleIndex idx, int window, int horizon) {
  const SlotIndex target{idx.day, idx.slot};
  Sample s;
  s.inputs = build_slot_tensors(store, target, window);
  const WeekClass wc = week_class(store.spec(), idx.day);
  for (int k = window; k >= 1; --k) {
    if (mdr != nullptr && k >= 1 && k <= horizon - 1) {
      s.mdr.push_back(mdr->ratio(wc, idx.slot - k, k));
      s.weekly_mdp.push_back(mdr->pooled_mdp(wc, idx.slot - k, k));
    } else {
      s.mdr.emplace_back();
      s.weekly_mdp.emplace_back();
    }
  }
  s.label.slot = target;
  s.label.kind = OdKind::Full;
  s.label.values = store.full(target);
  return s;
}

std::pair<Mat, Mat> profile_counts(const SlotStore& store, const std::vector<int>& days,
                                   WeekClass wc) {
  const NetworkSpec& spec = store.spec();
  const int n = spec.station_count();
  const int T = spec.slots_per_day();
  Mat in(n, T), out(n, T);
  for (int day : days) {
    if (week_class(spec, day) != wc) continue;
    for (int s = 0; s < T; ++s) {
      const Vec i = store.inflow(SlotIndex{day, s});
      const Vec o = store.outflow(SlotIndex{day, s});
      for (int st = 0; st < n; ++st) {
        in(st, s) += i[st];
        out(st, s) += o[st];
      }
    }
  }
  return {std::move(in), std::move(out)};
}

}  // namespace odflow
