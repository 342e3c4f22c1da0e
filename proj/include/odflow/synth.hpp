#ifndef ODFLOW_SYNTH_HPP
#define ODFLOW_SYNTH_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "odflow/core.hpp"
#include "odflow/mat.hpp"

namespace odflow::synth {

enum class StationFn { Business, Residential, Mixed };

const char* to_string(StationFn);
StationFn station_fn_from_string(const std::string&);

struct SynthStation {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  StationFn fn = StationFn::Mixed;
  double base_rate = 15.0;   // expected entries per slot at an average slot
  double attraction = 1.0;   // destination pull
};

struct Event {
  int day = 0;
  int slot_begin = 0;  // inclusive
  int slot_end = 0;    // exclusive
  std::vector<int> origins;
  std::vector<int> dests;
  double intensity = 1.0;  // multiplies affected OD-pair rates
};

/*
 * Generator configuration. Entries per (station, slot) are Poisson with
 * rate base_rate * profile[slot] * day multiplier * event multiplier;
 * destinations follow gravity weights tilted by station function and time
 * of day; travel time is distance/speed with multiplicative noise plus a
 * fixed access time. Everything is keyed off the seed, so equal configs
 * produce byte-identical trip lists.
 */
struct SynthConfig {
  uint64_t seed = 1;
  int days = 30;
  int granularity_min = 15;
  int open_min = 7 * 60;
  int close_min = 23 * 60;
  int64_t first_epoch_day = 19604;  // a Monday
  std::vector<SynthStation> stations;
  // profile[function][week class] = T weights, normalized to mean 1 at use
  std::array<std::array<std::vector<double>, 2>, 3> profiles;
  double gravity_exponent = 1.5;
  double dest_tilt = 0.6;          // AM boosts business dests, PM residential
  double weekend_rate_scale = 0.65;
  double speed_kmh = 32.0;
  double noise_frac = 0.25;
  double access_time_s = 240.0;
  double day_scale_sigma = 0.30;   // lognormal sigma of the per-day multiplier
  std::vector<Event> events;

  int slots_per_day() const { return (close_min - open_min) / granularity_min; }
  void validate() const;  // InvalidConfig
  NetworkSpec network_spec() const;

  std::string to_json_text() const;
  static SynthConfig from_json_text(const std::string&);
};

// Desk-scale default: N stations on two crossing lines, 30 days, 15-minute
// slots from 07:00 to 23:00 (T = 64), a handful of events.
SynthConfig default_config(uint64_t seed, int n_stations = 10, int days = 30);

// Returns a copy with the event appended. Throws OutOfPeriod when the event
// window falls outside the study period.
SynthConfig inject_event(SynthConfig, Event);

// Expected in-window trip count for one OD pair under the config (Poisson
// mean), for distribution-level tests.
double expected_pair_count(const SynthConfig&, int day, int slot_begin, int slot_end,
                           int origin, int dest);

/*
 * Ground truth for every per-slot observable, answered directly from the
 * generated trip list. Queries are definitional counting loops over
 * entry/exit slot buckets, independent of the ingestion pipeline.
 */
class Oracle {
 public:
  Oracle(std::vector<TripRecord> trips, NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<TripRecord>& trips() const { return trips_; }

  Mat full_od(SlotIndex t) const;
  Mat finished_od(SlotIndex t, SlotIndex ref) const;
  Mat delayed_od(SlotIndex t, SlotIndex ref) const;
  Mat delayed_probability(SlotIndex t, SlotIndex ref) const;  // row-normalized MD
  Mat true_delayed_ratio(SlotIndex t, SlotIndex ref) const;   // MD/M, 0/0 -> 0
  Mat odt(SlotIndex t) const;
  Vec inflow(SlotIndex t) const;
  Vec finished_inflow(SlotIndex t, SlotIndex ref) const;
  Vec delayed_inflow(SlotIndex t, SlotIndex ref) const;
  Vec outflow(SlotIndex t) const;
  int64_t out_of_window_exits() const { return oow_exits_; }

 private:
  std::vector<TripRecord> trips_;
  NetworkSpec spec_;
  // trip indices bucketed by entry slot and by in-window same-day exit slot
  std::vector<std::vector<std::vector<int>>> entry_bucket_;
  std::vector<std::vector<std::vector<int>>> exit_bucket_;
  int64_t oow_exits_ = 0;
};

struct SynthResult {
  std::vector<TripRecord> trips;
  NetworkSpec spec;
};

SynthResult generate(const SynthConfig&);

}  // namespace odflow::synth

#endif
