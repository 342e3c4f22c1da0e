#ifndef ODFLOW_CORE_HPP
#define ODFLOW_CORE_HPP

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "odflow/mat.hpp"

namespace odflow {

struct Station {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
};

/*
 * A metro network plus the discretized study period. Days are epoch days
 * (UTC) offset by first_epoch_day, each divided into T slots of
 * granularity_min minutes between the open and close times. Timestamps
 * are integer epoch seconds in the network's local clock.
 */
struct NetworkSpec {
  int granularity_min = 15;
  int open_min = 7 * 60;    // minutes since midnight
  int close_min = 23 * 60;
  std::vector<Station> stations;
  int64_t first_epoch_day = 0;
  int study_days = 0;

  int station_count() const { return static_cast<int>(stations.size()); }
  int slots_per_day() const { return (close_min - open_min) / granularity_min; }

  // Throws InvalidConfig when any structural invariant fails.
  void validate() const;

  int station_index(const std::string& external_id) const;  // -1 when unknown

  static NetworkSpec from_json_file(const std::filesystem::path&);
  static NetworkSpec from_json_text(const std::string&);
  std::string to_json_text() const;
};

struct SlotIndex {
  int day = 0;
  int slot = 0;
  auto operator<=>(const SlotIndex&) const = default;
};

struct TripRecord {
  std::string card_id;
  int origin = 0;
  int destination = 0;
  int64_t entry_ts = 0;
  int64_t exit_ts = 0;
};

// Weekday of a study day, 0=Monday .. 6=Sunday (epoch day 0 was a Thursday).
int weekday_of(const NetworkSpec&, int day);

enum class WeekClass { Weekday, Weekend };
WeekClass week_class(const NetworkSpec&, int day);
inline int week_class_index(WeekClass w) { return w == WeekClass::Weekday ? 0 : 1; }

// Maps an epoch-second timestamp to its (day, slot). Throws OutOfWindow for
// timestamps outside the daily operating window and OutOfPeriod outside the
// study range.
SlotIndex slot_of(int64_t ts, const NetworkSpec&);

// Epoch second at which a slot begins.
int64_t start_timestamp(const SlotIndex&, const NetworkSpec&);

// Number of slot steps from t to t_prime in linearized (day, slot) order.
// Throws NegativeGap when t_prime < t.
int64_t slot_gap(const SlotIndex& t, const SlotIndex& t_prime, const NetworkSpec&);

enum class OdKind { Full, Finished, Delayed, Probability, DelayedProbability, DelayedRatio };

struct OdMatrix {
  SlotIndex slot;
  OdKind kind = OdKind::Full;
  SlotIndex ref;  // reference slot t' for Finished / Delayed / DelayedProbability
  int gap = 0;    // slot gap for DelayedRatio
  Mat values;

  // Enforces the per-kind entry invariants (nonnegativity, row sums, ranges).
  void validate() const;
};

enum class FlowKind { Inflow, FinishedInflow, DelayedInflow, Outflow };

struct FlowVector {
  SlotIndex slot;
  FlowKind kind = FlowKind::Inflow;
  SlotIndex ref;
  Vec values;
};

// Z-score transform fit on training OD entries; std == 0 degenerates to 1.
struct Normalizer {
  double mean = 0.0;
  double std = 1.0;
  double apply(double x) const { return (x - mean) / std; }
  double invert(double z) const { return z * std + mean; }
  Mat apply(const Mat&) const;
  Mat invert(const Mat&) const;
};

}  // namespace odflow

#endif
