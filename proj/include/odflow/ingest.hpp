#ifndef ODFLOW_INGEST_HPP
#define ODFLOW_INGEST_HPP

#include <array>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "odflow/core.hpp"
#include "odflow/mat.hpp"

namespace odflow {

struct DropReport {
  int64_t accepted = 0;
  int64_t unknown_station = 0;
  int64_t non_positive_duration = 0;
  int64_t out_of_window = 0;
  int64_t out_of_period = 0;
  int64_t malformed_row = 0;
  int64_t dropped() const {
    return unknown_station + non_positive_duration + out_of_window + out_of_period +
           malformed_row;
  }
  DropReport& operator+=(const DropReport& o);
  std::string to_json_text() const;
};

struct ParseResult {
  std::vector<TripRecord> trips;
  DropReport report;
  NetworkSpec spec;  // with the study period filled in when it was derived
};

/*
 * AFC CSV: header `card_id,origin_id,entry_ts,dest_id,exit_ts`, UTF-8, LF.
 * Station columns hold NetworkSpec external ids, timestamps integer epoch
 * seconds. Rows failing validation are counted per reason, never silently
 * dropped. Trips entering inside the window are kept even when their exit
 * falls after close. When the spec carries no study period it is derived
 * from the accepted entries.
 */
ParseResult parse_trips(std::istream&, NetworkSpec);
ParseResult parse_trips_file(const std::filesystem::path&, NetworkSpec);
void write_trips_csv(std::ostream&, const std::vector<TripRecord>&, const NetworkSpec&);

// Direct per-definition builders.
OdMatrix build_full_od(const std::vector<TripRecord>&, const NetworkSpec&, SlotIndex t);
// Entries at t whose exit is strictly before the start of ref.
OdMatrix build_finished_od(const std::vector<TripRecord>&, const NetworkSpec&, SlotIndex t,
                           SlotIndex ref);
// Arrivals during t by (origin, destination); exits outside the window or on
// another day never count as arrivals.
Mat build_odt(const std::vector<TripRecord>&, const NetworkSpec&, SlotIndex t);

// C_t = sum(MF)/sum(M); 1 when both totals are zero. Throws KindMismatch
// unless mf is Finished and m is Full for the same slot.
double completeness(const OdMatrix& mf, const OdMatrix& m);

struct TravelTimeStats {
  double min_s = 0.0;
  double max_s = 0.0;
  Vec sorted;  // ascending durations, seconds
  Mat pair_count, pair_mean, pair_min, pair_max;
  double quantile(double q) const;
  static TravelTimeStats from_trips(const std::vector<TripRecord>&, const NetworkSpec&);
};

/*
 * All per-slot observables for a study period in one pass: full OD and ODt
 * matrices per slot, plus finished OD matrices for every gap in [1, max_gap]
 * that stays inside the day.
 */
class SlotStore {
 public:
  SlotStore(const std::vector<TripRecord>&, NetworkSpec, int max_gap);

  const NetworkSpec& spec() const { return spec_; }
  int max_gap() const { return max_gap_; }
  int64_t total_trips() const { return total_; }

  const Mat& full(SlotIndex) const;
  const Mat& odt(SlotIndex) const;
  const Mat& finished(SlotIndex t, int gap) const;
  Vec inflow(SlotIndex) const;
  Vec finished_inflow(SlotIndex, int gap) const;
  Vec outflow(SlotIndex) const;

 private:
  size_t at(SlotIndex) const;
  NetworkSpec spec_;
  int max_gap_ = 0;
  int64_t total_ = 0;
  std::vector<Mat> full_;
  std::vector<Mat> odt_;
  std::vector<Mat> finished_;  // [(day*T+slot)*max_gap + gap-1]
};

Normalizer fit_normalizer(const Vec& values);  // EmptyInput; population std
Normalizer fit_normalizer(const SlotStore&, const std::vector<int>& days);

/*
 * Historical delayed-ratio matrices MDR pooled per (week class, slot, gap).
 * Pairs with no history at a bucket fall back to the bucket's all-pair
 * ratio, then to the week-class/gap ratio pooled over slots. Also keeps the
 * pooled delayed counts, whose row normalization is the weekly MDP estimate.
 */
class DelayedRatioTable {
 public:
  DelayedRatioTable(const std::vector<TripRecord>&, const NetworkSpec&,
                    const std::vector<int>& history_days, int max_gap);
  const OdMatrix& ratio(WeekClass, int slot, int gap) const;  // EmptyHistory
  Mat pooled_mdp(WeekClass, int slot, int gap) const;
  int max_gap() const { return max_gap_; }

 private:
  size_t at(WeekClass, int slot, int gap) const;
  int slots_ = 0;
  int max_gap_ = 0;
  std::array<bool, 2> has_class_{{false, false}};
  std::vector<OdMatrix> ratio_;
  std::vector<Mat> delayed_;
};

struct DataSplit {
  std::vector<int> train_days, val_days, test_days;
};

// Chronological 70/10/20 split by days (floor arithmetic, remainder to
// test). Throws TooFewDays when any part would be empty.
DataSplit split_days(int study_days);

struct SampleIndex {
  int day = 0;
  int slot = 0;  // target slot t'
};

// Every in-day target with P predecessors: slots [P, T-1] of each day.
std::vector<SampleIndex> make_samples(const NetworkSpec&, const std::vector<int>& days, int window);

struct SlotTensors {
  SlotIndex target;
  std::vector<SlotIndex> slots;  // oldest..newest: t'-P .. t'-1
  std::vector<OdMatrix> finished;
  std::vector<FlowVector> inflow, finished_inflow, outflow;
  std::vector<Mat> odt;
};

// Throws InsufficientHistory when the target lacks P same-day predecessors.
SlotTensors build_slot_tensors(const SlotStore&, SlotIndex target, int window);

struct Sample {
  SlotTensors inputs;
  std::vector<OdMatrix> mdr;    // per input slot at its gap; empty beyond the horizon
  std::vector<Mat> weekly_mdp;  // same coverage
  OdMatrix label;               // ground-truth full OD at the target
};

Sample materialize_sample(const SlotStore&, const DelayedRatioTable*, SampleIndex, int window,
                          int horizon);

// Summed per-station historical inflow/outflow counts (N x T) over the given
// days of one week class, the raw material for flow profiles.
std::pair<Mat, Mat> profile_counts(const SlotStore&, const std::vector<int>& days, WeekClass);

}  // namespace odflow

#endif
