#ifndef ODFLOW_COMPLETION_HPP
#define ODFLOW_COMPLETION_HPP

#include "odflow/ingest.hpp"
#include "odflow/model.hpp"

namespace odflow {

struct CompletionConfig {
  int window = 8;   // P: slots fed to the predictor
  int horizon = 5;  // Q: gap at which finished matrices count as complete
  int estimator_window() const { return window - horizon + 1; }  // K
  void validate() const;
};

enum class Provenance { ObservedComplete, PriorPassthrough, Estimated };
const char* to_string(Provenance);

struct CompletedSlot {
  SlotIndex slot;
  Mat values;
  Provenance tag = Provenance::PriorPassthrough;
  int gap = 0;
};

// Oldest..newest estimates for the P slots before the target.
struct CompletedWindow {
  std::vector<CompletedSlot> slots;
};

enum class MdpSource { Estimated, Weekly };

/*
 * Row-normalizes the raw prediction into a destination distribution,
 * reweights it by the delayed ratio, and row-normalizes again. A row whose
 * reweighted mass vanishes falls back to the plain prediction distribution;
 * if that is zero too the row stays zero.
 */
Mat delay_reweight(const Mat& pred_raw, const Mat& mdr);

// Finished counts plus the delayed inflow spread over the estimated
// destination distribution. Throws NegativeDelayedInflow when
// inflow < finished inflow anywhere.
Mat complete_slot(const Mat& mf, const Vec& inflow, const Vec& finished_inflow, const Mat& mdp);

// Estimator forward on a window, then the delayed-ratio reweighting.
Mat estimate_mdp(const ModelParams& estimator, const StaticGraphs&, const Normalizer&,
                 const std::vector<const Mat*>& window_raw,
                 const std::vector<const Mat*>& odt_raw, const Mat& mdr);

/*
 * Prior passthrough for slots at gap >= horizon, then iterative estimation
 * from the oldest incomplete slot forward, each step feeding on the K most
 * recent estimates. With MdpSource::Weekly the destination distribution
 * comes from pooled history instead of the estimator (which may be null).
 */
CompletedWindow complete_window(const Sample&, const CompletionConfig&,
                                const ModelParams* estimator, const StaticGraphs&,
                                const Normalizer&, MdpSource);

}  // namespace odflow

#endif
