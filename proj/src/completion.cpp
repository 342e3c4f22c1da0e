#include "odflow/completion.hpp"

namespace odflow {

void CompletionConfig::validate() const {
  if (horizon < 1 || horizon > window)
    throw InvalidConfig("completion config requires 1 <= horizon <= window");
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::ObservedComplete: return "observed_complete";
    case Provenance::PriorPassthrough: return "prior_passthrough";
    case Provenance::Estimated: return "estimated";
  }
  return "estimated";
}

namespace {

void normalize_rows(Mat& m) {
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m(i, j);
    if (s > 0.0)
      for (int j = 0; j < m.cols; ++j) m(i, j) /= s;
  }
}

}  // namespace

Mat delay_reweight(const Mat& pred_raw, const Mat& mdr) {
  require_same_shape(pred_raw, mdr, "delay_reweight");
  Mat inner = pred_raw;
  normalize_rows(inner);
  Mat out(inner.rows, inner.cols);
  for (int i = 0; i < inner.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < inner.cols; ++j) {
      out(i, j) = inner(i, j) * mdr(i, j);
      s += out(i, j);
    }
    if (s > 0.0) {
      for (int j = 0; j < inner.cols; ++j) out(i, j) /= s;
    } else {
      for (int j = 0; j < inner.cols; ++j) out(i, j) = inner(i, j);
    }
  }
  return out;
}

Mat complete_slot(const Mat& mf, const Vec& inflow, const Vec& finished_inflow,
                  const Mat& mdp) {
  require_same_shape(mf, mdp, "complete_slot");
  if (static_cast<int>(inflow.size()) != mf.rows ||
      static_cast<int>(finished_inflow.size()) != mf.rows)
    throw ShapeMismatch("complete_slot: flow length mismatch");
  Mat out = mf;
  for (int i = 0; i < mf.rows; ++i) {
    const double delayed = inflow[i] - finished_inflow[i];
    if (delayed < 0.0)
      throw NegativeDelayedInflow("station " + std::to_string(i) + " has inflow " +
                                  std::to_string(inflow[i]) + " < finished " +
                                  std::to_string(finished_inflow[i]));
    if (delayed == 0.0) continue;
    for (int j = 0; j < mf.cols; ++j) out(i, j) += mdp(i, j) * delayed;
  }
  return out;
}

Mat estimate_mdp(const ModelParams& estimator, const StaticGraphs& graphs,
                 const Normalizer& norm, const std::vector<const Mat*>& window_raw,
                 const std::vector<const Mat*>& odt_raw, const Mat& mdr) {
  const Mat pred = ahgcsp_predict(estimator, graphs, norm, window_raw, odt_raw);
  return delay_reweight(pred, mdr);
}

CompletedWindow complete_window(const Sample& sample, const CompletionConfig& cfg,
                                const ModelParams* estimator, const StaticGraphs& graphs,
                                const Normalizer& norm, MdpSource source) {
  cfg.validate();
  const int P = cfg.window;
  const int Q = cfg.horizon;
  const int K = cfg.estimator_window();
  if (static_cast<int>(sample.inputs.slots.size()) != P)
    throw WrongSequenceLength("sample window does not match completion config");
  if (source == MdpSource::Estimated && estimator == nullptr)
    throw Error("complete_window: estimator checkpoint required for estimated MDP");

  CompletedWindow win;
  win.slots.resize(P);
  // gap of slot index idx is P - idx; gaps >= Q pass through untouched
  for (int idx = 0; idx <= P - Q; ++idx) {
    CompletedSlot& c = win.slots[idx];
    c.slot = sample.inputs.slots[idx];
    c.values = sample.inputs.finished[idx].values;
    c.tag = Provenance::PriorPassthrough;
    c.gap = P - idx;
  }
  for (int idx = P - Q + 1; idx < P; ++idx) {
    const int gap = P - idx;
    Mat mdp;
    if (source == MdpSource::Weekly) {
      mdp = sample.weekly_mdp[idx];
      if (mdp.empty()) throw EmptyHistory("sample lacks pooled MDP at gap " + std::to_string(gap));
    } else {
      std::vector<const Mat*> window, odt;
      for (int k = idx - K; k < idx; ++k) {
        window.push_back(&win.slots[k].values);
        odt.push_back(&sample.inputs.odt[k]);
      }
      const Mat& mdr = sample.mdr[idx].values;
      if (mdr.empty()) throw EmptyHistory("sample lacks MDR at gap " + std::to_string(gap));
      mdp = estimate_mdp(*estimator, graphs, norm, window, odt, mdr);
    }
    CompletedSlot& c = win.slots[idx];
    c.slot = sample.inputs.slots[idx];
    c.values = complete_slot(sample.inputs.finished[idx].values, sample.inputs.inflow[idx].values,
                             sample.inputs.finished_inflow[idx].values, mdp);
    c.tag = Provenance::Estimated;
    c.gap = gap;
  }
  return win;
}

}  // namespace odflow
