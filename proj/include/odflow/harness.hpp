#ifndef ODFLOW_HARNESS_HPP
#define ODFLOW_HARNESS_HPP

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "odflow/completion.hpp"
#include "odflow/graphs.hpp"
#include "odflow/ingest.hpp"
#include "odflow/model.hpp"

namespace odflow {

struct TrainSchedule {
  double lr0 = 0.01;
  double decay = 0.9;
  double min_lr = 2e-6;
  int patience = 15;   // epochs without validation improvement before a decay
  int max_epochs = 1000;
  int batch = 32;
  uint64_t seed = 7;

  std::string to_json_text() const;
  static TrainSchedule from_json_text(const std::string&);
};

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double wmape = 0.0;
  bool wmape_defined = true;  // false when the truth grand total is zero
};

Metrics metrics(const Mat& pred, const Mat& truth);

struct MetricAccum {
  double abs = 0.0, sq = 0.0, truth = 0.0;
  int64_t count = 0;
  void add(const Mat& pred, const Mat& truth);
  MetricAccum& operator+=(const MetricAccum&);
  Metrics result() const;
};

struct MetricReport {
  Metrics aggregate;
  std::vector<std::pair<int, Metrics>> per_slot;  // by target slot of day
};

// Per-pair mean over training days sharing the week class, per slot.
class HistoricalAverage {
 public:
  HistoricalAverage(const SlotStore&, const std::vector<int>& train_days);
  const Mat& predict(WeekClass, int slot) const;  // NoHistory

 private:
  int slots_ = 0;
  std::array<bool, 2> has_{{false, false}};
  std::vector<Mat> mean_;
};

enum class ModelKind { Estimator, Predictor };

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams best;
  int best_epoch = -1;
  double best_val_mae = 0.0;
  std::vector<EpochLog> log;
  bool aborted_non_finite = false;

  std::string log_json_text() const;
};

/*
 * Everything a run needs, assembled once per dataset: the slot store, the
 * chronological day split, train-fitted normalizer, static graphs, delayed
 * ratio tables and the historical-average baseline.
 */
struct Pipeline {
  NetworkSpec spec;
  CompletionConfig comp;
  std::unique_ptr<SlotStore> store;
  DataSplit split;
  Normalizer norm;
  StaticGraphs graphs;
  double geo_sigma = 0.0;
  double geo_radius_km = 0.0;
  double profile_epsilon = 1e-6;
  std::unique_ptr<DelayedRatioTable> mdr;
  std::unique_ptr<HistoricalAverage> ha;
  std::vector<SampleIndex> train_idx, val_idx, test_idx;  // predictor targets
};

struct PipelineOptions {
  CompletionConfig comp;
  double radius_km = 2.0;
  double profile_epsilon = 1e-6;
  WeekClass profile_class = WeekClass::Weekday;
};

Pipeline build_pipeline(const std::vector<TripRecord>&, NetworkSpec, const PipelineOptions&);

// One training example: a window of input matrices, the matching ODt
// matrices and the raw label. `owned` backs synthesized windows.
struct TrainItem {
  std::vector<const Mat*> window;
  std::vector<const Mat*> odt;
  const Mat* label = nullptr;
  std::vector<Mat> owned;
};

// Teacher-forced items for the estimator (true windows of length K).
std::vector<TrainItem> estimator_items(const Pipeline&, const std::vector<int>& days);
// Predictor items: completed windows (or raw finished windows when
// use_completion is off).
std::vector<TrainItem> predictor_items(const Pipeline&, const std::vector<int>& days,
                                       const ModelParams* estimator, bool use_completion,
                                       MdpSource);

// One mini-batch Adam step; returns the mean per-sample loss in normalized
// space. Per-sample tapes run in parallel, gradients reduce in sample order.
double train_batch(ModelParams&, std::vector<Mat*>& tensors, ad::AdamState&,
                   const std::vector<const TrainItem*>& batch, const StaticGraphs&,
                   const Normalizer&, double lr);

// Pooled raw-scale MAE of forward predictions against labels.
double validation_mae(const ModelParams&, const std::vector<TrainItem>&, const StaticGraphs&,
                      const Normalizer&);

struct TrainOptions {
  ModelKind kind = ModelKind::Predictor;
  ModelConfig config;
  TrainSchedule schedule;
  bool use_completion = true;           // predictor only
  MdpSource mdp_source = MdpSource::Estimated;
  const ModelParams* estimator = nullptr;
};

/*
 * Mini-batch Adam on the normalized-space MSE with plateau decay: after
 * `patience` consecutive epochs without a validation-MAE improvement the
 * learning rate is multiplied by the decay ratio (never below min_lr; a
 * decay demanded at the floor stops the run). The best-validation
 * parameters are returned. A non-finite loss aborts with the last good
 * checkpoint.
 */
TrainResult train_model(const Pipeline&, const TrainOptions&);

// The estimator's training entry point (teacher-forced, window K).
TrainResult train_completion_estimator(const Pipeline&, const ModelConfig&, const TrainSchedule&);

struct EvalOptions {
  bool use_completion = true;
  MdpSource mdp_source = MdpSource::Estimated;
};

struct EvalOutput {
  MetricReport model;
  MetricReport ha;
  MetricReport estimator;  // estimated slots vs post-hoc truth; empty without completion
  std::string to_json_text() const;
};

EvalOutput evaluate_model(const Pipeline&, const ModelParams& predictor,
                          const ModelParams* estimator, const EvalOptions&,
                          const std::vector<SampleIndex>& samples);

struct ExperimentOptions {
  ModelConfig pred_config;
  ModelConfig est_config;
  TrainSchedule schedule;
  int repeats = 1;
  bool use_completion = true;
  MdpSource mdp_source = MdpSource::Estimated;
};

struct RepeatStats {
  double mean = 0.0;
  double se = 0.0;  // sample std / sqrt(k)
};

struct ExperimentResult {
  std::vector<EvalOutput> runs;
  RepeatStats mae, rmse, wmape;
  std::string to_json_text() const;
};

// Trains and evaluates `repeats` times with seeds seed, seed+1, ... and
// reports mean and standard error per metric.
ExperimentResult run_experiment(const Pipeline&, const ExperimentOptions&);

std::string metric_report_json(const MetricReport&);

}  // namespace odflow

#endif
