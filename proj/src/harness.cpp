#include "odflow/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>

#include "json.hpp"

namespace odflow {

std::string TrainSchedule::to_json_text() const {
  nlohmann::json j;
  j["lr0"] = lr0;
  j["decay"] = decay;
  j["min_lr"] = min_lr;
  j["patience"] = patience;
  j["max_epochs"] = max_epochs;
  j["batch"] = batch;
  j["seed"] = seed;
  return j.dump();
}

TrainSchedule TrainSchedule::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainSchedule s;
  s.lr0 = j.value("lr0", s.lr0);
  s.decay = j.value("decay", s.decay);
  s.min_lr = j.value("min_lr", s.min_lr);
  s.patience = j.value("patience", s.patience);
  s.max_epochs = j.value("max_epochs", s.max_epochs);
  s.batch = j.value("batch", s.batch);
  s.seed = j.value("seed", s.seed);
  return s;
}

void MetricAccum::add(const Mat& pred, const Mat& truth) {
  require_same_shape(pred, truth, "metrics");
  for (size_t i = 0; i < pred.size(); ++i) {
    const double e = pred.d[i] - truth.d[i];
    abs += std::abs(e);
    sq += e * e;
    this->truth += truth.d[i];
  }
  count += static_cast<int64_t>(pred.size());
}

MetricAccum& MetricAccum::operator+=(const MetricAccum& o) {
  abs += o.abs;
  sq += o.sq;
  truth += o.truth;
  count += o.count;
  return *this;
}

Metrics MetricAccum::result() const {
  Metrics m;
  if (count == 0) return m;
  m.mae = abs / static_cast<double>(count);
  m.rmse = std::sqrt(sq / static_cast<double>(count));
  if (truth > 0.0) {
    m.wmape = abs / truth;
  } else {
    m.wmape = 0.0;
    m.wmape_defined = false;
  }
  return m;
}

Metrics metrics(const Mat& pred, const Mat& truth) {
  for (double v : truth.d)
    if (v < 0.0) throw InvalidConfig("metrics: truth must be nonnegative");
  MetricAccum acc;
  acc.add(pred, truth);
  return acc.result();
}

HistoricalAverage::HistoricalAverage(const SlotStore& store,
                                     const std::vector<int>& train_days) {
  if (train_days.empty()) throw NoHistory("historical average: no training days");
  const NetworkSpec& spec = store.spec();
  const int T = spec.slots_per_day();
  const int n = spec.station_count();
  slots_ = T;
  mean_.assign(2ull * T, Mat(n, n));
  std::array<int, 2> days_per_class{{0, 0}};
  for (int day : train_days) {
    const int wc = week_class_index(week_class(spec, day));
    ++days_per_class[wc];
    has_[wc] = true;
    for (int s = 0; s < T; ++s) {
      const Mat& m = store.full(SlotIndex{day, s});
      Mat& acc = mean_[static_cast<size_t>(wc) * T + s];
      for (size_t i = 0; i < m.size(); ++i) acc.d[i] += m.d[i];
    }
  }
  for (int wc = 0; wc < 2; ++wc) {
    if (days_per_class[wc] == 0) continue;
    const double inv = 1.0 / days_per_class[wc];
    for (int s = 0; s < T; ++s)
      for (double& v : mean_[static_cast<size_t>(wc) * T + s].d) v *= inv;
  }
}

const Mat& HistoricalAverage::predict(WeekClass w, int slot) const {
  const int wc = week_class_index(w);
  if (!has_[wc]) throw NoHistory("historical average: no days of this week class");
  if (slot < 0 || slot >= slots_) throw NoHistory("historical average: slot out of range");
  return mean_[static_cast<size_t>(wc) * slots_ + slot];
}

Pipeline build_pipeline(const std::vector<TripRecord>& trips, NetworkSpec spec,
                        const PipelineOptions& opt) {
  opt.comp.validate();
  Pipeline p;
  p.comp = opt.comp;
  p.store = std::make_unique<SlotStore>(trips, spec, opt.comp.window);
  p.spec = p.store->spec();
  p.split = split_days(p.spec.study_days);
  p.norm = fit_normalizer(*p.store, p.split.train_days);

  auto [ic, oc] = profile_counts(*p.store, p.split.train_days, opt.profile_class);
  if (ic.sum() == 0.0 && oc.sum() == 0.0) {
    // requested week class absent from the training days; pool both classes
    auto [iw, ow] = profile_counts(*p.store, p.split.train_days, WeekClass::Weekday);
    auto [ie, oe] = profile_counts(*p.store, p.split.train_days, WeekClass::Weekend);
    for (size_t i = 0; i < ic.size(); ++i) {
      ic.d[i] = iw.d[i] + ie.d[i];
      oc.d[i] = ow.d[i] + oe.d[i];
    }
  }
  const FlowProfiles profiles = build_profiles(ic, oc, opt.profile_epsilon);
  const FunctionalSim sim = kl_similarity(profiles);
  GeoGraph geo = build_geo_graph(p.spec, opt.radius_km);
  p.graphs = StaticGraphs{sim.si, sim.so, geo.kernel};
  p.geo_sigma = geo.sigma;
  p.geo_radius_km = geo.radius_km;
  p.profile_epsilon = opt.profile_epsilon;

  if (opt.comp.horizon > 1)
    p.mdr = std::make_unique<DelayedRatioTable>(trips, p.spec, p.split.train_days,
                                                opt.comp.horizon - 1);
  p.ha = std::make_unique<HistoricalAverage>(*p.store, p.split.train_days);
  p.train_idx = make_samples(p.spec, p.split.train_days, opt.comp.window);
  p.val_idx = make_samples(p.spec, p.split.val_days, opt.comp.window);
  p.test_idx = make_samples(p.spec, p.split.test_days, opt.comp.window);
  return p;
}

std::vector<TrainItem> estimator_items(const Pipeline& p, const std::vector<int>& days) {
  const int K = p.comp.estimator_window();
  const auto targets = make_samples(p.spec, days, K);
  std::vector<TrainItem> items(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) {
    const SampleIndex idx = targets[i];
    TrainItem& item = items[i];
    for (int k = K; k >= 1; --k) {
      const SlotIndex t{idx.day, idx.slot - k};
      item.window.push_back(&p.store->full(t));
      item.odt.push_back(&p.store->odt(t));
    }
    item.label = &p.store->full(SlotIndex{idx.day, idx.slot});
  }
  return items;
}

std::vector<TrainItem> predictor_items(const Pipeline& p, const std::vector<int>& days,
                                       const ModelParams* estimator, bool use_completion,
                                       MdpSource source) {
  const int P = p.comp.window;
  const auto targets = make_samples(p.spec, days, P);
  std::vector<TrainItem> items(targets.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < targets.size(); ++i) {
    try {
      const SampleIndex idx = targets[i];
      TrainItem& item = items[i];
      for (int k = P; k >= 1; --k)
        item.odt.push_back(&p.store->odt(SlotIndex{idx.day, idx.slot - k}));
      item.label = &p.store->full(SlotIndex{idx.day, idx.slot});
      if (use_completion) {
        const Sample sample =
            materialize_sample(*p.store, p.mdr.get(), idx, P, p.comp.horizon);
        CompletedWindow win =
            complete_window(sample, p.comp, estimator, p.graphs, p.norm, source);
        item.owned.reserve(P);
        for (auto& slot : win.slots) item.owned.push_back(std::move(slot.values));
        for (const Mat& m : item.owned) item.window.push_back(&m);
      } else {
        for (int k = P; k >= 1; --k)
          item.window.push_back(&p.store->finished(SlotIndex{idx.day, idx.slot - k}, k));
      }
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return items;
}

double train_batch(ModelParams& params, std::vector<Mat*>& tensors, ad::AdamState& state,
                   const std::vector<const TrainItem*>& batch, const StaticGraphs& graphs,
                   const Normalizer& norm, double lr) {
  const size_t nb = batch.size();
  const size_t np = tensors.size();
  std::vector<std::vector<Mat>> sample_grads(nb);
  std::vector<double> losses(nb, 0.0);
  bool non_finite = false;
  std::exception_ptr error;

#pragma omp parallel for schedule(dynamic)
  for (size_t b = 0; b < nb; ++b) {
    try {
      const TrainItem& item = *batch[b];
      ad::Tape tape;
      LeafMap leaves;
      ad::Var out = ahgcsp_forward(tape, params, graphs, norm, item.window, item.odt, &leaves);
      ad::Var pred_n = ad::affine(out, 1.0 / norm.std, -norm.mean / norm.std);
      ad::Var label_n = tape.constant(norm.apply(*item.label));
      ad::Var loss = ad::mse_loss(pred_n, label_n);
      tape.backward(loss);
      losses[b] = tape.value(loss)(0, 0);
      auto& grads = sample_grads[b];
      grads.reserve(np);
      for (Mat* t : tensors) {
        const ad::Var* leaf = nullptr;
        for (const auto& [ptr, var] : leaves)
          if (ptr == t) leaf = &var;
        if (leaf)
          grads.push_back(tape.grad(*leaf));
        else
          grads.emplace_back(t->rows, t->cols);
      }
    } catch (const NonFinite&) {
#pragma omp critical
      non_finite = true;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  if (non_finite) throw NonFiniteLoss("non-finite value during batch forward/backward");

  // fixed-order reduction keeps training bit-reproducible
  std::vector<Mat> grads(np);
  for (size_t i = 0; i < np; ++i) grads[i] = Mat(tensors[i]->rows, tensors[i]->cols);
  const double inv = 1.0 / static_cast<double>(nb);
  double loss_sum = 0.0;
  for (size_t b = 0; b < nb; ++b) {
    loss_sum += losses[b];
    for (size_t i = 0; i < np; ++i) {
      const Mat& g = sample_grads[b][i];
      Mat& acc = grads[i];
      for (size_t k = 0; k < acc.size(); ++k) acc.d[k] += g.d[k] * inv;
    }
  }
  const double mean_loss = loss_sum * inv;
  if (!std::isfinite(mean_loss)) throw NonFiniteLoss("non-finite batch loss");
  adam_step(tensors, grads, state, lr);
  return mean_loss;
}

double validation_mae(const ModelParams& params, const std::vector<TrainItem>& items,
                      const StaticGraphs& graphs, const Normalizer& norm) {
  std::vector<double> abs(items.size(), 0.0);
  std::vector<int64_t> cnt(items.size(), 0);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < items.size(); ++i) {
    try {
      const Mat pred = ahgcsp_predict(params, graphs, norm, items[i].window, items[i].odt);
      const Mat& label = *items[i].label;
      double a = 0.0;
      for (size_t k = 0; k < pred.size(); ++k) a += std::abs(pred.d[k] - label.d[k]);
      abs[i] = a;
      cnt[i] = static_cast<int64_t>(pred.size());
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  double total = 0.0;
  int64_t n = 0;
  for (size_t i = 0; i < items.size(); ++i) {
    total += abs[i];
    n += cnt[i];
  }
  return n > 0 ? total / static_cast<double>(n) : 0.0;
}

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void shuffle_indices(std::vector<size_t>& order, uint64_t seed, int epoch) {
  std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(epoch)));
  for (size_t i = order.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

TrainResult train_model(const Pipeline& p, const TrainOptions& opts) {
  ModelConfig cfg = opts.config;
  cfg.stations = p.spec.station_count();
  cfg.window =
      opts.kind == ModelKind::Estimator ? p.comp.estimator_window() : p.comp.window;
  cfg.validate();

  std::vector<TrainItem> train_items, val_items;
  if (opts.kind == ModelKind::Estimator) {
    train_items = estimator_items(p, p.split.train_days);
    val_items = estimator_items(p, p.split.val_days);
  } else {
    if (opts.use_completion && opts.mdp_source == MdpSource::Estimated &&
        opts.estimator == nullptr)
      throw Error("train_model: predictor with completion needs an estimator");
    train_items = predictor_items(p, p.split.train_days, opts.estimator, opts.use_completion,
                                  opts.mdp_source);
    val_items = predictor_items(p, p.split.val_days, opts.estimator, opts.use_completion,
                                opts.mdp_source);
  }
  if (train_items.empty() || val_items.empty())
    throw EmptyTrainingSet("training requires non-empty train and validation splits");

  const TrainSchedule& sched = opts.schedule;
  ModelParams params = make_params(cfg, sched.seed);
  std::vector<Mat*> tensors = params.tensors();
  ad::AdamState adam;
  ad::adam_init(adam, tensors);

  TrainResult res;
  res.best = params;
  res.best_val_mae = std::numeric_limits<double>::infinity();
  double lr = sched.lr0;
  int stall = 0;

  std::vector<size_t> order(train_items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < sched.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_indices(order, sched.seed, epoch);
    double loss_sum = 0.0;
    size_t seen = 0;
    bool aborted = false;
    for (size_t begin = 0; begin < order.size(); begin += sched.batch) {
      const size_t end = std::min(order.size(), begin + sched.batch);
      std::vector<const TrainItem*> batch;
      batch.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) batch.push_back(&train_items[order[i]]);
      try {
        const double loss = train_batch(params, tensors, adam, batch, p.graphs, p.norm, lr);
        loss_sum += loss * static_cast<double>(batch.size());
        seen += batch.size();
      } catch (const NonFiniteLoss&) {
        res.aborted_non_finite = true;
        aborted = true;
        break;
      }
    }
    if (aborted) break;

    const double train_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    const double val = validation_mae(params, val_items, p.graphs, p.norm);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(EpochLog{epoch, train_loss, val, lr, secs});

    if (val < res.best_val_mae) {
      res.best_val_mae = val;
      res.best_epoch = epoch;
      res.best = params;
      stall = 0;
    } else {
      ++stall;
      if (stall >= sched.patience) {
        if (lr <= sched.min_lr) break;  // decay demanded at the floor: stop
        lr = std::max(lr * sched.decay, sched.min_lr);
        stall = 0;
      }
    }
  }
  return res;
}

TrainResult train_completion_estimator(const Pipeline& p, const ModelConfig& config,
                                       const TrainSchedule& sched) {
  TrainOptions opts;
  opts.kind = ModelKind::Estimator;
  opts.config = config;
  opts.schedule = sched;
  return train_model(p, opts);
}

std::string TrainResult::log_json_text() const {
  nlohmann::json j;
  j["best_epoch"] = best_epoch;
  j["best_val_mae"] = best_val_mae;
  j["aborted_non_finite"] = aborted_non_finite;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : log)
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_mae", e.val_mae},
                           {"lr", e.lr},
                           {"seconds", e.seconds}});
  return j.dump(2);
}

namespace {

nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j;
  j["mae"] = m.mae;
  j["rmse"] = m.rmse;
  if (m.wmape_defined)
    j["wmape"] = m.wmape;
  else
    j["wmape"] = nullptr;
  return j;
}

nlohmann::json report_json(const MetricReport& r) {
  nlohmann::json j;
  j["aggregate"] = metrics_json(r.aggregate);
  j["per_slot"] = nlohmann::json::array();
  for (const auto& [slot, m] : r.per_slot) {
    nlohmann::json e = metrics_json(m);
    e["slot"] = slot;
    j["per_slot"].push_back(e);
  }
  return j;
}

struct EvalPartial {
  MetricAccum model, ha, est;
  std::vector<std::pair<int, MetricAccum>> model_slot, est_slot;
};

MetricReport fold_reports(const std::vector<const MetricAccum*>& aggs,
                          const std::vector<const std::vector<std::pair<int, MetricAccum>>*>&
                              slot_lists) {
  MetricReport rep;
  MetricAccum agg;
  std::map<int, MetricAccum> by_slot;
  for (const MetricAccum* a : aggs) agg += *a;
  for (const auto* list : slot_lists)
    for (const auto& [slot, acc] : *list) by_slot[slot] += acc;
  rep.aggregate = agg.result();
  for (const auto& [slot, acc] : by_slot) rep.per_slot.emplace_back(slot, acc.result());
  return rep;
}

}  // namespace

std::string metric_report_json(const MetricReport& r) { return report_json(r).dump(2); }

EvalOutput evaluate_model(const Pipeline& p, const ModelParams& predictor,
                          const ModelParams* estimator, const EvalOptions& opts,
                          const std::vector<SampleIndex>& samples) {
  if (opts.use_completion && opts.mdp_source == MdpSource::Estimated && estimator == nullptr)
    throw Error("evaluate_model: completion needs an estimator");
  std::vector<EvalPartial> partials(samples.size());
  std::exception_ptr error;

#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < samples.size(); ++i) {
    try {
      const SampleIndex idx = samples[i];
      EvalPartial& part = partials[i];
      const Mat& label = p.store->full(SlotIndex{idx.day, idx.slot});

      std::vector<const Mat*> window, odt;
      std::vector<Mat> owned;
      for (int k = p.comp.window; k >= 1; --k)
        odt.push_back(&p.store->odt(SlotIndex{idx.day, idx.slot - k}));
      if (opts.use_completion) {
        const Sample sample =
            materialize_sample(*p.store, p.mdr.get(), idx, p.comp.window, p.comp.horizon);
        CompletedWindow win =
            complete_window(sample, p.comp, estimator, p.graphs, p.norm, opts.mdp_source);
        for (auto& slot : win.slots) {
          if (slot.tag == Provenance::Estimated) {
            MetricAccum acc;
            acc.add(slot.values, p.store->full(slot.slot));
            part.est += acc;
            part.est_slot.emplace_back(slot.slot.slot, acc);
          }
          owned.push_back(std::move(slot.values));
        }
        for (const Mat& m : owned) window.push_back(&m);
      } else {
        for (int k = p.comp.window; k >= 1; --k)
          window.push_back(&p.store->finished(SlotIndex{idx.day, idx.slot - k}, k));
      }

      const Mat pred = ahgcsp_predict(predictor, p.graphs, p.norm, window, odt);
      MetricAccum macc;
      macc.add(pred, label);
      part.model += macc;
      part.model_slot.emplace_back(idx.slot, macc);

      const Mat& ha_pred = p.ha->predict(week_class(p.spec, idx.day), idx.slot);
      part.ha.add(ha_pred, label);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  EvalOutput out;
  {
    std::vector<const MetricAccum*> aggs;
    std::vector<const std::vector<std::pair<int, MetricAccum>>*> slots;
    for (const auto& part : partials) {
      aggs.push_back(&part.model);
      slots.push_back(&part.model_slot);
    }
    out.model = fold_reports(aggs, slots);
  }
  {
    std::vector<const MetricAccum*> aggs;
    for (const auto& part : partials) aggs.push_back(&part.ha);
    out.ha = fold_reports(aggs, {});
  }
  {
    std::vector<const MetricAccum*> aggs;
    std::vector<const std::vector<std::pair<int, MetricAccum>>*> slots;
    for (const auto& part : partials) {
      aggs.push_back(&part.est);
      slots.push_back(&part.est_slot);
    }
    out.estimator = fold_reports(aggs, slots);
  }
  return out;
}

std::string EvalOutput::to_json_text() const {
  nlohmann::json j;
  j["model"] = report_json(model);
  j["ha"] = report_json(ha);
  j["estimator"] = report_json(estimator);
  return j.dump(2);
}

ExperimentResult run_experiment(const Pipeline& p, const ExperimentOptions& opts) {
  ExperimentResult res;
  const bool needs_estimator =
      opts.use_completion && opts.mdp_source == MdpSource::Estimated;
  for (int r = 0; r < opts.repeats; ++r) {
    TrainSchedule sched = opts.schedule;
    sched.seed = opts.schedule.seed + static_cast<uint64_t>(r);

    ModelParams est_params;
    const ModelParams* est_ptr = nullptr;
    if (needs_estimator) {
      TrainResult est = train_completion_estimator(p, opts.est_config, sched);
      est_params = std::move(est.best);
      est_ptr = &est_params;
    }

    TrainOptions topts;
    topts.kind = ModelKind::Predictor;
    topts.config = opts.pred_config;
    topts.schedule = sched;
    topts.use_completion = opts.use_completion;
    topts.mdp_source = opts.mdp_source;
    topts.estimator = est_ptr;
    TrainResult pred = train_model(p, topts);

    EvalOptions eopts;
    eopts.use_completion = opts.use_completion;
    eopts.mdp_source = opts.mdp_source;
    res.runs.push_back(evaluate_model(p, pred.best, est_ptr, eopts, p.test_idx));
  }

  auto stats = [&](auto pick) {
    RepeatStats s;
    const int k = static_cast<int>(res.runs.size());
    if (k == 0) return s;
    double sum = 0.0;
    for (const auto& run : res.runs) sum += pick(run);
    s.mean = sum / k;
    if (k > 1) {
      double sq = 0.0;
      for (const auto& run : res.runs) {
        const double d = pick(run) - s.mean;
        sq += d * d;
      }
      s.se = std::sqrt(sq / (k - 1)) / std::sqrt(static_cast<double>(k));
    }
    return s;
  };
  res.mae = stats([](const EvalOutput& o) { return o.model.aggregate.mae; });
  res.rmse = stats([](const EvalOutput& o) { return o.model.aggregate.rmse; });
  res.wmape = stats([](const EvalOutput& o) { return o.model.aggregate.wmape; });
  return res;
}

std::string ExperimentResult::to_json_text() const {
  nlohmann::json j;
  j["repeats"] = runs.size();
  j["mae"] = {{"mean", mae.mean}, {"se", mae.se}};
  j["rmse"] = {{"mean", rmse.mean}, {"se", rmse.se}};
  j["wmape"] = {{"mean", wmape.mean}, {"se", wmape.se}};
  j["runs"] = nlohmann::json::array();
  for (const auto& run : runs) j["runs"].push_back(nlohmann::json::parse(run.to_json_text()));
  return j.dump(2);
}

}  // namespace odflow
