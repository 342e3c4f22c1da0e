// odflow: synthetic AFC data, ingestion caches, graph construction,
// training, completion and evaluation from one binary. Every subcommand
// prints a JSON report to stdout and returns 0 only on full success.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "odflow/harness.hpp"
#include "odflow/mat_io.hpp"
#include "odflow/synth.hpp"
#include "odflow/threads.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace odflow;

namespace {

struct DataArgs {
  std::string trips, spec;
};

void add_data_args(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--trips", d.trips, "AFC trips CSV")->required();
  cmd->add_option("--spec", d.spec, "network spec JSON")->required();
}

ParseResult load_data(const DataArgs& d) {
  NetworkSpec spec = NetworkSpec::from_json_file(d.trips.empty() ? "" : d.spec);
  return parse_trips_file(d.trips, std::move(spec));
}

SlotIndex parse_slot(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos)
    throw InvalidConfig("expected DAY:SLOT, got '" + s + "'");
  return SlotIndex{std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
}

struct ModelFlags {
  std::string config_file;
  int gcn_units = 16;
  int lstm_units = 32;
  int att_units = 16;
  bool no_geo = false, no_functional = false, no_dynamic = false, no_gcn = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "model config JSON file");
    cmd->add_option("--gcn-units", gcn_units, "graph convolution width");
    cmd->add_option("--lstm-units", lstm_units, "LSTM hidden width");
    cmd->add_option("--att-units", att_units, "attention projection width");
    cmd->add_flag("--no-geo", no_geo, "drop the geographic relation");
    cmd->add_flag("--no-functional", no_functional, "drop the flow-similarity relation");
    cmd->add_flag("--no-dynamic", no_dynamic, "drop the attention relation");
    cmd->add_flag("--no-gcn", no_gcn, "bypass graph convolution entirely");
  }

  ModelConfig resolve() const {
    ModelConfig c;
    if (!config_file.empty())
      c = ModelConfig::from_json_text(io::read_text(config_file));
    else {
      c.gcn_units = gcn_units;
      c.lstm_units = lstm_units;
      c.att_units = att_units;
    }
    if (no_geo) c.use_geo = false;
    if (no_functional) c.use_functional = false;
    if (no_dynamic) c.use_dynamic = false;
    if (no_gcn) c.use_gcn = false;
    return c;
  }
};

struct ScheduleFlags {
  std::string schedule_file;
  uint64_t seed = 7;
  int max_epochs = -1;
  int patience = -1;
  bool seed_set = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--schedule", schedule_file, "training schedule JSON file");
    cmd->add_option("--seed", seed, "run seed")->each([this](const std::string&) {
      seed_set = true;
    });
    cmd->add_option("--max-epochs", max_epochs, "cap on training epochs");
    cmd->add_option("--patience", patience, "epochs without improvement before decay");
  }

  TrainSchedule resolve() const {
    TrainSchedule s;
    if (!schedule_file.empty()) s = TrainSchedule::from_json_text(io::read_text(schedule_file));
    if (seed_set) s.seed = seed;
    if (max_epochs > 0) s.max_epochs = max_epochs;
    if (patience > 0) s.patience = patience;
    return s;
  }
};

struct PipelineFlags {
  double radius_km = 2.0;
  double epsilon = 1e-6;
  int window = 8;
  int horizon = 5;
  std::string week_attr = "weekday";

  void add(CLI::App* cmd) {
    cmd->add_option("--radius-km", radius_km, "geographic neighbor radius");
    cmd->add_option("--epsilon", epsilon, "profile smoothing");
    cmd->add_option("--window", window, "input slots P");
    cmd->add_option("--horizon", horizon, "completeness horizon Q");
    cmd->add_option("--week-attr", week_attr, "profile week class: weekday|weekend")
        ->check(CLI::IsMember({"weekday", "weekend"}));
  }

  PipelineOptions resolve() const {
    PipelineOptions o;
    o.comp.window = window;
    o.comp.horizon = horizon;
    o.radius_km = radius_km;
    o.profile_epsilon = epsilon;
    o.profile_class = week_attr == "weekend" ? WeekClass::Weekend : WeekClass::Weekday;
    return o;
  }
};

MdpSource parse_mdp_source(const std::string& s) {
  if (s == "weekly") return MdpSource::Weekly;
  return MdpSource::Estimated;
}

int cmd_synth(const std::string& config_file, uint64_t seed, int stations, int days,
              const std::string& out_dir, bool dump_config) {
  synth::SynthConfig cfg;
  if (!config_file.empty())
    cfg = synth::SynthConfig::from_json_text(io::read_text(config_file));
  else
    cfg = synth::default_config(seed, stations, days);

  fs::create_directories(out_dir);
  synth::SynthResult res = synth::generate(cfg);
  {
    std::ofstream trips(fs::path(out_dir) / "trips.csv", std::ios::binary);
    write_trips_csv(trips, res.trips, res.spec);
  }
  io::write_text(fs::path(out_dir) / "network.json", res.spec.to_json_text());
  if (dump_config || config_file.empty())
    io::write_text(fs::path(out_dir) / "synth_config.json", cfg.to_json_text());

  json rep;
  rep["trips"] = res.trips.size();
  rep["stations"] = res.spec.station_count();
  rep["days"] = res.spec.study_days;
  rep["slots_per_day"] = res.spec.slots_per_day();
  rep["out"] = out_dir;
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int cmd_ingest(const DataArgs& data, const std::string& out_dir, int window) {
  NetworkSpec spec = NetworkSpec::from_json_file(data.spec);
  ParseResult parsed = parse_trips_file(data.trips, std::move(spec));
  SlotStore store(parsed.trips, parsed.spec, window);

  fs::create_directories(out_dir);
  const int T = parsed.spec.slots_per_day();
  char name[64];
  for (int day = 0; day < parsed.spec.study_days; ++day)
    for (int s = 0; s < T; ++s) {
      std::snprintf(name, sizeof name, "full_d%03d_s%02d.mat", day, s);
      io::write_mat(fs::path(out_dir) / name, store.full(SlotIndex{day, s}));
      std::snprintf(name, sizeof name, "odt_d%03d_s%02d.mat", day, s);
      io::write_mat(fs::path(out_dir) / name, store.odt(SlotIndex{day, s}));
    }
  io::write_text(fs::path(out_dir) / "drop_report.json", parsed.report.to_json_text());
  io::write_text(fs::path(out_dir) / "network.json", parsed.spec.to_json_text());

  json rep = json::parse(parsed.report.to_json_text());
  if (!parsed.trips.empty()) {
    const TravelTimeStats stats = TravelTimeStats::from_trips(parsed.trips, parsed.spec);
    json st;
    st["min_s"] = stats.min_s;
    st["max_s"] = stats.max_s;
    st["p50_s"] = stats.quantile(0.5);
    st["p90_s"] = stats.quantile(0.9);
    st["p99_s"] = stats.quantile(0.99);
    rep["travel_time"] = st;
    io::write_text(fs::path(out_dir) / "travel_stats.json", st.dump(2));
  }
  rep["days"] = parsed.spec.study_days;
  rep["out"] = out_dir;
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int cmd_graphs(const DataArgs& data, const std::string& out_dir, double radius_km,
               double epsilon, const std::string& week_attr, const std::string& split) {
  NetworkSpec spec = NetworkSpec::from_json_file(data.spec);
  ParseResult parsed = parse_trips_file(data.trips, std::move(spec));
  SlotStore store(parsed.trips, parsed.spec, 1);

  std::vector<int> days;
  if (split == "train")
    days = split_days(parsed.spec.study_days).train_days;
  else
    for (int d = 0; d < parsed.spec.study_days; ++d) days.push_back(d);

  const WeekClass wc = week_attr == "weekend" ? WeekClass::Weekend : WeekClass::Weekday;
  auto [ic, oc] = profile_counts(store, days, wc);
  const FlowProfiles profiles = build_profiles(ic, oc, epsilon);
  const FunctionalSim sim = kl_similarity(profiles);
  const GeoGraph geo = build_geo_graph(parsed.spec, radius_km);

  fs::create_directories(out_dir);
  io::write_mat(fs::path(out_dir) / "geo_kernel.mat", geo.kernel);
  io::write_mat(fs::path(out_dir) / "geo_dist.mat", geo.dist);
  io::write_mat(fs::path(out_dir) / "si.mat", sim.si);
  io::write_mat(fs::path(out_dir) / "so.mat", sim.so);

  json side;
  side["radius_km"] = radius_km;
  side["sigma"] = geo.sigma;
  side["epsilon"] = epsilon;
  side["week_attribute"] = week_attr;
  side["split"] = split;
  io::write_text(fs::path(out_dir) / "graphs.json", side.dump(2));
  std::cout << side.dump(2) << "\n";
  return 0;
}

int cmd_train(const DataArgs& data, const std::string& kind, const std::string& out_dir,
              const ModelFlags& mf, const ScheduleFlags& sf, const PipelineFlags& pf,
              const std::string& est_ckpt, bool no_completion,
              const std::string& mdp_source) {
  ParseResult parsed = load_data(data);
  Pipeline pipe = build_pipeline(parsed.trips, parsed.spec, pf.resolve());

  TrainOptions opts;
  opts.kind = kind == "estimator" ? ModelKind::Estimator : ModelKind::Predictor;
  opts.config = mf.resolve();
  opts.schedule = sf.resolve();
  opts.use_completion = !no_completion;
  opts.mdp_source = parse_mdp_source(mdp_source);

  Checkpoint est;
  if (opts.kind == ModelKind::Predictor && opts.use_completion &&
      opts.mdp_source == MdpSource::Estimated) {
    if (est_ckpt.empty())
      throw InvalidConfig("training the predictor with completion requires --est");
    est = load_checkpoint(est_ckpt);
    opts.estimator = &est.params;
  }

  TrainResult res = train_model(pipe, opts);

  fs::create_directories(out_dir);
  const fs::path ckpt = fs::path(out_dir) / (kind + ".ckpt");
  save_checkpoint(ckpt, res.best, pipe.norm, kind);
  io::write_text(fs::path(out_dir) / (kind + "_train_log.json"), res.log_json_text());

  json rep;
  rep["kind"] = kind;
  rep["checkpoint"] = ckpt.string();
  rep["epochs_run"] = res.log.size();
  rep["best_epoch"] = res.best_epoch;
  rep["best_val_mae"] = res.best_val_mae;
  rep["aborted_non_finite"] = res.aborted_non_finite;
  std::cout << rep.dump(2) << "\n";
  return res.aborted_non_finite ? 1 : 0;
}

int cmd_complete(const DataArgs& data, const std::string& ckpt_file, const std::string& slot_arg,
                 const std::string& out_dir, const PipelineFlags& pf,
                 const std::string& mdp_source) {
  ParseResult parsed = load_data(data);
  Pipeline pipe = build_pipeline(parsed.trips, parsed.spec, pf.resolve());
  const SlotIndex target = parse_slot(slot_arg);
  const MdpSource source = parse_mdp_source(mdp_source);

  Checkpoint est;
  const ModelParams* est_ptr = nullptr;
  if (source == MdpSource::Estimated) {
    est = load_checkpoint(ckpt_file);
    est_ptr = &est.params;
  }

  const Sample sample = materialize_sample(*pipe.store, pipe.mdr.get(),
                                           SampleIndex{target.day, target.slot},
                                           pipe.comp.window, pipe.comp.horizon);
  CompletedWindow win = complete_window(sample, pipe.comp, est_ptr, pipe.graphs, pipe.norm, source);

  fs::create_directories(out_dir);
  json rep;
  rep["target"] = {{"day", target.day}, {"slot", target.slot}};
  rep["slots"] = json::array();
  char name[64];
  for (const auto& slot : win.slots) {
    std::snprintf(name, sizeof name, "completed_d%03d_s%02d.mat", slot.slot.day,
                  slot.slot.slot);
    io::write_mat(fs::path(out_dir) / name, slot.values);
    rep["slots"].push_back({{"day", slot.slot.day},
                            {"slot", slot.slot.slot},
                            {"gap", slot.gap},
                            {"provenance", to_string(slot.tag)},
                            {"total", slot.values.sum()},
                            {"file", name}});
  }
  io::write_text(fs::path(out_dir) / "completed_window.json", rep.dump(2));
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int cmd_predict(const DataArgs& data, const std::string& est_file, const std::string& pred_file,
                const std::string& slot_arg, const std::string& out_dir,
                const PipelineFlags& pf, bool no_completion, const std::string& mdp_source) {
  ParseResult parsed = load_data(data);
  Pipeline pipe = build_pipeline(parsed.trips, parsed.spec, pf.resolve());
  const SlotIndex target = parse_slot(slot_arg);
  const MdpSource source = parse_mdp_source(mdp_source);

  Checkpoint pred_ck = load_checkpoint(pred_file);
  Checkpoint est_ck;
  const ModelParams* est_ptr = nullptr;
  if (!no_completion && source == MdpSource::Estimated) {
    est_ck = load_checkpoint(est_file);
    est_ptr = &est_ck.params;
  }

  std::vector<const Mat*> window, odt;
  std::vector<Mat> owned;
  for (int k = pipe.comp.window; k >= 1; --k)
    odt.push_back(&pipe.store->odt(SlotIndex{target.day, target.slot - k}));
  if (!no_completion) {
    const Sample sample = materialize_sample(*pipe.store, pipe.mdr.get(),
                                             SampleIndex{target.day, target.slot},
                                             pipe.comp.window, pipe.comp.horizon);
    CompletedWindow win =
        complete_window(sample, pipe.comp, est_ptr, pipe.graphs, pipe.norm, source);
    for (auto& slot : win.slots) owned.push_back(std::move(slot.values));
    for (const Mat& m : owned) window.push_back(&m);
  } else {
    for (int k = pipe.comp.window; k >= 1; --k)
      window.push_back(&pipe.store->finished(SlotIndex{target.day, target.slot - k}, k));
  }

  const Mat prediction = ahgcsp_predict(pred_ck.params, pipe.graphs, pipe.norm, window, odt);

  fs::create_directories(out_dir);
  char name[64];
  std::snprintf(name, sizeof name, "prediction_d%03d_s%02d.mat", target.day, target.slot);
  io::write_mat(fs::path(out_dir) / name, prediction);

  json rep;
  rep["target"] = {{"day", target.day}, {"slot", target.slot}};
  rep["file"] = name;
  rep["predicted_total"] = prediction.sum();
  const Mat& truth = pipe.store->full(target);
  if (truth.sum() > 0.0 || prediction.sum() == 0.0) {
    const Metrics m = metrics(prediction, truth);
    rep["vs_truth"] = {{"mae", m.mae}, {"rmse", m.rmse}};
    if (m.wmape_defined) rep["vs_truth"]["wmape"] = m.wmape;
  }
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int cmd_evaluate(const DataArgs& data, const std::string& out_dir, const ModelFlags& mf,
                 const ModelFlags& est_mf, const ScheduleFlags& sf, const PipelineFlags& pf,
                 int repeats, bool no_completion, const std::string& mdp_source) {
  ParseResult parsed = load_data(data);
  Pipeline pipe = build_pipeline(parsed.trips, parsed.spec, pf.resolve());

  ExperimentOptions opts;
  opts.pred_config = mf.resolve();
  opts.est_config = est_mf.config_file.empty() ? mf.resolve() : est_mf.resolve();
  // ablations apply to the predictor only; the estimator keeps every relation
  opts.est_config.use_geo = true;
  opts.est_config.use_functional = true;
  opts.est_config.use_dynamic = true;
  opts.est_config.use_gcn = true;
  opts.schedule = sf.resolve();
  opts.repeats = repeats;
  opts.use_completion = !no_completion;
  opts.mdp_source = parse_mdp_source(mdp_source);

  const ExperimentResult res = run_experiment(pipe, opts);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    io::write_text(fs::path(out_dir) / "evaluation.json", res.to_json_text());
  }
  std::cout << res.to_json_text() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"metro OD flow completion and prediction toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic AFC dataset");
  std::string synth_config, synth_out;
  uint64_t synth_seed = 1;
  int synth_stations = 10, synth_days = 30;
  bool synth_dump = false;
  synth_cmd->add_option("--config", synth_config, "generator config JSON");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--stations", synth_stations, "station count (built-in config)");
  synth_cmd->add_option("--days", synth_days, "study days (built-in config)");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_flag("--dump-config", synth_dump, "also write the resolved config");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "parse trips and cache per-slot tensors");
  DataArgs ingest_data;
  std::string ingest_out;
  int ingest_window = 8;
  add_data_args(ingest_cmd, ingest_data);
  ingest_cmd->add_option("--out", ingest_out, "output directory")->required();
  ingest_cmd->add_option("--window", ingest_window, "max finished-OD gap to cache");

  // graphs
  auto* graphs_cmd = app.add_subcommand("graphs", "build the static relation matrices");
  DataArgs graphs_data;
  std::string graphs_out, graphs_week = "weekday", graphs_split = "train";
  double graphs_radius = 2.0, graphs_eps = 1e-6;
  add_data_args(graphs_cmd, graphs_data);
  graphs_cmd->add_option("--out", graphs_out, "output directory")->required();
  graphs_cmd->add_option("--radius-km", graphs_radius, "neighbor radius in km");
  graphs_cmd->add_option("--epsilon", graphs_eps, "profile smoothing");
  graphs_cmd->add_option("--week-attr", graphs_week, "weekday|weekend")
      ->check(CLI::IsMember({"weekday", "weekend"}));
  graphs_cmd->add_option("--split", graphs_split, "train|all history days")
      ->check(CLI::IsMember({"train", "all"}));

  // train
  auto* train_cmd = app.add_subcommand("train", "train the estimator or the predictor");
  DataArgs train_data;
  std::string train_kind, train_out, train_est, train_mdp = "estimated";
  bool train_nocomp = false;
  ModelFlags train_mf;
  ScheduleFlags train_sf;
  PipelineFlags train_pf;
  add_data_args(train_cmd, train_data);
  train_cmd->add_option("--kind", train_kind, "estimator|predictor")
      ->required()
      ->check(CLI::IsMember({"estimator", "predictor"}));
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--est", train_est, "estimator checkpoint (predictor training)");
  train_cmd->add_flag("--no-completion", train_nocomp, "feed raw finished windows");
  train_cmd->add_option("--mdp-source", train_mdp, "estimated|weekly")
      ->check(CLI::IsMember({"estimated", "weekly"}));
  train_mf.add(train_cmd);
  train_sf.add(train_cmd);
  train_pf.add(train_cmd);

  // complete
  auto* complete_cmd = app.add_subcommand("complete", "complete the window before a slot");
  DataArgs complete_data;
  std::string complete_ckpt, complete_slot_arg, complete_out, complete_mdp = "estimated";
  PipelineFlags complete_pf;
  add_data_args(complete_cmd, complete_data);
  complete_cmd->add_option("--checkpoint", complete_ckpt, "estimator checkpoint");
  complete_cmd->add_option("--slot", complete_slot_arg, "target DAY:SLOT")->required();
  complete_cmd->add_option("--out", complete_out, "output directory")->required();
  complete_cmd->add_option("--mdp-source", complete_mdp, "estimated|weekly")
      ->check(CLI::IsMember({"estimated", "weekly"}));
  complete_pf.add(complete_cmd);

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "predict the OD matrix at a slot");
  DataArgs predict_data;
  std::string predict_est, predict_pred, predict_slot_arg, predict_out,
      predict_mdp = "estimated";
  bool predict_nocomp = false;
  PipelineFlags predict_pf;
  add_data_args(predict_cmd, predict_data);
  predict_cmd->add_option("--est", predict_est, "estimator checkpoint");
  predict_cmd->add_option("--pred", predict_pred, "predictor checkpoint")->required();
  predict_cmd->add_option("--slot", predict_slot_arg, "target DAY:SLOT")->required();
  predict_cmd->add_option("--out", predict_out, "output directory")->required();
  predict_cmd->add_flag("--no-completion", predict_nocomp, "feed raw finished windows");
  predict_cmd->add_option("--mdp-source", predict_mdp, "estimated|weekly")
      ->check(CLI::IsMember({"estimated", "weekly"}));
  predict_pf.add(predict_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "train and evaluate, optionally repeated");
  DataArgs eval_data;
  std::string eval_out, eval_mdp = "estimated";
  int eval_repeats = 1;
  bool eval_nocomp = false;
  ModelFlags eval_mf, eval_est_mf;
  ScheduleFlags eval_sf;
  PipelineFlags eval_pf;
  add_data_args(eval_cmd, eval_data);
  eval_cmd->add_option("--out", eval_out, "output directory");
  eval_cmd->add_option("--repeats", eval_repeats, "training repetitions");
  eval_cmd->add_flag("--no-completion", eval_nocomp, "ablate the completion stage");
  eval_cmd->add_option("--mdp-source", eval_mdp, "estimated|weekly")
      ->check(CLI::IsMember({"estimated", "weekly"}));
  eval_cmd->add_option("--est-config", eval_est_mf.config_file, "estimator config JSON");
  eval_mf.add(eval_cmd);
  eval_sf.add(eval_cmd);
  eval_pf.add(eval_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed())
      return cmd_synth(synth_config, synth_seed, synth_stations, synth_days, synth_out,
                       synth_dump);
    if (ingest_cmd->parsed()) return cmd_ingest(ingest_data, ingest_out, ingest_window);
    if (graphs_cmd->parsed())
      return cmd_graphs(graphs_data, graphs_out, graphs_radius, graphs_eps, graphs_week,
                        graphs_split);
    if (train_cmd->parsed())
      return cmd_train(train_data, train_kind, train_out, train_mf, train_sf, train_pf,
                       train_est, train_nocomp, train_mdp);
    if (complete_cmd->parsed())
      return cmd_complete(complete_data, complete_ckpt, complete_slot_arg, complete_out,
                          complete_pf, complete_mdp);
    if (predict_cmd->parsed())
      return cmd_predict(predict_data, predict_est, predict_pred, predict_slot_arg, predict_out,
                         predict_pf, predict_nocomp, predict_mdp);
    if (eval_cmd->parsed())
      return cmd_evaluate(eval_data, eval_out, eval_mf, eval_est_mf, eval_sf, eval_pf,
                          eval_repeats, eval_nocomp, eval_mdp);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 1;
}
