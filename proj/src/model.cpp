#include "odflow/model.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace odflow {

void ModelConfig::validate() const {
  if (stations <= 0) throw InvalidConfig("model config: stations must be positive");
  if (window <= 0) throw InvalidConfig("model config: window must be positive");
  if (lstm_units <= 0 || att_units <= 0) throw InvalidConfig("model config: bad unit counts");
  if (use_gcn) {
    if (gcn_units <= 0) throw InvalidConfig("model config: bad gcn units");
    if (!use_geo && !use_functional && !use_dynamic)
      throw AllRelationsDisabled("graph convolution enabled with every relation removed");
  }
}

std::string ModelConfig::to_json_text() const {
  nlohmann::json j;
  j["stations"] = stations;
  j["window"] = window;
  j["gcn_units"] = gcn_units;
  j["lstm_units"] = lstm_units;
  j["att_units"] = att_units;
  j["use_geo"] = use_geo;
  j["use_functional"] = use_functional;
  j["use_dynamic"] = use_dynamic;
  j["use_gcn"] = use_gcn;
  return j.dump();
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.stations = j.value("stations", 0);
  c.window = j.value("window", 8);
  c.gcn_units = j.value("gcn_units", 128);
  c.lstm_units = j.value("lstm_units", 256);
  c.att_units = j.value("att_units", 16);
  c.use_geo = j.value("use_geo", true);
  c.use_functional = j.value("use_functional", true);
  c.use_dynamic = j.value("use_dynamic", true);
  c.use_gcn = j.value("use_gcn", true);
  return c;
}

std::vector<std::pair<std::string, Mat*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Mat*>> all = {
      {"att.key.w1", &f_key.w1},         {"att.key.b1", &f_key.b1},
      {"att.key.w2", &f_key.w2},         {"att.key.b2", &f_key.b2},
      {"att.key.w3", &f_key.w3},         {"att.key.b3", &f_key.b3},
      {"att.query.w1", &f_query.w1},     {"att.query.b1", &f_query.b1},
      {"att.query.w2", &f_query.w2},     {"att.query.b2", &f_query.b2},
      {"att.query.w3", &f_query.w3},     {"att.query.b3", &f_query.b3},
      {"att.key_bar.w1", &f_key_bar.w1}, {"att.key_bar.b1", &f_key_bar.b1},
      {"att.key_bar.w2", &f_key_bar.w2}, {"att.key_bar.b2", &f_key_bar.b2},
      {"att.key_bar.w3", &f_key_bar.w3}, {"att.key_bar.b3", &f_key_bar.b3},
      {"att.query_bar.w1", &f_query_bar.w1}, {"att.query_bar.b1", &f_query_bar.b1},
      {"att.query_bar.w2", &f_query_bar.w2}, {"att.query_bar.b2", &f_query_bar.b2},
      {"att.query_bar.w3", &f_query_bar.w3}, {"att.query_bar.b3", &f_query_bar.b3},
      {"att.w", &w_att},                 {"att.w_bar", &w_att_bar},
      {"fuse.w_f_mix", &w_f_mix},        {"fuse.w_d", &w_d},
      {"fuse.w_f", &w_f},                {"fuse.w_g", &w_g},
      {"gcn.w1", &gcn_w1},               {"gcn.b1", &gcn_b1},
      {"gcn.w2", &gcn_w2},               {"gcn.b2", &gcn_b2},
      {"lstm1.w", &lstm1.w},             {"lstm1.b", &lstm1.b},
      {"lstm2.w", &lstm2.w},             {"lstm2.b", &lstm2.b},
      {"head.w", &head_w},               {"head.b", &head_b},
  };
  std::vector<std::pair<std::string, Mat*>> present;
  for (auto& [name, mat] : all)
    if (!mat->empty()) present.emplace_back(name, mat);
  return present;
}

std::vector<std::pair<std::string, const Mat*>> ModelParams::named_tensors() const {
  auto mutable_view = const_cast<ModelParams*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Mat*>> out;
  out.reserve(mutable_view.size());
  for (auto& [name, mat] : mutable_view) out.emplace_back(name, mat);
  return out;
}

std::vector<Mat*> ModelParams::tensors() {
  std::vector<Mat*> out;
  for (auto& [name, mat] : named_tensors()) out.push_back(mat);
  return out;
}

ModelParams make_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  std::mt19937_64 rng(seed);
  const int n = config.stations;
  const int a = config.att_units;
  const int g = config.gcn_units;
  const int u = config.lstm_units;

  auto weight = [&rng](int r, int c) {
    Mat m(r, c);
    ad::glorot_fill(m, rng);
    return m;
  };
  auto stack = [&](int in) {
    MlpStack s;
    s.w1 = weight(in, a);
    s.b1 = Mat(1, a);
    s.w2 = weight(a, a);
    s.b2 = Mat(1, a);
    s.w3 = weight(a, a);
    s.b3 = Mat(1, a);
    return s;
  };

  const bool dyn = config.use_gcn && config.use_dynamic;
  const bool fun = config.use_gcn && config.use_functional;
  const bool geo = config.use_gcn && config.use_geo;
  if (dyn) {
    p.f_key = stack(n);
    p.f_query = stack(n);
    p.f_key_bar = stack(n);
    p.f_query_bar = stack(n);
    p.w_att = Mat::scalar(0.5);
    p.w_att_bar = Mat::scalar(0.5);
    p.w_d = Mat::scalar(1.0 / 3.0);
  }
  if (fun) {
    p.w_f_mix = Mat::scalar(0.5);
    p.w_f = Mat::scalar(1.0 / 3.0);
  }
  if (geo) p.w_g = Mat::scalar(1.0 / 3.0);
  if (config.use_gcn) {
    p.gcn_w1 = weight(n, g);
    p.gcn_b1 = Mat(1, g);
    p.gcn_w2 = weight(g, g);
    p.gcn_b2 = Mat(1, g);
  }
  const int lstm_in = config.use_gcn ? g : n;
  p.lstm1.w = weight(lstm_in + u, 4 * u);
  p.lstm1.b = Mat(1, 4 * u);
  p.lstm2.w = weight(u + u, 4 * u);
  p.lstm2.b = Mat(1, 4 * u);
  p.head_w = weight(u, n);
  p.head_b = Mat(1, n);
  return p;
}

namespace model {

ad::Var mlp3(ad::Tape& t, const MlpStack& s, ad::Var x) {
  using namespace ad;
  Var w1 = t.leaf(s.w1), b1 = t.leaf(s.b1);
  Var w2 = t.leaf(s.w2), b2 = t.leaf(s.b2);
  Var w3 = t.leaf(s.w3), b3 = t.leaf(s.b3);
  Var h = relu(add(matmul(x, w1), b1));
  h = relu(add(matmul(h, w2), b2));
  return relu(add(matmul(h, w3), b3));
}

}  // namespace model

namespace {

// Leaf registry so each parameter tensor becomes exactly one tape node per
// forward pass, no matter how many slots reuse it.
struct TapeCtx {
  ad::Tape& tape;
  const ModelParams& p;
  std::vector<std::pair<const Mat*, ad::Var>> cache;

  ad::Var leaf(const Mat& m) {
    for (auto& [ptr, var] : cache)
      if (ptr == &m) return var;
    ad::Var v = tape.leaf(m);
    cache.emplace_back(&m, v);
    return v;
  }

  ad::Var mlp3(const MlpStack& s, ad::Var x) {
    using namespace ad;
    Var h = relu(add(matmul(x, leaf(s.w1)), leaf(s.b1)));
    h = relu(add(matmul(h, leaf(s.w2)), leaf(s.b2)));
    return relu(add(matmul(h, leaf(s.w3)), leaf(s.b3)));
  }

  ad::Var dynamic_scores(ad::Var m_norm, ad::Var odt_norm) {
    using namespace ad;
    Var e = matmul(mlp3(p.f_key, m_norm), transpose(mlp3(p.f_query, m_norm)));
    Var e_bar =
        matmul(mlp3(p.f_key_bar, odt_norm), transpose(mlp3(p.f_query_bar, odt_norm)));
    return add(scale(leaf(p.w_att), row_softmax(e)),
               scale(leaf(p.w_att_bar), row_softmax(e_bar)));
  }

  ad::Var fuse(std::optional<ad::Var> dyn, std::optional<ad::Var> si, std::optional<ad::Var> so,
               std::optional<ad::Var> geo) {
    using namespace ad;
    std::optional<Var> acc;
    auto accumulate = [&](Var term) { acc = acc ? add(*acc, term) : term; };
    if (dyn) accumulate(scale(leaf(p.w_d), *dyn));
    if (si && so) {
      Var mix = leaf(p.w_f_mix);
      Var functional = add(scale(mix, *si), scale(affine(mix, -1.0, 1.0), *so));
      accumulate(scale(leaf(p.w_f), functional));
    }
    if (geo) accumulate(scale(leaf(p.w_g), *geo));
    if (!acc) throw AllRelationsDisabled("adjacency fusion with no enabled relation");
    return row_softmax(*acc);
  }

  ad::Var gcn(ad::Var h, ad::Var m_norm) {
    using namespace ad;
    Var y1 = relu(add(matmul(matmul(h, m_norm), leaf(p.gcn_w1)), leaf(p.gcn_b1)));
    return relu(add(matmul(matmul(h, y1), leaf(p.gcn_w2)), leaf(p.gcn_b2)));
  }

  ad::Var lstm_layer(const LstmLayer& layer, const std::vector<ad::Var>& xs, int units) {
    using namespace ad;
    const int rows = tape.value(xs.front()).rows;
    Var h = tape.constant(Mat(rows, units));
    Var c = tape.constant(Mat(rows, units));
    Var w = leaf(layer.w);
    Var b = leaf(layer.b);
    for (ad::Var x : xs) {
      Var z = concat_cols(x, h);
      Var gates = add(matmul(z, w), b);
      Var in_g = sigmoid(slice_cols(gates, 0, units));
      Var forget_g = sigmoid(slice_cols(gates, units, 2 * units));
      Var cell_g = ad::tanh(slice_cols(gates, 2 * units, 3 * units));
      Var out_g = sigmoid(slice_cols(gates, 3 * units, 4 * units));
      c = add(mul(forget_g, c), mul(in_g, cell_g));
      h = mul(out_g, ad::tanh(c));
    }
    return h;
  }

  ad::Var temporal_head(const std::vector<ad::Var>& seq) {
    using namespace ad;
    if (static_cast<int>(seq.size()) != p.config.window)
      throw WrongSequenceLength("sequence length " + std::to_string(seq.size()) +
                                ", model window " + std::to_string(p.config.window));
    const int u = p.config.lstm_units;
    std::vector<Var> level1;
    level1.reserve(seq.size());
    // layer 1 consumed step by step, then layer 2 over its hidden sequence
    const int rows = tape.value(seq.front()).rows;
    Var h1 = tape.constant(Mat(rows, u));
    Var c1 = tape.constant(Mat(rows, u));
    Var w1 = leaf(p.lstm1.w), b1 = leaf(p.lstm1.b);
    for (ad::Var x : seq) {
      Var z = concat_cols(x, h1);
      Var gates = add(matmul(z, w1), b1);
      Var in_g = sigmoid(slice_cols(gates, 0, u));
      Var forget_g = sigmoid(slice_cols(gates, u, 2 * u));
      Var cell_g = ad::tanh(slice_cols(gates, 2 * u, 3 * u));
      Var out_g = sigmoid(slice_cols(gates, 3 * u, 4 * u));
      c1 = add(mul(forget_g, c1), mul(in_g, cell_g));
      h1 = mul(out_g, ad::tanh(c1));
      level1.push_back(h1);
    }
    Var top = lstm_layer(p.lstm2, level1, u);
    return relu(add(matmul(top, leaf(p.head_w)), leaf(p.head_b)));
  }
};

}  // namespace

namespace model {

ad::Var dynamic_scores(ad::Tape& t, const ModelParams& p, ad::Var m_norm, ad::Var odt_norm) {
  TapeCtx ctx{t, p, {}};
  return ctx.dynamic_scores(m_norm, odt_norm);
}

ad::Var fuse_adjacency(ad::Tape& t, const ModelParams& p, std::optional<ad::Var> dynamic,
                       std::optional<ad::Var> si, std::optional<ad::Var> so,
                       std::optional<ad::Var> geo) {
  TapeCtx ctx{t, p, {}};
  return ctx.fuse(dynamic, si, so, geo);
}

ad::Var gcn_forward(ad::Tape& t, const ModelParams& p, ad::Var h, ad::Var m_norm) {
  TapeCtx ctx{t, p, {}};
  return ctx.gcn(h, m_norm);
}

ad::Var temporal_head(ad::Tape& t, const ModelParams& p, const std::vector<ad::Var>& seq) {
  TapeCtx ctx{t, p, {}};
  return ctx.temporal_head(seq);
}

}  // namespace model

ad::Var ahgcsp_forward(ad::Tape& tape, const ModelParams& p, const StaticGraphs& graphs,
                       const Normalizer& norm, const std::vector<const Mat*>& window_raw,
                       const std::vector<const Mat*>& odt_raw, LeafMap* leaves) {
  using namespace ad;
  const ModelConfig& cfg = p.config;
  if (static_cast<int>(window_raw.size()) != cfg.window ||
      static_cast<int>(odt_raw.size()) != cfg.window)
    throw WrongSequenceLength("forward expects " + std::to_string(cfg.window) + " slots, got " +
                              std::to_string(window_raw.size()) + "/" +
                              std::to_string(odt_raw.size()));
  TapeCtx ctx{tape, p, {}};
  const bool dyn = cfg.use_gcn && cfg.use_dynamic;
  const bool fun = cfg.use_gcn && cfg.use_functional;
  const bool geo = cfg.use_gcn && cfg.use_geo;
  std::optional<Var> si_v, so_v, geo_v;
  if (fun) {
    si_v = tape.constant(graphs.si);
    so_v = tape.constant(graphs.so);
  }
  if (geo) geo_v = tape.constant(graphs.geo_kernel);

  std::vector<Var> seq;
  seq.reserve(cfg.window);
  for (int s = 0; s < cfg.window; ++s) {
    Var m_norm = tape.constant(norm.apply(*window_raw[s]));
    if (!cfg.use_gcn) {
      seq.push_back(m_norm);
      continue;
    }
    std::optional<Var> dyn_v;
    if (dyn) {
      Var odt_norm = tape.constant(norm.apply(*odt_raw[s]));
      dyn_v = ctx.dynamic_scores(m_norm, odt_norm);
    }
    Var h = ctx.fuse(dyn_v, si_v, so_v, geo_v);
    seq.push_back(ctx.gcn(h, m_norm));
  }
  Var out = ctx.temporal_head(seq);
  if (leaves) *leaves = std::move(ctx.cache);
  return out;
}

Mat ahgcsp_predict(const ModelParams& p, const StaticGraphs& graphs, const Normalizer& norm,
                   const std::vector<const Mat*>& window_raw,
                   const std::vector<const Mat*>& odt_raw) {
  ad::Tape tape;
  ad::Var out = ahgcsp_forward(tape, p, graphs, norm, window_raw, odt_raw);
  return tape.value(out);
}

namespace {
constexpr char kCkptMagic[8] = {'O', 'D', 'F', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& p,
                     const Normalizer& norm, const std::string& kind) {
  nlohmann::json manifest;
  manifest["kind"] = kind;
  manifest["config"] = nlohmann::json::parse(p.config.to_json_text());
  manifest["normalizer"] = {{"mean", norm.mean}, {"std", norm.std}};
  manifest["params"] = nlohmann::json::array();
  uint64_t offset = 0;
  auto named = p.named_tensors();
  for (const auto& [name, mat] : named) {
    manifest["params"].push_back(
        {{"name", name}, {"rows", mat->rows}, {"cols", mat->cols}, {"offset", offset}});
    offset += mat->size();
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCkptMagic, 8);
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, mat] : named)
    out.write(reinterpret_cast<const char*>(mat->data()),
              static_cast<std::streamsize>(mat->size() * sizeof(double)));
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw IoError("bad checkpoint header in " + path.string());
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint manifest in " + path.string());
  nlohmann::json manifest = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.kind = manifest.at("kind").get<std::string>();
  ck.norm.mean = manifest.at("normalizer").at("mean").get<double>();
  ck.norm.std = manifest.at("normalizer").at("std").get<double>();
  ModelConfig cfg = ModelConfig::from_json_text(manifest.at("config").dump());
  ck.params = make_params(cfg, 0);

  std::vector<double> payload;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    payload.resize(rest.size() / sizeof(double));
    std::memcpy(payload.data(), rest.data(), payload.size() * sizeof(double));
  }

  auto named = ck.params.named_tensors();
  size_t matched = 0;
  for (const auto& entry : manifest.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const int rows = entry.at("rows").get<int>();
    const int cols = entry.at("cols").get<int>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    Mat* target = nullptr;
    for (auto& [n2, mat] : named)
      if (n2 == name) target = mat;
    if (!target) throw IoError("checkpoint has unknown parameter '" + name + "'");
    if (target->rows != rows || target->cols != cols)
      throw IoError("checkpoint shape mismatch for '" + name + "'");
    if (offset + target->size() > payload.size())
      throw IoError("checkpoint payload too short for '" + name + "'");
    std::memcpy(target->data(), payload.data() + offset, target->size() * sizeof(double));
    ++matched;
  }
  if (matched != named.size())
    throw IoError("checkpoint is missing parameters for this configuration");
  return ck;
}

}  // namespace odflow
