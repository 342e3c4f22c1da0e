#ifndef ODFLOW_MODEL_HPP
#define ODFLOW_MODEL_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "odflow/autodiff.hpp"
#include "odflow/core.hpp"

namespace odflow {

struct ModelConfig {
  int stations = 0;
  int window = 8;      // input sequence length
  int gcn_units = 128;
  int lstm_units = 256;
  int att_units = 16;
  bool use_geo = true;
  bool use_functional = true;
  bool use_dynamic = true;
  bool use_gcn = true;

  void validate() const;  // AllRelationsDisabled when use_gcn has no relation
  std::string to_json_text() const;
  static ModelConfig from_json_text(const std::string&);
};

// Three fully connected layers with ReLU, widths [att, att, att].
struct MlpStack {
  Mat w1, b1, w2, b2, w3, b3;
};

// Fused gate weights, order [input, forget, cell, output]: w is (in+U) x 4U.
struct LstmLayer {
  Mat w, b;
};

/*
 * Every trainable tensor of the predictor. Blocks switched off by the
 * config are left empty and skipped by named_tensors(), so checkpoints,
 * Adam state and gradient checks always cover exactly the live parameters.
 */
struct ModelParams {
  ModelConfig config;
  MlpStack f_key, f_query, f_key_bar, f_query_bar;
  Mat w_att, w_att_bar;  // weights of the two attention branches
  Mat w_f_mix;           // inflow/outflow similarity mix
  Mat w_d, w_f, w_g;     // relation fusion weights
  Mat gcn_w1, gcn_b1, gcn_w2, gcn_b2;
  LstmLayer lstm1, lstm2;
  Mat head_w, head_b;

  std::vector<std::pair<std::string, Mat*>> named_tensors();
  std::vector<std::pair<std::string, const Mat*>> named_tensors() const;
  std::vector<Mat*> tensors();
};

// Glorot-uniform matrices, zero biases, symmetric scalar starts
// (attention 0.5/0.5, fusion 1/3 each, similarity mix 0.5).
ModelParams make_params(const ModelConfig&, uint64_t seed);

struct StaticGraphs {
  Mat si, so, geo_kernel;
};

namespace model {

ad::Var mlp3(ad::Tape&, const MlpStack&, ad::Var x);

// Pairwise attention over OD rows and ODt rows: e_ij = key(row i) . query(row j),
// each branch row-softmaxed and mixed by its trainable weight.
ad::Var dynamic_scores(ad::Tape&, const ModelParams&, ad::Var m_norm, ad::Var odt_norm);

// Weighted sum of the enabled relations, then row softmax.
ad::Var fuse_adjacency(ad::Tape&, const ModelParams&, std::optional<ad::Var> dynamic,
                       std::optional<ad::Var> si, std::optional<ad::Var> so,
                       std::optional<ad::Var> geo);

// Two graph convolution layers: ReLU(H (H M W1 + b1 pipeline) ...), N x G out.
ad::Var gcn_forward(ad::Tape&, const ModelParams&, ad::Var h, ad::Var m_norm);

// Two-layer LSTM over the slot sequence (stations as the batch), final
// hidden state through a ReLU head: nonnegative N x N output on the raw
// count scale.
ad::Var temporal_head(ad::Tape&, const ModelParams&, const std::vector<ad::Var>& seq);

}  // namespace model

// Parameter tensor -> its leaf node in one forward pass.
using LeafMap = std::vector<std::pair<const Mat*, ad::Var>>;

/*
 * Full forward pass. Takes raw-count window and ODt matrices (oldest to
 * newest), z-scores them internally, and returns the raw-scale nonnegative
 * prediction. Differentiable end to end; deterministic. When leaves is
 * given it receives the parameter leaf registry for gradient reads.
 */
ad::Var ahgcsp_forward(ad::Tape&, const ModelParams&, const StaticGraphs&, const Normalizer&,
                       const std::vector<const Mat*>& window_raw,
                       const std::vector<const Mat*>& odt_raw, LeafMap* leaves = nullptr);

// Forward-only convenience.
Mat ahgcsp_predict(const ModelParams&, const StaticGraphs&, const Normalizer&,
                   const std::vector<const Mat*>& window_raw,
                   const std::vector<const Mat*>& odt_raw);

/*
 * Checkpoint container: 8-byte magic, uint64 manifest length, JSON manifest
 * {kind, config, normalizer, params: [{name, rows, cols, offset}]}, then the
 * little-endian float64 payload. Self-contained for inference.
 */
struct Checkpoint {
  ModelParams params;
  Normalizer norm;
  std::string kind;
};

void save_checkpoint(const std::filesystem::path&, const ModelParams&, const Normalizer&,
                     const std::string& kind);
Checkpoint load_checkpoint(const std::filesystem::path&);

}  // namespace odflow

#endif
