#ifndef ODFLOW_AUTODIFF_HPP
#define ODFLOW_AUTODIFF_HPP

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "odflow/mat.hpp"

namespace odflow::ad {

using odflow::Mat;

class Tape;

// Handle into a tape. Cheap to copy; only valid for the tape that made it.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

/*
 * Reverse-mode tape. Nodes are appended in forward order (which is a
 * topological order), so the backward sweep visits them once in reverse
 * creation order and sums gradient contributions across fan-out. Every op
 * checks its forward result for NaN/Inf and throws NonFinite.
 */
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  struct Node {
    Mat value;
    Mat grad;  // empty until touched by backward
    BackFn back;
    bool requires_grad = false;
  };

  Var leaf(const Mat& v);      // differentiable input (parameter)
  Var constant(const Mat& v);  // non-differentiable input

  const Mat& value(Var v) const { return nodes_[v.id].value; }

  // Gradient of the last backward() target w.r.t. v (zeros when v has no
  // influence on it).
  const Mat& grad(Var v);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape. Throws NonScalarLoss
  // unless loss is 1x1.
  void backward(Var loss);

  size_t node_count() const { return nodes_.size(); }

  // --- op plumbing ---
  Var push(const char* op, Mat value, bool requires_grad, BackFn back);
  Mat& grad_buf(int id);
  const Node& node(int id) const { return nodes_[id]; }
  bool requires(Var v) const { return nodes_[v.id].requires_grad; }

 private:
  std::vector<Node> nodes_;
};

// Core ops. Forward semantics are the textbook ones; shapes are validated
// and NonFinite aborts on any non-finite result.
Var matmul(Var a, Var b);
Var add(Var a, Var b);  // same shape, or b a 1xC row vector broadcast over rows
Var sub(Var a, Var b);
Var mul(Var a, Var b);                       // elementwise
Var scale(Var s, Var m);                     // s is 1x1
Var affine(Var a, double mul, double shift); // elementwise a*mul + shift
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var row_softmax(Var a);
// Divides each row by its sum; an all-zero row stays zero with zero gradient.
// Input must be nonnegative.
Var row_normalize(Var a);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, int begin, int end);
Var transpose(Var a);
// Mean over all entries of the squared difference.
Var mse_loss(Var pred, Var target);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<Mat> m;
  std::vector<Mat> v;
};

void adam_init(AdamState&, const std::vector<Mat*>& params);
// Standard bias-corrected Adam update, in place.
void adam_step(std::vector<Mat*>& params, const std::vector<Mat>& grads,
               AdamState&, double lr);

// Central finite differences against reverse-mode gradients. loss_fn must
// evaluate the loss at the params' current values without touching the tape
// that produced `analytic`. Returns the max relative error
// |a - n| / max(|a|, |n|, 1e-12).
double grad_check(const std::function<double()>& loss_fn,
                  const std::vector<Mat*>& params,
                  const std::vector<Mat>& analytic, double eps);

// Uniform double in [0, 1) from the top 53 bits; avoids distribution
// portability quirks.
double uniform01(std::mt19937_64&);
// Glorot-uniform with fan_in = rows, fan_out = cols.
void glorot_fill(Mat&, std::mt19937_64&);

}  // namespace odflow::ad

#endif
