#include "odflow/autodiff.hpp"

#include <cmath>
#include <string>

#include "odflow/kernels.hpp"

namespace odflow::ad {

namespace {

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw Error(std::string(op) + ": operands from different tapes");
}

}  // namespace

Var Tape::push(const char* op, Mat value, bool requires_grad, BackFn back) {
  if (!value.all_finite())
    throw NonFinite(std::string(op) + " produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Mat& v) { return push("leaf", v, true, nullptr); }

Var Tape::constant(const Mat& v) { return push("constant", v, false, nullptr); }

Mat& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Mat(n.value.rows, n.value.cols);
  return n.grad;
}

const Mat& Tape::grad(Var v) { return grad_buf(v.id); }

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("backward: loss from another tape");
  const Mat& lv = nodes_[loss.id].value;
  if (lv.rows != 1 || lv.cols != 1)
    throw NonScalarLoss("backward target is " + std::to_string(lv.rows) + "x" +
                        std::to_string(lv.cols));
  grad_buf(loss.id)(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.back || n.grad.empty()) continue;
    n.back(*this, i);
  }
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  Tape& t = *a.tape;
  Mat out;
  kern::matmul(t.value(a), t.value(b), out);
  const bool req = t.requires(a) || t.requires(b);
  const int ai = a.id, bi = b.id;
  Tape::BackFn back;
  if (req)
    back = [ai, bi](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      if (t.node(ai).requires_grad) kern::matmul_nt(g, t.node(bi).value, t.grad_buf(ai), true);
      if (t.node(bi).requires_grad) kern::matmul_tn(t.node(ai).value, g, t.grad_buf(bi), true);
    };
  return t.push("matmul", std::move(out), req, std::move(back));
}

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  const bool broadcast = bv.rows == 1 && av.rows != 1 && av.cols == bv.cols;
  if (!broadcast) require_same_shape(av, bv, "add");
  Mat out(av.rows, av.cols);
  if (broadcast) {
    for (int i = 0; i < av.rows; ++i)
      for (int j = 0; j < av.cols; ++j) out(i, j) = av(i, j) + bv(0, j);
  } else {
    for (size_t i = 0; i < av.size(); ++i) out.d[i] = av.d[i] + bv.d[i];
  }
  const bool req = t.requires(a) || t.requires(b);
  const int ai = a.id, bi = b.id;
  Tape::BackFn back;
  if (req)
    back = [ai, bi, broadcast](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      if (t.node(ai).requires_grad) {
        Mat& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
      }
      if (t.node(bi).requires_grad) {
        Mat& gb = t.grad_buf(bi);
        if (broadcast) {
          for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
        } else {
          for (size_t i = 0; i < g.size(); ++i) gb.d[i] += g.d[i];
        }
      }
    };
  return t.push("add", std::move(out), req, std::move(back));
}

Var sub(Var a, Var b) {
  check_same_tape(a, b, "sub");
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  require_same_shape(av, bv, "sub");
  Mat out(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) out.d[i] = av.d[i] - bv.d[i];
  const bool req = t.requires(a) || t.requires(b);
  const int ai = a.id, bi = b.id;
  Tape::BackFn back;
  if (req)
    back = [ai, bi](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      if (t.node(ai).requires_grad) {
        Mat& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
      }
      if (t.node(bi).requires_grad) {
        Mat& gb = t.grad_buf(bi);
        for (size_t i = 0; i < g.size(); ++i) gb.d[i] -= g.d[i];
      }
    };
  return t.push("sub", std::move(out), req, std::move(back));
}

Var mul(Var a, Var b) {
  check_same_tape(a, b, "mul");
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  require_same_shape(av, bv, "mul");
  Mat out(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) out.d[i] = av.d[i] * bv.d[i];
  const bool req = t.requires(a) || t.requires(b);
  const int ai = a.id, bi = b.id;
  Tape::BackFn back;
  if (req)
    back = [ai, bi](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      const Mat& av = t.node(ai).value;
      const Mat& bv = t.node(bi).value;
      if (t.node(ai).requires_grad) {
        Mat& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * bv.d[i];
      }
      if (t.node(bi).requires_grad) {
        Mat& gb = t.grad_buf(bi);
        for (size_t i = 0; i < g.size(); ++i) gb.d[i] += g.d[i] * av.d[i];
      }
    };
  return t.push("mul", std::move(out), req, std::move(back));
}

Var scale(Var s, Var m) {
  check_same_tape(s, m, "scale");
  Tape& t = *s.tape;
  const Mat& sv = t.value(s);
  const Mat& mv = t.value(m);
  if (sv.rows != 1 || sv.cols != 1) throw ShapeMismatch("scale: scalar operand must be 1x1");
  Mat out(mv.rows, mv.cols);
  const double c = sv(0, 0);
  for (size_t i = 0; i < mv.size(); ++i) out.d[i] = c * mv.d[i];
  const bool req = t.requires(s) || t.requires(m);
  const int si = s.id, mi = m.id;
  Tape::BackFn back;
  if (req)
    back = [si, mi](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      const Mat& sv = t.node(si).value;
      const Mat& mv = t.node(mi).value;
      if (t.node(si).requires_grad) {
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += g.d[i] * mv.d[i];
        t.grad_buf(si)(0, 0) += acc;
      }
      if (t.node(mi).requires_grad) {
        Mat& gm = t.grad_buf(mi);
        const double c = sv(0, 0);
        for (size_t i = 0; i < g.size(); ++i) gm.d[i] += c * g.d[i];
      }
    };
  return t.push("scale", std::move(out), req, std::move(back));
}

Var affine(Var a, double mul, double shift) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) out.d[i] = av.d[i] * mul + shift;
  const bool req = t.requires(a);
  const int ai = a.id;
  Tape::BackFn back;
  if (req)
    back = [ai, mul](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      Mat& ga = t.grad_buf(ai);
      for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * mul;
    };
  return t.push("affine", std::move(out), req, std::move(back));
}

Var relu(Var a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) out.d[i] = av.d[i] > 0.0 ? av.d[i] : 0.0;
  const bool req = t.requires(a);
  const int ai = a.id;
  Tape::BackFn back;
  if (req)
    back = [ai](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      const Mat& av = t.node(ai).value;
      Mat& ga = t.grad_buf(ai);
      for (size_t i = 0; i < g.size(); ++i)
        if (av.d[i] > 0.0) ga.d[i] += g.d[i];
    };
  return t.push("relu", std::move(out), req, std::move(back));
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) out.d[i] = std::tanh(av.d[i]);
  const bool req = t.requires(a);
  const int ai = a.id;
  Tape::BackFn back;
  if (req)
    back = [ai](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      const Mat& y = t.node(self).value;
      Mat& ga = t.grad_buf(ai);
      for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * (1.0 - y.d[i] * y.d[i]);
    };
  return t.push("tanh", std::move(out), req, std::move(back));
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(av.rows, av.cols);
  for (size_t i = 0; i < av.size(); ++i) out.d[i] = 1.0 / (1.0 + std::exp(-av.d[i]));
  const bool req = t.requires(a);
  const int ai = a.id;
  Tape::BackFn back;
  if (req)
    back = [ai](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      const Mat& y = t.node(self).value;
      Mat& ga = t.grad_buf(ai);
      for (size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * y.d[i] * (1.0 - y.d[i]);
    };
  return t.push("sigmoid", std::move(out), req, std::move(back));
}

Var row_softmax(Var a) {
  Tape& t = *a.tape;
  Mat out;
  kern::row_softmax(t.value(a), out);
  const bool req = t.requires(a);
  const int ai = a.id;
  Tape::BackFn back;
  if (req)
    back = [ai](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      const Mat& y = t.node(self).value;
      Mat& ga = t.grad_buf(ai);
      for (int i = 0; i < g.rows; ++i) {
        double dot = 0.0;
        for (int j = 0; j < g.cols; ++j) dot += g(i, j) * y(i, j);
        for (int j = 0; j < g.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
      }
    };
  return t.push("row_softmax", std::move(out), req, std::move(back));
}

Var row_normalize(Var a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(av.rows, av.cols);
  for (int i = 0; i < av.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < av.cols; ++j) {
      if (av(i, j) < 0.0) throw Error("row_normalize: negative input");
      s += av(i, j);
    }
    if (s > 0.0)
      for (int j = 0; j < av.cols; ++j) out(i, j) = av(i, j) / s;
  }
  const bool req = t.requires(a);
  const int ai = a.id;
  Tape::BackFn back;
  if (req)
    back = [ai](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      const Mat& y = t.node(self).value;
      const Mat& x = t.node(ai).value;
      Mat& ga = t.grad_buf(ai);
      for (int i = 0; i < g.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < g.cols; ++j) s += x(i, j);
        if (s <= 0.0) continue;  // zero row: defined as zero output, zero grad
        double dot = 0.0;
        for (int j = 0; j < g.cols; ++j) dot += g(i, j) * y(i, j);
        for (int j = 0; j < g.cols; ++j) ga(i, j) += (g(i, j) - dot) / s;
      }
    };
  return t.push("row_normalize", std::move(out), req, std::move(back));
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b, "concat_cols");
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.rows != bv.rows) throw ShapeMismatch("concat_cols: row count differs");
  Mat out(av.rows, av.cols + bv.cols);
  for (int i = 0; i < av.rows; ++i) {
    for (int j = 0; j < av.cols; ++j) out(i, j) = av(i, j);
    for (int j = 0; j < bv.cols; ++j) out(i, av.cols + j) = bv(i, j);
  }
  const bool req = t.requires(a) || t.requires(b);
  const int ai = a.id, bi = b.id, ac = av.cols;
  Tape::BackFn back;
  if (req)
    back = [ai, bi, ac](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      if (t.node(ai).requires_grad) {
        Mat& ga = t.grad_buf(ai);
        for (int i = 0; i < ga.rows; ++i)
          for (int j = 0; j < ga.cols; ++j) ga(i, j) += g(i, j);
      }
      if (t.node(bi).requires_grad) {
        Mat& gb = t.grad_buf(bi);
        for (int i = 0; i < gb.rows; ++i)
          for (int j = 0; j < gb.cols; ++j) gb(i, j) += g(i, ac + j);
      }
    };
  return t.push("concat_cols", std::move(out), req, std::move(back));
}

Var slice_cols(Var a, int begin, int end) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  if (begin < 0 || end > av.cols || begin >= end)
    throw ShapeMismatch("slice_cols: bad range [" + std::to_string(begin) + ", " +
                        std::to_string(end) + ") for " + std::to_string(av.cols) + " cols");
  Mat out(av.rows, end - begin);
  for (int i = 0; i < av.rows; ++i)
    for (int j = begin; j < end; ++j) out(i, j - begin) = av(i, j);
  const bool req = t.requires(a);
  const int ai = a.id;
  Tape::BackFn back;
  if (req)
    back = [ai, begin](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      Mat& ga = t.grad_buf(ai);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga(i, begin + j) += g(i, j);
    };
  return t.push("slice_cols", std::move(out), req, std::move(back));
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(av.cols, av.rows);
  for (int i = 0; i < av.rows; ++i)
    for (int j = 0; j < av.cols; ++j) out(j, i) = av(i, j);
  const bool req = t.requires(a);
  const int ai = a.id;
  Tape::BackFn back;
  if (req)
    back = [ai](Tape& t, int self) {
      const Mat& g = t.node(self).grad;
      Mat& ga = t.grad_buf(ai);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga(j, i) += g(i, j);
    };
  return t.push("transpose", std::move(out), req, std::move(back));
}

Var mse_loss(Var pred, Var target) {
  check_same_tape(pred, target, "mse_loss");
  Tape& t = *pred.tape;
  const Mat& pv = t.value(pred);
  const Mat& tv = t.value(target);
  require_same_shape(pv, tv, "mse_loss");
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  double acc = 0.0;
  for (size_t i = 0; i < pv.size(); ++i) {
    const double e = pv.d[i] - tv.d[i];
    acc += e * e;
  }
  Mat out(1, 1, acc * inv_n);
  const bool req = t.requires(pred) || t.requires(target);
  const int pi = pred.id, ti = target.id;
  Tape::BackFn back;
  if (req)
    back = [pi, ti, inv_n](Tape& t, int self) {
      const double g = t.node(self).grad(0, 0);
      const Mat& pv = t.node(pi).value;
      const Mat& tv = t.node(ti).value;
      const double c = 2.0 * inv_n * g;
      if (t.node(pi).requires_grad) {
        Mat& gp = t.grad_buf(pi);
        for (size_t i = 0; i < pv.size(); ++i) gp.d[i] += c * (pv.d[i] - tv.d[i]);
      }
      if (t.node(ti).requires_grad) {
        Mat& gt = t.grad_buf(ti);
        for (size_t i = 0; i < pv.size(); ++i) gt.d[i] -= c * (pv.d[i] - tv.d[i]);
      }
    };
  return t.push("mse_loss", std::move(out), req, std::move(back));
}

void adam_init(AdamState& st, const std::vector<Mat*>& params) {
  st.step = 0;
  st.m.clear();
  st.v.clear();
  for (const Mat* p : params) {
    st.m.emplace_back(p->rows, p->cols);
    st.v.emplace_back(p->rows, p->cols);
  }
}

void adam_step(std::vector<Mat*>& params, const std::vector<Mat>& grads, AdamState& st,
               double lr) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw ShapeMismatch("adam_step: parameter/gradient/state count mismatch");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (size_t p = 0; p < params.size(); ++p) {
    Mat& w = *params[p];
    const Mat& g = grads[p];
    require_same_shape(w, g, "adam_step");
    Mat& m = st.m[p];
    Mat& v = st.v[p];
    for (size_t i = 0; i < w.size(); ++i) {
      m.d[i] = st.beta1 * m.d[i] + (1.0 - st.beta1) * g.d[i];
      v.d[i] = st.beta2 * v.d[i] + (1.0 - st.beta2) * g.d[i] * g.d[i];
      const double mh = m.d[i] / bc1;
      const double vh = v.d[i] / bc2;
      w.d[i] -= lr * mh / (std::sqrt(vh) + st.eps);
    }
  }
}

double grad_check(const std::function<double()>& loss_fn, const std::vector<Mat*>& params,
                  const std::vector<Mat>& analytic, double eps) {
  double worst = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    Mat& w = *params[p];
    const Mat& a = analytic[p];
    require_same_shape(w, a, "grad_check");
    for (size_t i = 0; i < w.size(); ++i) {
      const double keep = w.d[i];
      w.d[i] = keep + eps;
      const double up = loss_fn();
      w.d[i] = keep - eps;
      const double down = loss_fn();
      w.d[i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(a.d[i]), std::abs(numeric), 1e-12});
      const double rel = std::abs(a.d[i] - numeric) / denom;
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void glorot_fill(Mat& m, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (m.rows + m.cols));
  for (double& v : m.d) v = (2.0 * uniform01(rng) - 1.0) * limit;
}

}  // namespace odflow::ad
