#ifndef ODFLOW_MAT_HPP
#define ODFLOW_MAT_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "odflow/errors.hpp"

namespace odflow {

using Vec = std::vector<double>;

// Dense row-major double matrix. Row/column vectors are 1xN or Nx1.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}
  Mat(int r, int c, double fill)
      : rows(r), cols(c), d(static_cast<size_t>(r) * c, fill) {}

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat scalar(double v) { return Mat(1, 1, v); }

  double& operator()(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return d.size(); }
  bool empty() const { return d.empty(); }
  double* data() { return d.data(); }
  const double* data() const { return d.data(); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  double sum() const {
    double s = 0.0;
    for (double v : d) s += v;
    return s;
  }

  bool all_finite() const {
    for (double v : d)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(d.begin(), d.end(), v); }
};

inline void require_same_shape(const Mat& a, const Mat& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(where) + ": " + std::to_string(a.rows) + "x" +
                        std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                        std::to_string(b.cols));
}

inline Vec row_sums(const Mat& m) {
  Vec out(m.rows, 0.0);
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m(i, j);
    out[i] = s;
  }
  return out;
}

inline Vec col_sums(const Mat& m) {
  Vec out(m.cols, 0.0);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out[j] += m(i, j);
  return out;
}

}  // namespace odflow

#endif
