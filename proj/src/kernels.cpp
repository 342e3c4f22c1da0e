#include "odflow/kernels.hpp"

#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "odflow/threads.hpp"

namespace odflow {

int thread_cap() {
  static int cap = [] {
    const char* env = std::getenv("ODFLOW_THREADS");
    if (!env) return 0;
    int v = std::atoi(env);
    return v > 0 ? v : 0;
  }();
  return cap;
}

void apply_thread_cap() {
#ifdef _OPENMP
  if (thread_cap() > 0) omp_set_num_threads(thread_cap());
#endif
}

}  // namespace odflow

namespace odflow::kern {

namespace {

// Work threshold below which forking a team costs more than it saves.
constexpr long kParallelFlops = 1 << 15;

void check_matmul(const Mat& a, const Mat& b, const Mat& c, int ak, int bk, const char* name) {
  if (ak != bk)
    throw ShapeMismatch(std::string(name) + ": inner " + std::to_string(ak) + " vs " +
                        std::to_string(bk));
  (void)c;
}

}  // namespace

void matmul_serial(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  check_matmul(a, b, c, a.cols, b.rows, "matmul");
  if (c.rows != a.rows || c.cols != b.cols) c = Mat(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    double* crow = &c.d[static_cast<size_t>(i) * c.cols];
    if (!accumulate)
      for (int j = 0; j < c.cols; ++j) crow[j] = 0.0;
    const double* arow = &a.d[static_cast<size_t>(i) * a.cols];
    for (int k = 0; k < a.cols; ++k) {
      const double av = arow[k];
      const double* brow = &b.d[static_cast<size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  check_matmul(a, b, c, a.cols, b.rows, "matmul");
  if (c.rows != a.rows || c.cols != b.cols) c = Mat(a.rows, b.cols);
  const long flops = static_cast<long>(a.rows) * a.cols * b.cols;
#pragma omp parallel for schedule(static) if (flops > kParallelFlops)
  for (int i = 0; i < a.rows; ++i) {
    double* crow = &c.d[static_cast<size_t>(i) * c.cols];
    if (!accumulate)
      for (int j = 0; j < c.cols; ++j) crow[j] = 0.0;
    const double* arow = &a.d[static_cast<size_t>(i) * a.cols];
    for (int k = 0; k < a.cols; ++k) {
      const double av = arow[k];
      const double* brow = &b.d[static_cast<size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt_serial(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  check_matmul(a, b, c, a.cols, b.cols, "matmul_nt");
  if (c.rows != a.rows || c.cols != b.rows) c = Mat(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = &a.d[static_cast<size_t>(i) * a.cols];
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = &b.d[static_cast<size_t>(j) * b.cols];
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      if (accumulate)
        c(i, j) += s;
      else
        c(i, j) = s;
    }
  }
}

void matmul_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  check_matmul(a, b, c, a.cols, b.cols, "matmul_nt");
  if (c.rows != a.rows || c.cols != b.rows) c = Mat(a.rows, b.rows);
  const long flops = static_cast<long>(a.rows) * a.cols * b.rows;
#pragma omp parallel for schedule(static) if (flops > kParallelFlops)
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = &a.d[static_cast<size_t>(i) * a.cols];
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = &b.d[static_cast<size_t>(j) * b.cols];
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      if (accumulate)
        c(i, j) += s;
      else
        c(i, j) = s;
    }
  }
}

void matmul_tn_serial(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  check_matmul(a, b, c, a.rows, b.rows, "matmul_tn");
  if (c.rows != a.cols || c.cols != b.cols) c = Mat(a.cols, b.cols);
  for (int i = 0; i < a.cols; ++i) {
    double* crow = &c.d[static_cast<size_t>(i) * c.cols];
    if (!accumulate)
      for (int j = 0; j < c.cols; ++j) crow[j] = 0.0;
    for (int k = 0; k < a.rows; ++k) {
      const double av = a(k, i);
      const double* brow = &b.d[static_cast<size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate) {
  check_matmul(a, b, c, a.rows, b.rows, "matmul_tn");
  if (c.rows != a.cols || c.cols != b.cols) c = Mat(a.cols, b.cols);
  const long flops = static_cast<long>(a.cols) * a.rows * b.cols;
#pragma omp parallel for schedule(static) if (flops > kParallelFlops)
  for (int i = 0; i < a.cols; ++i) {
    double* crow = &c.d[static_cast<size_t>(i) * c.cols];
    if (!accumulate)
      for (int j = 0; j < c.cols; ++j) crow[j] = 0.0;
    for (int k = 0; k < a.rows; ++k) {
      const double av = a(k, i);
      const double* brow = &b.d[static_cast<size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace {

inline void softmax_row(const double* x, double* y, int n) {
  double mx = x[0];
  for (int j = 1; j < n; ++j) mx = x[j] > mx ? x[j] : mx;
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    s += y[j];
  }
  const double inv = 1.0 / s;
  for (int j = 0; j < n; ++j) y[j] *= inv;
}

}  // namespace

void row_softmax_serial(const Mat& x, Mat& y) {
  if (!y.same_shape(x)) y = Mat(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    softmax_row(&x.d[static_cast<size_t>(i) * x.cols], &y.d[static_cast<size_t>(i) * y.cols],
                x.cols);
}

void row_softmax(const Mat& x, Mat& y) {
  if (!y.same_shape(x)) y = Mat(x.rows, x.cols);
  const long work = static_cast<long>(x.rows) * x.cols * 8;
#pragma omp parallel for schedule(static) if (work > kParallelFlops)
  for (int i = 0; i < x.rows; ++i)
    softmax_row(&x.d[static_cast<size_t>(i) * x.cols], &y.d[static_cast<size_t>(i) * y.cols],
                x.cols);
}

void kl_similarity_serial(const Mat& profiles, Mat& out) {
  const int n = profiles.rows, t = profiles.cols;
  if (out.rows != n || out.cols != n) out = Mat(n, n);
  for (int i = 0; i < n; ++i) {
    const double* pi = &profiles.d[static_cast<size_t>(i) * t];
    for (int j = 0; j < n; ++j) {
      const double* pj = &profiles.d[static_cast<size_t>(j) * t];
      double kl = 0.0;
      for (int k = 0; k < t; ++k) kl += pi[k] * std::log(pi[k] / pj[k]);
      out(i, j) = 1.0 - kl;
    }
  }
}

void kl_similarity(const Mat& profiles, Mat& out) {
  const int n = profiles.rows, t = profiles.cols;
  if (out.rows != n || out.cols != n) out = Mat(n, n);
  const long work = static_cast<long>(n) * n * t * 4;
#pragma omp parallel for schedule(static) if (work > kParallelFlops)
  for (int i = 0; i < n; ++i) {
    const double* pi = &profiles.d[static_cast<size_t>(i) * t];
    for (int j = 0; j < n; ++j) {
      const double* pj = &profiles.d[static_cast<size_t>(j) * t];
      double kl = 0.0;
      for (int k = 0; k < t; ++k) kl += pi[k] * std::log(pi[k] / pj[k]);
      out(i, j) = 1.0 - kl;
    }
  }
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kEarthRadiusKm = 6371.0;
  constexpr double kDeg2Rad = 3.14159265358979323846 / 180.0;
  const double phi1 = lat1 * kDeg2Rad, phi2 = lat2 * kDeg2Rad;
  const double dphi = (lat2 - lat1) * kDeg2Rad;
  const double dlam = (lon2 - lon1) * kDeg2Rad;
  const double sp = std::sin(dphi / 2.0), sl = std::sin(dlam / 2.0);
  const double a = sp * sp + std::cos(phi1) * std::cos(phi2) * sl * sl;
  return 2.0 * kEarthRadiusKm * std::atan2(std::sqrt(a), std::sqrt(1.0 - a));
}

void pairwise_haversine_serial(const Vec& lat, const Vec& lon, Mat& out) {
  const int n = static_cast<int>(lat.size());
  if (out.rows != n || out.cols != n) out = Mat(n, n);
  for (int i = 0; i < n; ++i) {
    out(i, i) = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      out(i, j) = haversine_km(lat[i], lon[i], lat[j], lon[j]);
    }
  }
}

void pairwise_haversine(const Vec& lat, const Vec& lon, Mat& out) {
  const int n = static_cast<int>(lat.size());
  if (out.rows != n || out.cols != n) out = Mat(n, n);
  const long work = static_cast<long>(n) * n * 16;
#pragma omp parallel for schedule(static) if (work > kParallelFlops)
  for (int i = 0; i < n; ++i) {
    out(i, i) = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      out(i, j) = haversine_km(lat[i], lon[i], lat[j], lon[j]);
    }
  }
}

}  // namespace odflow::kern
