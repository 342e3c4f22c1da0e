#ifndef ODFLOW_KERNELS_HPP
#define ODFLOW_KERNELS_HPP

#include <vector>

#include "odflow/mat.hpp"

// Dense kernels. Each OpenMP kernel parallelizes over independent output
// elements with a fixed per-element reduction order, so results are
// bit-identical to the serial reference for any thread count. The serial
// variants are kept as test oracles and for the bench target.
namespace odflow::kern {

// C = A*B, or C += A*B when accumulate.
void matmul(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);
void matmul_serial(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);

// C = A*B^T
void matmul_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);
void matmul_nt_serial(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);

// C = A^T*B
void matmul_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);
void matmul_tn_serial(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);

// Row-wise stable softmax (subtracts the row max).
void row_softmax(const Mat& x, Mat& y);
void row_softmax_serial(const Mat& x, Mat& y);

// out[i][j] = 1 - sum_t p_i[t] * ln(p_i[t]/p_j[t]); profile rows must be > 0.
void kl_similarity(const Mat& profiles, Mat& out);
void kl_similarity_serial(const Mat& profiles, Mat& out);

// Great-circle distance in km, R = 6371 km.
double haversine_km(double lat1, double lon1, double lat2, double lon2);
void pairwise_haversine(const Vec& lat, const Vec& lon, Mat& out);
void pairwise_haversine_serial(const Vec& lat, const Vec& lon, Mat& out);

}  // namespace odflow::kern

#endif
