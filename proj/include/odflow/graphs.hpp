#ifndef ODFLOW_GRAPHS_HPP
#define ODFLOW_GRAPHS_HPP

#include "odflow/core.hpp"
#include "odflow/mat.hpp"

namespace odflow {

/*
 * Thresholded Gaussian kernel over pairwise station distances. Stations
 * within radius_km of each other are neighbors; the kernel width sigma is
 * the population standard deviation of all neighbor distances. When no
 * pair is within the radius (or all neighbor distances coincide), sigma
 * falls back to the radius so the kernel stays defined.
 */
struct GeoGraph {
  Mat dist;        // km, symmetric, zero diagonal
  double radius_km = 0.0;
  double sigma = 0.0;
  Mat kernel;      // in [0,1]; zero outside the neighborhood, 1 on the diagonal
};

Mat geo_distance(const NetworkSpec&);
GeoGraph build_geo_graph_from_dist(Mat dist, double radius_km);
GeoGraph build_geo_graph(const NetworkSpec&, double radius_km);

// Per-station daily flow shapes as probability rows (N x T), built from
// epsilon-smoothed historical counts so every entry is strictly positive.
struct FlowProfiles {
  Mat inflow;
  Mat outflow;
  double epsilon = 1e-6;
};

FlowProfiles build_profiles(const Mat& inflow_counts, const Mat& outflow_counts,
                            double epsilon = 1e-6);

// 1 - KL(p_i || p_j) for every ordered station pair, natural log, no
// clamping; the diagonal is exactly 1.
struct FunctionalSim {
  Mat si;
  Mat so;
};

FunctionalSim kl_similarity(const FlowProfiles&);

}  // namespace odflow

#endif
