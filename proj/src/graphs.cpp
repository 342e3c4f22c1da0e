#include "odflow/graphs.hpp"

#include <cmath>

#include "odflow/kernels.hpp"

namespace odflow {

Mat geo_distance(const NetworkSpec& spec) {
  const int n = spec.station_count();
  Vec lat(n), lon(n);
  for (int i = 0; i < n; ++i) {
    lat[i] = spec.stations[i].lat;
    lon[i] = spec.stations[i].lon;
  }
  Mat out;
  kern::pairwise_haversine(lat, lon, out);
  return out;
}

GeoGraph build_geo_graph_from_dist(Mat dist, double radius_km) {
  if (radius_km <= 0.0) throw InvalidConfig("geo radius must be positive");
  const int n = dist.rows;
  if (dist.cols != n) throw ShapeMismatch("distance matrix must be square");

  // sigma over off-diagonal neighbor distances (each unordered pair counted
  // twice, which leaves mean and variance unchanged).
  double sum = 0.0, sumsq = 0.0;
  long cnt = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = dist(i, j);
      if (d <= radius_km) {
        sum += d;
        sumsq += d * d;
        ++cnt;
      }
    }
  double sigma = radius_km;
  if (cnt > 0) {
    const double mean = sum / cnt;
    const double var = sumsq / cnt - mean * mean;
    sigma = var > 0.0 ? std::sqrt(var) : radius_km;
  }

  GeoGraph g;
  g.radius_km = radius_km;
  g.sigma = sigma;
  g.kernel = Mat(n, n);
  const double inv_s2 = 1.0 / (sigma * sigma);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double d = dist(i, j);
      if (i == j)
        g.kernel(i, j) = 1.0;
      else if (d <= radius_km)
        g.kernel(i, j) = std::exp(-d * d * inv_s2);
      else
        g.kernel(i, j) = 0.0;
    }
  g.dist = std::move(dist);
  return g;
}

GeoGraph build_geo_graph(const NetworkSpec& spec, double radius_km) {
  return build_geo_graph_from_dist(geo_distance(spec), radius_km);
}

FlowProfiles build_profiles(const Mat& inflow_counts, const Mat& outflow_counts,
                            double epsilon) {
  require_same_shape(inflow_counts, outflow_counts, "build_profiles");
  if (inflow_counts.sum() == 0.0 && outflow_counts.sum() == 0.0)
    throw EmptyHistory("no historical flow counts");
  FlowProfiles p;
  p.epsilon = epsilon;
  auto normalize = [epsilon](const Mat& counts) {
    Mat out(counts.rows, counts.cols);
    for (int i = 0; i < counts.rows; ++i) {
      double total = 0.0;
      for (int j = 0; j < counts.cols; ++j) total += counts(i, j) + epsilon;
      for (int j = 0; j < counts.cols; ++j) out(i, j) = (counts(i, j) + epsilon) / total;
    }
    return out;
  };
  p.inflow = normalize(inflow_counts);
  p.outflow = normalize(outflow_counts);
  return p;
}

FunctionalSim kl_similarity(const FlowProfiles& p) {
  FunctionalSim s;
  kern::kl_similarity(p.inflow, s.si);
  kern::kl_similarity(p.outflow, s.so);
  // Self-similarity is exactly 1 (KL(p||p) = 0); pin the diagonal.
  for (int i = 0; i < s.si.rows; ++i) {
    s.si(i, i) = 1.0;
    s.so(i, i) = 1.0;
  }
  return s;
}

}  // namespace odflow
