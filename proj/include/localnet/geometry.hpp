// Deterministic geometric primitives: unit-sphere normalization, farthest
// point sampling, brute-force k-NN and train-time augmentation.
#pragma once

#include "localnet/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

namespace localnet {

// Centers the cloud on its centroid and scales the farthest point to norm 1.
// A degenerate cloud (all points identical) maps to the all-zero cloud.
template <typename S>
PointCloud<S> normalize_unit_sphere(const PointCloud<S>& pc) {
  if (pc.size() < 1) throw std::invalid_argument("normalize_unit_sphere: empty cloud");
  PointCloud<S> out = pc;
  Eigen::Matrix<S, 1, 3> centroid = pc.coords.colwise().mean();
  out.coords = pc.coords.rowwise() - centroid;
  const S max_norm = std::sqrt(out.coords.rowwise().squaredNorm().maxCoeff());
  if (max_norm > S(0)) {
    out.coords /= max_norm;
  } else {
    out.coords.setZero();
  }
  return out;
}

// Greedy farthest point sampling. The first pick is seed_index; every later
// pick maximizes the minimum distance to the points already selected, ties
// broken by lowest index. Comparisons use squared distances, which order
// identically.
template <typename S>
std::vector<int> farthest_point_sampling(const Points<S>& pts, int m, int seed_index = 0) {
  const int n = static_cast<int>(pts.rows());
  if (m < 1 || m > n) throw std::invalid_argument("farthest_point_sampling: need 1 <= m <= n");
  if (seed_index < 0 || seed_index >= n)
    throw std::invalid_argument("farthest_point_sampling: seed_index out of range");

  std::vector<int> picked;
  picked.reserve(m);
  picked.push_back(seed_index);

  VecX<S> min_d2 = (pts.rowwise() - pts.row(seed_index)).rowwise().squaredNorm();
  for (int t = 1; t < m; ++t) {
    int best = 0;
    S best_d2 = min_d2[0];
    for (int i = 1; i < n; ++i) {
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    picked.push_back(best);
    VecX<S> d2 = (pts.rowwise() - pts.row(best)).rowwise().squaredNorm();
    min_d2 = min_d2.cwiseMin(d2);
  }
  return picked;
}

template <typename S>
std::vector<int> farthest_point_sampling(const PointCloud<S>& pc, int m, int seed_index = 0) {
  return farthest_point_sampling<S>(pc.coords, m, seed_index);
}

// Indices of the k points closest to query, ascending by distance, ties by
// lowest index.
template <typename S>
std::vector<int> knn(const Points<S>& pts, const Vec3<S>& query, int k) {
  const int n = static_cast<int>(pts.rows());
  if (k < 1 || k > n) throw std::invalid_argument("knn: need 1 <= k <= n");

  std::vector<std::pair<S, int>> order(n);
  for (int i = 0; i < n; ++i) {
    order[i] = {(pts.row(i).transpose() - query).squaredNorm(), i};
  }
  std::partial_sort(order.begin(), order.begin() + k, order.end());

  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = order[i].second;
  return idx;
}

template <typename S>
std::vector<int> knn(const PointCloud<S>& pc, const Vec3<S>& query, int k) {
  return knn<S>(pc.coords, query, k);
}

// Anisotropic per-axis scaling, uniform per-axis translation, then i.i.d.
// Gaussian jitter. Draw order is pinned: 3 scale draws, 3 shift draws, then
// one noise draw per coordinate in row-major order (noise draws are skipped
// entirely when noise_sigma == 0, since normal_distribution needs sigma > 0).
template <typename S>
PointCloud<S> augment(const PointCloud<S>& pc, const AugmentParams& p, Rng& rng) {
  p.validate();
  PointCloud<S> out = pc;

  std::uniform_real_distribution<double> scale_draw(p.scale_lo, p.scale_hi);
  Eigen::Matrix<S, 1, 3> scale;
  for (int a = 0; a < 3; ++a) scale[a] = static_cast<S>(scale_draw(rng));

  std::uniform_real_distribution<double> shift_draw(-p.shift_range, p.shift_range);
  Eigen::Matrix<S, 1, 3> shift;
  for (int a = 0; a < 3; ++a) shift[a] = static_cast<S>(shift_draw(rng));

  out.coords = (pc.coords.array().rowwise() * scale.array()).rowwise() + shift.array();

  if (p.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, p.noise_sigma);
    for (Eigen::Index i = 0; i < out.coords.rows(); ++i)
      for (Eigen::Index j = 0; j < 3; ++j) out.coords(i, j) += static_cast<S>(noise(rng));
  }
  return out;
}

template <typename S>
PointCloud<S> augment(const PointCloud<S>& pc, const AugmentParams& p) {
  Rng rng(p.rng_seed);
  return augment(pc, p, rng);
}

}  // namespace localnet
