// Critical-point learning: a shared MLP lifts every point to an m-dim
// feature, column-wise max pooling over the cloud yields the first global
// feature g1, and the per-column argmax rows are the critical point indices
// used as center points downstream. Gradients reach the encoder only through
// the argmax winners.
#pragma once

#include "localnet/nn.hpp"
#include "localnet/types.hpp"

#include <algorithm>
#include <set>

namespace localnet {

template <typename S>
struct CplOutput {
  RowX<S> g1;                          // 1 x m
  std::vector<int> critical_indices;   // length m, duplicates allowed
  int distinct_count = 0;
  MatX<S> point_features;              // n x d_cpl, kept for segmentation
};

// Column-wise max and argmax over all rows, ties to the lowest row index.
template <typename S>
std::pair<RowX<S>, std::vector<int>> col_max_argmax(const MatX<S>& f) {
  if (f.rows() < 1) throw std::invalid_argument("col_max_argmax: empty matrix");
  RowX<S> mx = f.row(0);
  std::vector<int> arg(f.cols(), 0);
  for (Eigen::Index r = 1; r < f.rows(); ++r) {
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      if (f(r, j) > mx[j]) {
        mx[j] = f(r, j);
        arg[j] = static_cast<int>(r);
      }
    }
  }
  return {mx, arg};
}

inline int count_distinct(const std::vector<int>& indices) {
  return static_cast<int>(std::set<int>(indices.begin(), indices.end()).size());
}

struct DistinctStats {
  double mean = 0.0;
  int max = 0;
  int min = 0;
};

inline DistinctStats count_distinct_stats(const std::vector<int>& distinct_counts) {
  if (distinct_counts.empty()) throw std::invalid_argument("count_distinct_stats: empty batch");
  DistinctStats st;
  st.max = distinct_counts[0];
  st.min = distinct_counts[0];
  long sum = 0;
  for (int c : distinct_counts) {
    sum += c;
    st.max = std::max(st.max, c);
    st.min = std::min(st.min, c);
  }
  st.mean = static_cast<double>(sum) / static_cast<double>(distinct_counts.size());
  return st;
}

template <typename S>
DistinctStats count_distinct_stats(const std::vector<CplOutput<S>>& batch) {
  std::vector<int> counts;
  counts.reserve(batch.size());
  for (const auto& o : batch) counts.push_back(o.distinct_count);
  return count_distinct_stats(counts);
}

template <typename S>
struct CplTapeResult {
  typename Tape<S>::Var g1;              // b x m
  typename Tape<S>::Var point_features;  // N_total x d_cpl (input of the final layer)
  typename Tape<S>::Var pre_pool;        // N_total x m
  std::vector<std::vector<int>> critical_indices;  // per cloud, cloud-local
  std::vector<int> distinct_counts;
};

// Batched CPL over stacked points. `clouds` gives each cloud's row range in
// `points`; in train mode batch statistics span all points of all clouds.
template <typename S>
CplTapeResult<S> cpl_forward_tape(Binder<S>& binder, typename Tape<S>::Var points,
                                  const std::vector<SegSpan>& clouds, MlpStack<S>& stack,
                                  Mode mode) {
  if (stack.layers.empty()) throw config_error("cpl: empty encoder stack");
  Tape<S>& t = binder.tape();

  auto h = points;
  for (size_t i = 0; i + 1 < stack.layers.size(); ++i)
    h = shared_mlp_layer(binder, h, stack.layers[i], "cpl.l" + std::to_string(i), mode);
  auto point_features = h;
  auto pre_pool = shared_mlp_layer(binder, h, stack.layers.back(),
                                   "cpl.l" + std::to_string(stack.layers.size() - 1), mode);

  auto pooled = t.segment_col_max(pre_pool, clouds);

  CplTapeResult<S> res;
  res.g1 = pooled.y;
  res.point_features = point_features;
  res.pre_pool = pre_pool;
  res.critical_indices.resize(clouds.size());
  res.distinct_counts.resize(clouds.size());
  for (size_t ci = 0; ci < clouds.size(); ++ci) {
    const int m = static_cast<int>(pooled.argmax.cols());
    std::vector<int>& idx = res.critical_indices[ci];
    idx.resize(m);
    for (int j = 0; j < m; ++j) idx[j] = pooled.argmax(static_cast<int>(ci), j) - clouds[ci].begin;
    res.distinct_counts[ci] = count_distinct(idx);
  }
  return res;
}

// Single-cloud convenience used by evaluation and inspection paths.
template <typename S>
CplOutput<S> cpl_forward(const PointCloud<S>& pc, MlpStack<S>& stack, Mode mode) {
  if (pc.size() < 1) throw std::invalid_argument("cpl_forward: empty cloud");
  Tape<S> tape(false);
  Binder<S> binder(tape);
  auto points = tape.constant(pc.coords);
  std::vector<SegSpan> clouds = {{0, static_cast<int>(pc.size())}};
  auto r = cpl_forward_tape(binder, points, clouds, stack, mode);

  CplOutput<S> out;
  out.g1 = tape.value(r.g1).row(0);
  out.critical_indices = r.critical_indices[0];
  out.distinct_count = r.distinct_counts[0];
  out.point_features = tape.value(r.point_features);
  return out;
}

// Coordinates gathered at the critical indices, order and duplicates kept.
template <typename S>
Points<S> select_centers(const std::vector<int>& critical_indices, const PointCloud<S>& pc) {
  Points<S> centers(static_cast<Eigen::Index>(critical_indices.size()), 3);
  for (size_t i = 0; i < critical_indices.size(); ++i) {
    const int idx = critical_indices[i];
    if (idx < 0 || idx >= pc.size()) throw std::invalid_argument("select_centers: index out of range");
    centers.row(static_cast<Eigen::Index>(i)) = pc.coords.row(idx);
  }
  return centers;
}

template <typename S>
Points<S> select_centers(const CplOutput<S>& cpl, const PointCloud<S>& pc) {
  return select_centers<S>(cpl.critical_indices, pc);
}

}  // namespace localnet
