// Local-area feature extraction: each center point collects its k nearest
// neighbors, coordinates are re-expressed relative to the center, and three
// rotation-invariant metric features can be appended per neighbor before the
// shared area encoder runs:
//   phi1 = distance of the neighbor to the center,
//   phi2 = the neighbor's largest distance to any other point in the area,
//   phi3 = the area diameter (constant within an area).
#pragma once

#include "localnet/geometry.hpp"
#include "localnet/nn.hpp"

#include <array>

namespace localnet {

template <typename S>
struct LocalArea {
  int center_index = 0;                // row in the center list this area belongs to
  std::vector<int> neighbor_indices;   // rows in the source cloud, nearest first
  Points<S> rel_coords;                // k x 3, neighbor minus center
};

template <typename S>
std::vector<LocalArea<S>> build_local_areas(const PointCloud<S>& pc, const Points<S>& centers,
                                            int k) {
  if (centers.rows() < 1) throw std::invalid_argument("build_local_areas: no centers");
  std::vector<LocalArea<S>> areas(static_cast<size_t>(centers.rows()));
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const Vec3<S> center = centers.row(c).transpose();
    LocalArea<S>& area = areas[static_cast<size_t>(c)];
    area.center_index = static_cast<int>(c);
    area.neighbor_indices = knn(pc.coords, center, k);
    area.rel_coords.resize(k, 3);
    for (int j = 0; j < k; ++j)
      area.rel_coords.row(j) = pc.coords.row(area.neighbor_indices[static_cast<size_t>(j)]) - center.transpose();
  }
  return areas;
}

// k x 3 matrix of (phi1, phi2, phi3) per neighbor. phi2/phi3 use the O(k^2)
// pairwise distances; areas are small so this stays cheap.
template <typename S>
MatX<S> metric_features(const LocalArea<S>& area) {
  const Eigen::Index k = area.rel_coords.rows();
  if (k < 1) throw std::invalid_argument("metric_features: empty area");
  MatX<S> phi(k, 3);
  phi.col(0) = area.rel_coords.rowwise().norm();
  S diameter = S(0);
  for (Eigen::Index j = 0; j < k; ++j) {
    S far = S(0);
    for (Eigen::Index r = 0; r < k; ++r) {
      const S d = (area.rel_coords.row(j) - area.rel_coords.row(r)).norm();
      far = std::max(far, d);
    }
    phi(j, 1) = far;
    diameter = std::max(diameter, far);
  }
  phi.col(2).setConstant(diameter);
  return phi;
}

using MfcMask = std::array<bool, 3>;

inline int mfc_count(const MfcMask& mask) {
  return static_cast<int>(mask[0]) + static_cast<int>(mask[1]) + static_cast<int>(mask[2]);
}

// Rows the shared area encoder consumes: relative coordinates, then the
// selected metric features in phi1, phi2, phi3 order.
template <typename S>
MatX<S> area_input_rows(const LocalArea<S>& area, const MfcMask& mask) {
  const Eigen::Index k = area.rel_coords.rows();
  MatX<S> rows(k, 3 + mfc_count(mask));
  rows.leftCols(3) = area.rel_coords;
  if (mfc_count(mask) > 0) {
    const MatX<S> phi = metric_features(area);
    Eigen::Index col = 3;
    for (int f = 0; f < 3; ++f)
      if (mask[static_cast<size_t>(f)]) rows.col(col++) = phi.col(f);
  }
  return rows;
}

// Stacked encoder input for a list of areas plus the per-area row ranges.
template <typename S>
std::pair<MatX<S>, std::vector<SegSpan>> stack_area_inputs(const std::vector<LocalArea<S>>& areas,
                                                           const MfcMask& mask) {
  if (areas.empty()) throw std::invalid_argument("stack_area_inputs: no areas");
  const Eigen::Index k = areas[0].rel_coords.rows();
  const Eigen::Index w = 3 + mfc_count(mask);
  MatX<S> rows(static_cast<Eigen::Index>(areas.size()) * k, w);
  std::vector<SegSpan> segments(areas.size());
  Eigen::Index at = 0;
  for (size_t a = 0; a < areas.size(); ++a) {
    if (areas[a].rel_coords.rows() != k)
      throw std::invalid_argument("stack_area_inputs: areas differ in size");
    rows.middleRows(at, k) = area_input_rows(areas[a], mask);
    segments[a] = {static_cast<int>(at), static_cast<int>(k)};
    at += k;
  }
  return {rows, segments};
}

// Shared MLP over all neighbor rows, then per-area column-wise max. Returns
// one feature row per area.
template <typename S>
typename Tape<S>::Var encode_areas_tape(Binder<S>& binder, typename Tape<S>::Var rows,
                                        const std::vector<SegSpan>& area_segments,
                                        MlpStack<S>& stack, Mode mode) {
  auto h = stack.forward(binder, rows, "area", mode);
  return binder.tape().segment_col_max(h, area_segments).y;
}

// Second shared MLP over area features, then per-cloud column-wise max to the
// second global feature g2.
template <typename S>
typename Tape<S>::Var aggregate_global_tape(Binder<S>& binder, typename Tape<S>::Var area_feats,
                                            const std::vector<SegSpan>& cloud_area_segments,
                                            MlpStack<S>& stack, Mode mode) {
  auto h = stack.forward(binder, area_feats, "global", mode);
  return binder.tape().segment_col_max(h, cloud_area_segments).y;
}

// Plain-matrix wrappers used by tests and single-cloud paths.
template <typename S>
MatX<S> encode_areas(const std::vector<LocalArea<S>>& areas, MlpStack<S>& stack,
                     const MfcMask& mask, Mode mode) {
  Tape<S> tape(false);
  Binder<S> binder(tape);
  auto [rows, segments] = stack_area_inputs(areas, mask);
  auto feats = encode_areas_tape(binder, tape.constant(rows), segments, stack, mode);
  return tape.value(feats);
}

template <typename S>
RowX<S> aggregate_global(const MatX<S>& area_feats, MlpStack<S>& stack, Mode mode) {
  Tape<S> tape(false);
  Binder<S> binder(tape);
  std::vector<SegSpan> one = {{0, static_cast<int>(area_feats.rows())}};
  auto g2 = aggregate_global_tape(binder, tape.constant(area_feats), one, stack, mode);
  return tape.value(g2).row(0);
}

}  // namespace localnet
