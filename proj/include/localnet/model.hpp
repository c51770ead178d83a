// Full network assembly. The classifier runs CPL for centers and g1, encodes
// kNN local areas with optional metric features, aggregates areas into g2,
// fuses g = g1 || g2 and scores classes through a fully-connected head with
// dropout. The segmenter keeps the same trunk but takes FPS centers,
// propagates area features back to every point by inverse-distance weighting,
// and scores per-point part labels from
//   concat(interpolated feature, CPL point feature, g, class one-hot).
#pragma once

#include "localnet/cpl.hpp"
#include "localnet/geometry.hpp"
#include "localnet/local_features.hpp"

#include <numeric>

namespace localnet {

struct ClassifierConfig {
  int class_count = 0;
  int m = 256;                                 // center count; also g1 width
  int k = 128;                                 // neighbors per local area
  bool use_cpl = true;                         // false -> FPS centers
  bool use_g1 = true;
  MfcMask mfc = {true, true, true};
  std::vector<int> cpl_widths = {64, 128};     // hidden widths; final layer width is m
  std::vector<int> area_widths = {64, 128};
  std::vector<int> global_widths = {256, 1024};
  std::vector<int> head_widths = {512, 256};   // hidden layers before the score layer
  double dropout_ratio = 0.5;
  int fps_seed_index = 0;

  int area_input_width() const { return 3 + mfc_count(mfc); }
  int d_g2() const { return global_widths.back(); }
  int g_dim() const { return (use_g1 ? m : 0) + d_g2(); }

  void validate() const {
    if (class_count < 2) throw config_error("classifier: class_count must be >= 2");
    if (m < 1) throw config_error("classifier: m must be >= 1");
    if (k < 1) throw config_error("classifier: k must be >= 1");
    if (dropout_ratio < 0.0 || dropout_ratio >= 1.0)
      throw config_error("classifier: dropout_ratio must be in [0, 1)");
    if (fps_seed_index < 0) throw config_error("classifier: fps_seed_index must be >= 0");
    for (const auto* ws : {&cpl_widths, &area_widths, &global_widths})
      if (ws->empty()) throw config_error("classifier: encoder widths must be non-empty");
    for (const auto* ws : {&cpl_widths, &area_widths, &global_widths, &head_widths})
      for (int w : *ws)
        if (w < 1) throw config_error("classifier: layer widths must be positive");
  }
};

struct SegmenterConfig {
  int part_count = 0;        // s: number of part classes scored per point
  int class_onehot_dim = 16; // width of the class indicator appended per point
  int m = 512;               // FPS center count
  int k = 128;
  bool use_g1 = true;
  MfcMask mfc = {false, false, false};
  int cpl_m = 256;                              // CPL pool width, i.e. g1 size
  std::vector<int> cpl_widths = {64, 128};      // hidden widths; d_cpl = back()
  std::vector<int> area_widths = {64, 256};
  std::vector<int> global_widths = {256, 512};
  std::vector<int> head_widths = {512, 256};
  double dropout_ratio = 0.5;
  int k_interp = 3;

  int area_input_width() const { return 3 + mfc_count(mfc); }
  int d_cpl() const { return cpl_widths.back(); }
  int d_g2() const { return global_widths.back(); }
  int g_dim() const { return (use_g1 ? cpl_m : 0) + d_g2(); }
  int point_input_width() const {
    return area_widths.back() + d_cpl() + g_dim() + class_onehot_dim;
  }

  void validate() const {
    if (part_count < 2) throw config_error("segmenter: part_count must be >= 2");
    if (class_onehot_dim < 1) throw config_error("segmenter: class_onehot_dim must be >= 1");
    if (m < 1) throw config_error("segmenter: m must be >= 1");
    if (k < 1) throw config_error("segmenter: k must be >= 1");
    if (cpl_m < 1) throw config_error("segmenter: cpl_m must be >= 1");
    if (k_interp < 1) throw config_error("segmenter: k_interp must be >= 1");
    if (dropout_ratio < 0.0 || dropout_ratio >= 1.0)
      throw config_error("segmenter: dropout_ratio must be in [0, 1)");
    for (const auto* ws : {&cpl_widths, &area_widths, &global_widths})
      if (ws->empty()) throw config_error("segmenter: encoder widths must be non-empty");
    for (const auto* ws : {&cpl_widths, &area_widths, &global_widths, &head_widths})
      for (int w : *ws)
        if (w < 1) throw config_error("segmenter: layer widths must be positive");
  }
};

// All trainable state of one network. The head's final layer is the plain
// affine score layer (no batch norm, no ReLU); every other layer carries both.
template <typename S>
struct NetworkParams {
  MlpStack<S> cpl;
  MlpStack<S> area;
  MlpStack<S> global;
  MlpStack<S> head;

  // Walks every tensor in a fixed order with f(name, data, dims). Trainable
  // tensors always; batch-norm running estimates only when asked. The order
  // is the on-disk checkpoint order.
  template <typename F>
  void visit_tensors(bool include_running, F&& f) {
    const std::pair<const char*, MlpStack<S>*> stacks[] = {
        {"cpl", &cpl}, {"area", &area}, {"global", &global}, {"head", &head}};
    for (auto [prefix, stack] : stacks) {
      for (size_t i = 0; i < stack->layers.size(); ++i) {
        LayerParams<S>& L = stack->layers[i];
        const std::string base = std::string(prefix) + ".l" + std::to_string(i);
        f(base + ".weight", L.weight.data(),
          std::vector<std::size_t>{static_cast<std::size_t>(L.weight.rows()),
                                   static_cast<std::size_t>(L.weight.cols())});
        f(base + ".bias", L.bias.data(),
          std::vector<std::size_t>{static_cast<std::size_t>(L.bias.cols())});
        if (L.has_bn) {
          f(base + ".bn_gamma", L.bn_gamma.data(),
            std::vector<std::size_t>{static_cast<std::size_t>(L.bn_gamma.cols())});
          f(base + ".bn_beta", L.bn_beta.data(),
            std::vector<std::size_t>{static_cast<std::size_t>(L.bn_beta.cols())});
          if (include_running) {
            f(base + ".bn_running_mean", L.bn_running_mean.data(),
              std::vector<std::size_t>{static_cast<std::size_t>(L.bn_running_mean.cols())});
            f(base + ".bn_running_var", L.bn_running_var.data(),
              std::vector<std::size_t>{static_cast<std::size_t>(L.bn_running_var.cols())});
          }
        }
      }
    }
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit_tensors(false, [&](const std::string&, S*, const std::vector<std::size_t>& dims) {
      std::size_t len = 1;
      for (std::size_t d : dims) len *= d;
      n += len;
    });
    return n;
  }
};

namespace detail {

// The score layer starts near zero so an untrained net emits near-uniform
// class probabilities; Glorot-scale score weights would inflate the initial
// cross-entropy noticeably above ln(class_count).
template <typename S>
void append_head(MlpStack<S>& head, int d_in, const std::vector<int>& hidden, int d_out, Rng& rng) {
  int d = d_in;
  for (int w : hidden) {
    head.layers.push_back(make_layer<S>(d, w, true, true, rng));
    d = w;
  }
  head.layers.push_back(make_layer<S>(d, d_out, false, false, rng));
  head.layers.back().weight *= S(0.1);
}

}  // namespace detail

template <typename S>
NetworkParams<S> init_classifier_params(const ClassifierConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NetworkParams<S> p;
  std::vector<int> cpl_w = cfg.cpl_widths;
  cpl_w.push_back(cfg.m);
  Rng r0(mix_seed(seed, 1));
  p.cpl = make_stack<S>(3, cpl_w, /*final_relu=*/false, r0);
  Rng r1(mix_seed(seed, 2));
  p.area = make_stack<S>(cfg.area_input_width(), cfg.area_widths, true, r1);
  Rng r2(mix_seed(seed, 3));
  p.global = make_stack<S>(cfg.area_widths.back(), cfg.global_widths, true, r2);
  Rng r3(mix_seed(seed, 4));
  detail::append_head(p.head, cfg.g_dim(), cfg.head_widths, cfg.class_count, r3);
  return p;
}

template <typename S>
NetworkParams<S> init_segmenter_params(const SegmenterConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NetworkParams<S> p;
  std::vector<int> cpl_w = cfg.cpl_widths;
  cpl_w.push_back(cfg.cpl_m);
  Rng r0(mix_seed(seed, 1));
  p.cpl = make_stack<S>(3, cpl_w, /*final_relu=*/false, r0);
  Rng r1(mix_seed(seed, 2));
  p.area = make_stack<S>(cfg.area_input_width(), cfg.area_widths, true, r1);
  Rng r2(mix_seed(seed, 3));
  p.global = make_stack<S>(cfg.area_widths.back(), cfg.global_widths, true, r2);
  Rng r3(mix_seed(seed, 4));
  detail::append_head(p.head, cfg.point_input_width(), cfg.head_widths, cfg.part_count, r3);
  return p;
}

// ---------------------------------------------------------------------------
// Inverse-distance-weighted interpolation.

// Dense 1 x center-count weight row for one target: w_i = 1/d_i^2 over the
// k_sel nearest centers, normalized to sum 1. A target closer than 1e-10 to
// its nearest center takes that center's feature exactly.
template <typename S>
RowX<S> idw_weight_row(const Vec3<S>& target, const Points<S>& centers, int k_sel) {
  if (centers.rows() < 1) throw std::invalid_argument("idw: empty centers");
  if (k_sel < 1 || k_sel > centers.rows())
    throw std::invalid_argument("idw: need 1 <= k_interp <= center count");

  const std::vector<int> nearest = knn(centers, target, k_sel);
  RowX<S> w = RowX<S>::Zero(centers.rows());
  const S d0 = (centers.row(nearest[0]).transpose() - target).norm();
  if (d0 < S(1e-10)) {
    w[nearest[0]] = S(1);
    return w;
  }
  S total = S(0);
  for (int i : nearest) {
    const S d2 = (centers.row(i).transpose() - target).squaredNorm();
    w[i] = S(1) / d2;
    total += w[i];
  }
  w /= total;
  return w;
}

template <typename S>
RowX<S> idw_interpolate(const Vec3<S>& target, const Points<S>& centers,
                        const MatX<S>& center_feats, int k_interp) {
  if (center_feats.rows() != centers.rows())
    throw std::invalid_argument("idw: center/feature count mismatch");
  return idw_weight_row(target, centers, k_interp) * center_feats;
}

// ---------------------------------------------------------------------------
// Batched forward passes. Clouds are stacked row-wise; every per-cloud or
// per-area reduction works on row segments, and in train mode batch-norm
// statistics span all stacked rows of the batch.

template <typename S>
struct ClassifierBatchOut {
  typename Tape<S>::Var logits;                    // b x class_count
  std::vector<Points<S>> centers;                  // per cloud
  std::vector<std::vector<int>> critical_indices;  // per cloud; empty rows under FPS
  std::vector<int> distinct_counts;                // empty under FPS
};

template <typename S>
ClassifierBatchOut<S> classifier_forward_tape(Binder<S>& binder, NetworkParams<S>& params,
                                              const ClassifierConfig& cfg,
                                              const std::vector<const PointCloud<S>*>& clouds,
                                              Mode mode, Rng& dropout_rng) {
  cfg.validate();
  if (clouds.empty()) throw std::invalid_argument("classifier_forward: empty batch");
  Tape<S>& t = binder.tape();
  const int b = static_cast<int>(clouds.size());

  int total = 0;
  std::vector<SegSpan> cloud_rows(clouds.size());
  for (int c = 0; c < b; ++c) {
    const int n = static_cast<int>(clouds[static_cast<size_t>(c)]->size());
    if (n < 1) throw std::invalid_argument("classifier_forward: empty cloud");
    if (cfg.k > n) throw config_error("classifier: k exceeds cloud size");
    if (!cfg.use_cpl && cfg.m > n) throw config_error("classifier: FPS needs m <= cloud size");
    if (!cfg.use_cpl && cfg.fps_seed_index >= n)
      throw config_error("classifier: fps_seed_index exceeds cloud size");
    cloud_rows[static_cast<size_t>(c)] = {total, n};
    total += n;
  }

  ClassifierBatchOut<S> out;

  typename Tape<S>::Var g1;
  if (cfg.use_cpl || cfg.use_g1) {
    MatX<S> stacked(total, 3);
    for (int c = 0; c < b; ++c)
      stacked.middleRows(cloud_rows[static_cast<size_t>(c)].begin,
                         cloud_rows[static_cast<size_t>(c)].count) =
          clouds[static_cast<size_t>(c)]->coords;
    auto cpl = cpl_forward_tape(binder, t.constant(std::move(stacked)), cloud_rows, params.cpl, mode);
    g1 = cpl.g1;
    if (cfg.use_cpl) {
      out.critical_indices = std::move(cpl.critical_indices);
      out.distinct_counts = std::move(cpl.distinct_counts);
    }
  }

  out.centers.resize(clouds.size());
  for (int c = 0; c < b; ++c) {
    const PointCloud<S>& pc = *clouds[static_cast<size_t>(c)];
    if (cfg.use_cpl) {
      out.centers[static_cast<size_t>(c)] =
          select_centers<S>(out.critical_indices[static_cast<size_t>(c)], pc);
    } else {
      const std::vector<int> idx = farthest_point_sampling(pc.coords, cfg.m, cfg.fps_seed_index);
      Points<S> centers(cfg.m, 3);
      for (int i = 0; i < cfg.m; ++i) centers.row(i) = pc.coords.row(idx[static_cast<size_t>(i)]);
      out.centers[static_cast<size_t>(c)] = std::move(centers);
    }
  }

  // One row block per neighbor of every area of every cloud.
  MatX<S> area_rows(static_cast<Eigen::Index>(b) * cfg.m * cfg.k, cfg.area_input_width());
  std::vector<SegSpan> area_segments(static_cast<size_t>(b) * static_cast<size_t>(cfg.m));
  std::vector<SegSpan> cloud_area_segments(clouds.size());
  Eigen::Index at = 0;
  for (int c = 0; c < b; ++c) {
    const auto areas = build_local_areas(*clouds[static_cast<size_t>(c)],
                                         out.centers[static_cast<size_t>(c)], cfg.k);
    cloud_area_segments[static_cast<size_t>(c)] = {c * cfg.m, cfg.m};
    for (int a = 0; a < cfg.m; ++a) {
      area_rows.middleRows(at, cfg.k) = area_input_rows(areas[static_cast<size_t>(a)], cfg.mfc);
      area_segments[static_cast<size_t>(c * cfg.m + a)] = {static_cast<int>(at), cfg.k};
      at += cfg.k;
    }
  }

  auto area_feats =
      encode_areas_tape(binder, t.constant(std::move(area_rows)), area_segments, params.area, mode);
  auto g2 = aggregate_global_tape(binder, area_feats, cloud_area_segments, params.global, mode);

  auto g = cfg.use_g1 ? t.concat_cols({g1, g2}) : g2;

  auto h = g;
  for (size_t i = 0; i + 1 < params.head.layers.size(); ++i) {
    h = shared_mlp_layer(binder, h, params.head.layers[i], "head.l" + std::to_string(i), mode);
    h = t.dropout(h, cfg.dropout_ratio, mode, dropout_rng);
  }
  out.logits = shared_mlp_layer(binder, h, params.head.layers.back(),
                                "head.l" + std::to_string(params.head.layers.size() - 1), mode);
  return out;
}

template <typename S>
struct SegmenterBatchOut {
  typename Tape<S>::Var point_logits;  // total-points x part_count
  std::vector<SegSpan> cloud_rows;     // row span of each cloud in point_logits
  std::vector<Points<S>> centers;
  std::vector<int> distinct_counts;    // m' of the CPL pool feeding g1
};

// FPS seed for segmentation: the point farthest from the cloud centroid, ties
// broken lexicographically by coordinates. A fixed row index would make the
// sampled centers depend on input point order and break the row-permutation
// equivariance of the segmentation output.
template <typename S>
int canonical_fps_seed(const Points<S>& pts) {
  if (pts.rows() < 1) throw std::invalid_argument("canonical_fps_seed: empty cloud");
  const Eigen::Matrix<S, 1, 3> centroid = pts.colwise().mean();
  int best = 0;
  S best_d2 = (pts.row(0) - centroid).squaredNorm();
  for (Eigen::Index i = 1; i < pts.rows(); ++i) {
    const S d2 = (pts.row(i) - centroid).squaredNorm();
    bool better = d2 > best_d2;
    if (d2 == best_d2) {
      for (int a = 0; a < 3; ++a) {
        if (pts(i, a) != pts(best, a)) {
          better = pts(i, a) < pts(best, a);
          break;
        }
      }
    }
    if (better) {
      best = static_cast<int>(i);
      best_d2 = d2;
    }
  }
  return best;
}

template <typename S>
SegmenterBatchOut<S> segmenter_forward_tape(Binder<S>& binder, NetworkParams<S>& params,
                                            const SegmenterConfig& cfg,
                                            const std::vector<const PointCloud<S>*>& clouds,
                                            const MatX<S>& class_onehots, Mode mode,
                                            Rng& dropout_rng) {
  cfg.validate();
  if (clouds.empty()) throw std::invalid_argument("segmenter_forward: empty batch");
  if (class_onehots.rows() != static_cast<Eigen::Index>(clouds.size()) ||
      class_onehots.cols() != cfg.class_onehot_dim)
    throw std::invalid_argument("segmenter_forward: class_onehots shape mismatch");
  Tape<S>& t = binder.tape();
  const int b = static_cast<int>(clouds.size());

  SegmenterBatchOut<S> out;
  out.cloud_rows.resize(clouds.size());
  int total = 0;
  for (int c = 0; c < b; ++c) {
    const int n = static_cast<int>(clouds[static_cast<size_t>(c)]->size());
    if (n < 1) throw std::invalid_argument("segmenter_forward: empty cloud");
    if (cfg.k > n) throw config_error("segmenter: k exceeds cloud size");
    if (cfg.m > n) throw config_error("segmenter: FPS needs m <= cloud size");
    out.cloud_rows[static_cast<size_t>(c)] = {total, n};
    total += n;
  }

  MatX<S> stacked(total, 3);
  for (int c = 0; c < b; ++c)
    stacked.middleRows(out.cloud_rows[static_cast<size_t>(c)].begin,
                       out.cloud_rows[static_cast<size_t>(c)].count) =
        clouds[static_cast<size_t>(c)]->coords;
  auto cpl = cpl_forward_tape(binder, t.constant(std::move(stacked)), out.cloud_rows, params.cpl, mode);
  out.distinct_counts = cpl.distinct_counts;

  out.centers.resize(clouds.size());
  for (int c = 0; c < b; ++c) {
    const Points<S>& pts = clouds[static_cast<size_t>(c)]->coords;
    const std::vector<int> idx = farthest_point_sampling(pts, cfg.m, canonical_fps_seed(pts));
    Points<S> centers(cfg.m, 3);
    for (int i = 0; i < cfg.m; ++i) centers.row(i) = pts.row(idx[static_cast<size_t>(i)]);
    out.centers[static_cast<size_t>(c)] = std::move(centers);
  }

  MatX<S> area_rows(static_cast<Eigen::Index>(b) * cfg.m * cfg.k, cfg.area_input_width());
  std::vector<SegSpan> area_segments(static_cast<size_t>(b) * static_cast<size_t>(cfg.m));
  std::vector<SegSpan> cloud_area_segments(clouds.size());
  Eigen::Index at = 0;
  for (int c = 0; c < b; ++c) {
    const auto areas = build_local_areas(*clouds[static_cast<size_t>(c)],
                                         out.centers[static_cast<size_t>(c)], cfg.k);
    cloud_area_segments[static_cast<size_t>(c)] = {c * cfg.m, cfg.m};
    for (int a = 0; a < cfg.m; ++a) {
      area_rows.middleRows(at, cfg.k) = area_input_rows(areas[static_cast<size_t>(a)], cfg.mfc);
      area_segments[static_cast<size_t>(c * cfg.m + a)] = {static_cast<int>(at), cfg.k};
      at += cfg.k;
    }
  }

  auto area_feats =
      encode_areas_tape(binder, t.constant(std::move(area_rows)), area_segments, params.area, mode);
  auto g2 = aggregate_global_tape(binder, area_feats, cloud_area_segments, params.global, mode);
  auto g = cfg.use_g1 ? t.concat_cols({cpl.g1, g2}) : g2;

  // Propagate per-center area features to every point of its cloud. Each
  // cloud is one mix block whose weight matrix holds the IDW rows; targets
  // that sit on a center (FPS centers always do) copy that center's feature.
  const int k_sel = std::min(cfg.k_interp, cfg.m);
  std::vector<typename Tape<S>::MixBlock> blocks(clouds.size());
  for (int c = 0; c < b; ++c) {
    const Points<S>& pts = clouds[static_cast<size_t>(c)]->coords;
    MatX<S> w(pts.rows(), cfg.m);
    for (Eigen::Index j = 0; j < pts.rows(); ++j)
      w.row(j) = idw_weight_row<S>(pts.row(j).transpose(), out.centers[static_cast<size_t>(c)], k_sel);
    blocks[static_cast<size_t>(c)] = {std::move(w), c * cfg.m};
  }
  auto interp = t.row_mix(area_feats, blocks);

  std::vector<int> counts(clouds.size());
  for (int c = 0; c < b; ++c) counts[static_cast<size_t>(c)] = out.cloud_rows[static_cast<size_t>(c)].count;
  auto g_rows = t.expand_rows(g, counts);

  MatX<S> onehot_rows(total, cfg.class_onehot_dim);
  for (int c = 0; c < b; ++c)
    onehot_rows.middleRows(out.cloud_rows[static_cast<size_t>(c)].begin,
                           out.cloud_rows[static_cast<size_t>(c)].count) =
        class_onehots.row(c).replicate(out.cloud_rows[static_cast<size_t>(c)].count, 1);

  auto x = t.concat_cols({interp, cpl.point_features, g_rows, t.constant(std::move(onehot_rows))});

  auto h = x;
  for (size_t i = 0; i + 1 < params.head.layers.size(); ++i) {
    h = shared_mlp_layer(binder, h, params.head.layers[i], "head.l" + std::to_string(i), mode);
    h = t.dropout(h, cfg.dropout_ratio, mode, dropout_rng);
  }
  out.point_logits = shared_mlp_layer(binder, h, params.head.layers.back(),
                                      "head.l" + std::to_string(params.head.layers.size() - 1), mode);
  return out;
}

// ---------------------------------------------------------------------------
// Single-cloud entry points.

template <typename S>
struct ClassificationOutput {
  RowX<S> probabilities;  // 1 x class_count, sums to 1
  RowX<S> logits;
  Points<S> centers;
  std::vector<int> critical_indices;  // empty under FPS centers
  int distinct_count = 0;
};

template <typename S>
int argmax_index(const RowX<S>& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.cols(); ++j)
    if (row[j] > row[best]) best = static_cast<int>(j);
  return best;
}

template <typename S>
ClassificationOutput<S> classify_forward(const PointCloud<S>& pc, NetworkParams<S>& params,
                                         const ClassifierConfig& cfg, Mode mode = Mode::eval,
                                         Rng* dropout_rng = nullptr) {
  Tape<S> tape(false);
  Binder<S> binder(tape);
  Rng fallback(0);
  std::vector<const PointCloud<S>*> batch = {&pc};
  auto r = classifier_forward_tape(binder, params, cfg, batch, mode,
                                   dropout_rng ? *dropout_rng : fallback);
  auto probs = tape.softmax_rows(r.logits);

  ClassificationOutput<S> out;
  out.logits = tape.value(r.logits).row(0);
  out.probabilities = tape.value(probs).row(0);
  out.centers = std::move(r.centers[0]);
  if (cfg.use_cpl) {
    out.critical_indices = std::move(r.critical_indices[0]);
    out.distinct_count = r.distinct_counts[0];
  }
  return out;
}

template <typename S>
struct SegmentationOutput {
  MatX<S> per_point_scores;  // n x part_count, every row sums to 1
  std::vector<int> predicted_parts;
  Points<S> centers;
};

template <typename S>
SegmentationOutput<S> segment_forward(const PointCloud<S>& pc, const RowX<S>& class_onehot,
                                      NetworkParams<S>& params, const SegmenterConfig& cfg,
                                      Mode mode = Mode::eval, Rng* dropout_rng = nullptr) {
  if (class_onehot.cols() != cfg.class_onehot_dim)
    throw std::invalid_argument("segment_forward: class_onehot width mismatch");
  Tape<S> tape(false);
  Binder<S> binder(tape);
  Rng fallback(0);
  std::vector<const PointCloud<S>*> batch = {&pc};
  MatX<S> onehots = class_onehot;
  auto r = segmenter_forward_tape(binder, params, cfg, batch, onehots, mode,
                                  dropout_rng ? *dropout_rng : fallback);
  auto probs = tape.softmax_rows(r.point_logits);

  SegmentationOutput<S> out;
  out.per_point_scores = tape.value(probs);
  out.centers = std::move(r.centers[0]);
  out.predicted_parts.resize(static_cast<size_t>(out.per_point_scores.rows()));
  for (Eigen::Index i = 0; i < out.per_point_scores.rows(); ++i)
    out.predicted_parts[static_cast<size_t>(i)] = argmax_index<S>(out.per_point_scores.row(i));
  return out;
}

// Test-time voting: average the softmax outputs of n_votes anisotropically
// scaled copies (no shift, no jitter), always in eval mode.
template <typename S>
RowX<S> vote_predict(const PointCloud<S>& pc, NetworkParams<S>& params, const ClassifierConfig& cfg,
                     int n_votes, double scale_lo, double scale_hi, Rng& rng) {
  if (n_votes < 1) throw std::invalid_argument("vote_predict: n_votes must be >= 1");
  if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi))
    throw std::invalid_argument("vote_predict: need 0 < scale_lo <= scale_hi");
  std::uniform_real_distribution<double> draw(scale_lo, scale_hi);
  RowX<S> mean = RowX<S>::Zero(cfg.class_count);
  for (int v = 0; v < n_votes; ++v) {
    Eigen::Matrix<S, 1, 3> scale;
    for (int a = 0; a < 3; ++a) scale[a] = static_cast<S>(draw(rng));
    PointCloud<S> scaled;
    scaled.coords = pc.coords.array().rowwise() * scale.array();
    mean += classify_forward(scaled, params, cfg, Mode::eval).probabilities;
  }
  return mean / S(n_votes);
}

// ---------------------------------------------------------------------------
// Evaluation metrics.

inline double instance_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("instance_accuracy: size mismatch or empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += (pred[i] == truth[i]) ? 1u : 0u;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Mean over the shape's parts of |pred ∩ truth| / |pred ∪ truth|. A part that
// appears in neither prediction nor ground truth counts as IoU 1 so shapes
// lacking a part are not penalized.
inline double shape_iou(const std::vector<int>& pred, const std::vector<int>& truth,
                        const std::vector<int>& parts_of_shape) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("shape_iou: size mismatch or empty");
  if (parts_of_shape.empty()) throw std::invalid_argument("shape_iou: no parts given");
  double sum = 0.0;
  for (int part : parts_of_shape) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == part, q = truth[i] == part;
      inter += (p && q) ? 1u : 0u;
      uni += (p || q) ? 1u : 0u;
    }
    sum += (uni == 0) ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return sum / static_cast<double>(parts_of_shape.size());
}

inline double mean_iou(const std::vector<double>& shape_ious) {
  if (shape_ious.empty()) throw std::invalid_argument("mean_iou: empty");
  return std::accumulate(shape_ious.begin(), shape_ious.end(), 0.0) /
         static_cast<double>(shape_ious.size());
}

}  // namespace localnet
