#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"
#include "localnet/local_features.hpp"

#include <cmath>

using namespace localnet;

namespace {

constexpr double kTolRotation = 1e-6;
constexpr double kTolGrad = 1e-4;

Points<float> random_points(int n, Rng& rng, float scale = 1.0f) {
  std::normal_distribution<float> d(0.0f, scale);
  Points<float> p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = d(rng);
  return p;
}

constexpr MfcMask kAllPhi{true, true, true};
constexpr MfcMask kNoPhi{false, false, false};

}  // namespace

TEST_CASE("a center that is a cloud point is its own single nearest neighbor") {
  Rng rng(1);
  PointCloud<float> pc;
  pc.coords = random_points(10, rng);
  Points<float> centers = pc.coords.row(4);
  const auto areas = build_local_areas(pc, centers, 1);
  REQUIRE(areas.size() == 1);
  CHECK(areas[0].neighbor_indices == std::vector<int>{4});
  CHECK(areas[0].rel_coords.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("relative coordinates are bit-identical under whole-cloud translation") {
  // Cloud and shift live on a dyadic grid (multiples of 2^-10) so every
  // addition is exact in float and the translation cancels bitwise.
  Rng rng(2);
  PointCloud<float> pc;
  pc.coords = random_points(20, rng);
  pc.coords = (pc.coords * 1024.0f).array().round().matrix() / 1024.0f;
  Points<float> centers(3, 3);
  centers << pc.coords.row(0), pc.coords.row(7), pc.coords.row(13);

  PointCloud<float> moved;
  Eigen::Matrix<float, 1, 3> t;
  t << 0.5f, -2.0f, 0.25f;
  moved.coords = pc.coords.rowwise() + t;
  Points<float> moved_centers = centers.rowwise() + t;

  const auto a = build_local_areas(pc, centers, 6);
  const auto b = build_local_areas(moved, moved_centers, 6);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].neighbor_indices == b[i].neighbor_indices);
    CHECK(a[i].rel_coords == b[i].rel_coords);
  }
}

TEST_CASE("duplicate centers produce duplicate identical areas") {
  Rng rng(3);
  PointCloud<float> pc;
  pc.coords = random_points(15, rng);
  Points<float> centers(2, 3);
  centers.row(0) = pc.coords.row(3);
  centers.row(1) = pc.coords.row(3);
  const auto areas = build_local_areas(pc, centers, 4);
  CHECK(areas[0].neighbor_indices == areas[1].neighbor_indices);
  CHECK(areas[0].rel_coords == areas[1].rel_coords);
}

TEST_CASE("metric features of a fully coincident area are all zero") {
  LocalArea<double> area;
  area.rel_coords = Points<double>::Zero(5, 3);
  area.neighbor_indices = {0, 1, 2, 3, 4};
  CHECK(metric_features(area).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("metric features match the hand-worked three-point example") {
  LocalArea<double> area;
  area.rel_coords.resize(3, 3);
  area.rel_coords << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  area.neighbor_indices = {0, 1, 2};
  const MatX<double> phi = metric_features(area);
  const double rt2 = std::sqrt(2.0);
  CHECK(phi(0, 0) == doctest::Approx(0.0));
  CHECK(phi(1, 0) == doctest::Approx(1.0));
  CHECK(phi(2, 0) == doctest::Approx(1.0));
  CHECK(phi(0, 1) == doctest::Approx(1.0));
  CHECK(phi(1, 1) == doctest::Approx(rt2));
  CHECK(phi(2, 1) == doctest::Approx(rt2));
  for (int r = 0; r < 3; ++r) CHECK(phi(r, 2) == doctest::Approx(rt2));
}

TEST_CASE("metric features are rotation invariant within 1e-6") {
  Rng rng(4);
  for (int t = 0; t < 25; ++t) {
    LocalArea<double> area;
    area.rel_coords = random_points(8, rng).cast<double>();
    area.neighbor_indices.resize(8);

    const Eigen::Matrix3d R =
        (Eigen::AngleAxisd(0.1 + t, Eigen::Vector3d::UnitX()) *
         Eigen::AngleAxisd(0.7 * t, Eigen::Vector3d::UnitZ()))
            .toRotationMatrix();
    LocalArea<double> rotated = area;
    rotated.rel_coords = area.rel_coords * R.transpose();

    const MatX<double> a = metric_features(area);
    const MatX<double> b = metric_features(rotated);
    CHECK((a - b).cwiseAbs().maxCoeff() < kTolRotation);
  }
}

TEST_CASE("phi ordering: phi2 <= phi3 everywhere, phi1 <= phi2 with the center present") {
  Rng rng(5);
  for (int t = 0; t < 40; ++t) {
    LocalArea<double> area;
    const int k = 2 + static_cast<int>(rng() % 31);
    area.rel_coords = random_points(k, rng).cast<double>();
    area.rel_coords.row(0).setZero();  // the center itself, as knn returns it
    area.neighbor_indices.resize(static_cast<size_t>(k));
    const MatX<double> phi = metric_features(area);
    for (int r = 0; r < k; ++r) {
      CHECK(phi(r, 1) <= phi(r, 2) + 1e-12);
      CHECK(phi(r, 0) <= phi(r, 1) + 1e-12);
    }
  }
}

TEST_CASE("phi3 equals the brute-force diameter over all pairs") {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const int k = 1 + static_cast<int>(rng() % 32);
    LocalArea<double> area;
    area.rel_coords = random_points(k, rng).cast<double>();
    area.neighbor_indices.resize(static_cast<size_t>(k));
    const MatX<double> phi = metric_features(area);
    double diameter = 0.0;
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        diameter = std::max(diameter, (area.rel_coords.row(i) - area.rel_coords.row(j)).norm());
    for (int r = 0; r < k; ++r) CHECK(phi(r, 2) == doctest::Approx(diameter).epsilon(1e-12));
  }
}

TEST_CASE("mfc masks add exactly the selected phi columns after the coordinates") {
  Rng rng(7);
  LocalArea<float> area;
  area.rel_coords = random_points(6, rng);
  area.neighbor_indices.resize(6);
  const MatX<float> phi = metric_features(area);

  CHECK(area_input_rows(area, kNoPhi).cols() == 3);
  CHECK(area_input_rows(area, kAllPhi).cols() == 6);
  const MatX<float> with_phi2 = area_input_rows(area, MfcMask{false, true, false});
  REQUIRE(with_phi2.cols() == 4);
  CHECK(with_phi2.leftCols(3) == area.rel_coords);
  CHECK(with_phi2.col(3) == phi.col(1));
  // phi1 and phi3 keep their relative order when both are on
  const MatX<float> no_phi2 = area_input_rows(area, MfcMask{true, false, true});
  CHECK(no_phi2.col(3) == phi.col(0));
  CHECK(no_phi2.col(4) == phi.col(2));
}

TEST_CASE("stack_area_inputs concatenates areas with per-area segments") {
  Rng rng(8);
  PointCloud<float> pc;
  pc.coords = random_points(30, rng);
  Points<float> centers(3, 3);
  centers << pc.coords.row(1), pc.coords.row(10), pc.coords.row(20);
  const auto areas = build_local_areas(pc, centers, 5);
  const auto [rows, segments] = stack_area_inputs(areas, kAllPhi);
  REQUIRE(rows.rows() == 15);
  REQUIRE(rows.cols() == 6);
  REQUIRE(segments.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(segments[static_cast<size_t>(i)].begin == 5 * i);
    CHECK(segments[static_cast<size_t>(i)].count == 5);
    CHECK(rows.middleRows(5 * i, 5) == area_input_rows(areas[static_cast<size_t>(i)], kAllPhi));
  }
}

TEST_CASE("an area of identical rows encodes to exactly its per-row encoding") {
  Rng rng(9);
  auto stack = make_stack<float>(6, {8, 12}, true, rng);
  LocalArea<float> area;
  area.rel_coords.resize(4, 3);
  for (int r = 0; r < 4; ++r) area.rel_coords.row(r) << 0.3f, -0.2f, 0.9f;
  area.neighbor_indices = {0, 0, 0, 0};

  const MatX<float> feats = encode_areas(std::vector<LocalArea<float>>{area}, stack, kAllPhi,
                                         Mode::eval);
  REQUIRE(feats.rows() == 1);

  LocalArea<float> single;
  single.rel_coords = area.rel_coords.topRows(1);
  single.neighbor_indices = {0};
  const MatX<float> one = encode_areas(std::vector<LocalArea<float>>{single}, stack, kAllPhi,
                                       Mode::eval);
  CHECK(feats == one);  // max over equal rows is the row
}

TEST_CASE("area encodings are bit-identical under in-area row permutation") {
  Rng rng(10);
  auto stack = make_stack<float>(6, {8, 12}, true, rng);
  for (int t = 0; t < 20; ++t) {
    LocalArea<float> area;
    area.rel_coords = random_points(7, rng);
    area.neighbor_indices.resize(7);
    LocalArea<float> shuffled = area;
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < 7; ++i)
      shuffled.rel_coords.row(perm[static_cast<size_t>(i)]) = area.rel_coords.row(i);

    const MatX<float> a =
        encode_areas(std::vector<LocalArea<float>>{area}, stack, kAllPhi, Mode::eval);
    const MatX<float> b =
        encode_areas(std::vector<LocalArea<float>>{shuffled}, stack, kAllPhi, Mode::eval);
    CHECK(a == b);
  }
}

TEST_CASE("two-area encoder toy passes finite differences") {
  Rng rng(11);
  auto ref_stack = make_stack<double>(6, {5, 4}, true, rng);

  std::vector<LocalArea<double>> areas(2);
  areas[0].rel_coords = random_points(3, rng).cast<double>();
  areas[0].neighbor_indices = {0, 1, 2};
  areas[1].rel_coords = random_points(3, rng).cast<double>();
  areas[1].neighbor_indices = {0, 1, 2};
  const auto [rows, segments] = stack_area_inputs(areas, kAllPhi);
  const MatX<double> lw = gradcheck::random_mat(2, 4, rng);

  auto fwd = [&](const std::vector<MatX<double>>& vals, bool want) {
    MlpStack<double> stack = ref_stack;
    stack.layers[0].weight = vals[0];
    stack.layers[1].weight = vals[1];
    Tape<double> tape(want);
    Binder<double> binder(tape);
    auto feats = encode_areas_tape(binder, tape.constant(rows), segments, stack, Mode::train);
    auto loss = tape.reduce_sum(tape.mul(feats, tape.constant(lw)));
    gradcheck::ForwardResult r;
    r.loss = tape.value(loss)(0, 0);
    if (want) {
      tape.backward(loss);
      for (const auto& e : binder.entries())
        if (e.name == "area.l0.weight" || e.name == "area.l1.weight")
          r.leaf_grads.push_back(tape.grad(e.var));
    }
    return r;
  };
  const auto rep = gradcheck::check_gradients(
      fwd, {{"w0", ref_stack.layers[0].weight}, {"w1", ref_stack.layers[1].weight}});
  CHECK(rep.max_rel_err < kTolGrad);
}

TEST_CASE("aggregate_global of one area is that area's encoding") {
  Rng rng(12);
  auto stack = make_stack<float>(5, {6, 9}, true, rng);
  MatX<float> area_feats = MatX<float>::Random(1, 5);
  const RowX<float> g2 = aggregate_global(area_feats, stack, Mode::eval);
  REQUIRE(g2.cols() == 9);

  // push the single row through the stack directly
  Tape<float> tape(false);
  Binder<float> binder(tape);
  auto h = stack.forward(binder, tape.constant(area_feats), "global", Mode::eval);
  CHECK(g2 == tape.value(h).row(0));
}

TEST_CASE("g2 is bit-identical under area permutation and duplicate areas") {
  Rng rng(13);
  auto stack = make_stack<float>(5, {6, 9}, true, rng);
  MatX<float> feats = MatX<float>::Random(8, 5);

  const RowX<float> base = aggregate_global(feats, stack, Mode::eval);

  MatX<float> reversed = feats.colwise().reverse();
  CHECK(aggregate_global(reversed, stack, Mode::eval) == base);

  MatX<float> doubled(16, 5);
  doubled.topRows(8) = feats;
  doubled.bottomRows(8) = feats;
  CHECK(aggregate_global(doubled, stack, Mode::eval) == base);
}

TEST_CASE("g2 is invariant under point permutations that preserve the center list") {
  Rng rng(14);
  auto area_stack = make_stack<float>(6, {8, 12}, true, rng);
  auto global_stack = make_stack<float>(12, {10, 7}, true, rng);

  PointCloud<float> pc;
  pc.coords = random_points(25, rng);
  Points<float> centers(4, 3);
  centers << pc.coords.row(2), pc.coords.row(9), pc.coords.row(11), pc.coords.row(19);

  auto run = [&](const PointCloud<float>& cloud, const Points<float>& ctrs) {
    const auto areas = build_local_areas(cloud, ctrs, 5);
    const MatX<float> feats = encode_areas(areas, area_stack, kAllPhi, Mode::eval);
    return aggregate_global(feats, global_stack, Mode::eval);
  };

  const RowX<float> base = run(pc, centers);

  // permute the points (the center coordinate list stays fixed)
  std::vector<int> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  PointCloud<float> shuffled;
  shuffled.coords.resize(25, 3);
  for (int i = 0; i < 25; ++i) shuffled.coords.row(perm[static_cast<size_t>(i)]) = pc.coords.row(i);
  CHECK(run(shuffled, centers) == base);

  // permute the centers themselves
  Points<float> centers_reversed = centers.colwise().reverse();
  CHECK(run(pc, centers_reversed) == base);
}
