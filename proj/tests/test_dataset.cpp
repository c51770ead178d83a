#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "localnet/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace localnet;
namespace fs = std::filesystem;

namespace {

// chi-squared critical value, dof=3, alpha=0.001
constexpr double kChi2Crit3Dof = 16.266;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("localnet_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Mesh unit_triangle() {
  Mesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  m.faces = {{0, 1, 2}};
  return m;
}

}  // namespace

TEST_CASE("triangle_area computes the half-cross-product formula") {
  Eigen::RowVector3d a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  CHECK(triangle_area(a, b, c) == doctest::Approx(0.5));
  CHECK(triangle_area(a, b, b) == doctest::Approx(0.0));
}

TEST_CASE("mesh samples stay inside a single triangle") {
  const Mesh mesh = unit_triangle();
  Rng rng(1);
  const auto pc = sample_mesh_uniform<double>(mesh, 500, rng);
  for (Eigen::Index i = 0; i < pc.coords.rows(); ++i) {
    const double x = pc.coords(i, 0), y = pc.coords(i, 1), z = pc.coords(i, 2);
    CHECK(z == doctest::Approx(0.0));
    CHECK(x >= -1e-12);
    CHECK(y >= -1e-12);
    CHECK(x + y <= 1.0 + 1e-12);  // barycentric coordinates in [0,1], summing to 1
  }
}

TEST_CASE("mesh sampling is area weighted at 3:1 within 5 percent") {
  Mesh mesh;
  mesh.vertices.resize(6, 3);
  // triangle A with area 1.5, triangle B with area 0.5 (3:1)
  mesh.vertices << 0, 0, 0, 3, 0, 0, 0, 1, 0,  //
      10, 0, 0, 11, 0, 0, 10, 1, 0;
  mesh.faces = {{0, 1, 2}, {3, 4, 5}};
  Rng rng(2);
  const auto pc = sample_mesh_uniform<double>(mesh, 10000, rng);
  int in_a = 0;
  for (Eigen::Index i = 0; i < pc.coords.rows(); ++i)
    if (pc.coords(i, 0) < 5.0) ++in_a;
  const double ratio = double(in_a) / double(10000 - in_a);
  CHECK(ratio > 3.0 * 0.95);
  CHECK(ratio < 3.0 / 0.95);
}

TEST_CASE("mesh sampling triangle frequencies pass a chi-squared test on 4 triangles") {
  Mesh mesh;
  mesh.vertices.resize(12, 3);
  mesh.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0,      // area 0.5
      10, 0, 0, 12, 0, 0, 10, 1, 0,                // area 1.0
      20, 0, 0, 23, 0, 0, 20, 2, 0,                // area 3.0
      30, 0, 0, 31, 0, 0, 30, 3, 0;                // area 1.5
  mesh.faces = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}, {9, 10, 11}};
  const double total = 6.0;
  const double expected_share[4] = {0.5 / total, 1.0 / total, 3.0 / total, 1.5 / total};

  Rng rng(3);
  const int n = 10000;
  const auto pc = sample_mesh_uniform<double>(mesh, n, rng);
  int counts[4] = {0, 0, 0, 0};
  for (Eigen::Index i = 0; i < pc.coords.rows(); ++i) {
    const double x = pc.coords(i, 0);
    counts[x < 5 ? 0 : x < 15 ? 1 : x < 25 ? 2 : 3]++;
  }
  double chi2 = 0.0;
  for (int t = 0; t < 4; ++t) {
    const double expect = expected_share[t] * n;
    chi2 += (counts[t] - expect) * (counts[t] - expect) / expect;
  }
  CHECK(chi2 < kChi2Crit3Dof);  // p > 0.001 at dof = 3
}

TEST_CASE("mesh sampling is bit-identical for a fixed seed") {
  const Mesh mesh = unit_triangle();
  Rng r1(42), r2(42);
  const auto a = sample_mesh_uniform<float>(mesh, 64, r1);
  const auto b = sample_mesh_uniform<float>(mesh, 64, r2);
  CHECK(a.coords == b.coords);
}

TEST_CASE("synthetic sphere points have unit norm before jitter") {
  Rng rng(4);
  const auto s = generate_synthetic<double>(Primitive::sphere, 128, 0.0, rng);
  for (Eigen::Index i = 0; i < s.cloud.coords.rows(); ++i)
    CHECK(s.cloud.coords.row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
  // hemisphere labeling: z >= 0 is one part, z < 0 the other
  for (Eigen::Index i = 0; i < s.cloud.coords.rows(); ++i) {
    const bool upper = s.cloud.coords(i, 2) >= 0.0;
    CHECK(s.part_labels[static_cast<size_t>(i)] == (upper ? 0 : 1));
  }
}

TEST_CASE("synthetic cube points lie on a face with one coordinate at half side") {
  Rng rng(5);
  const auto s = generate_synthetic<double>(Primitive::cube, 128, 0.0, rng);
  for (Eigen::Index i = 0; i < s.cloud.coords.rows(); ++i) {
    const auto row = s.cloud.coords.row(i);
    const bool on_face = std::abs(std::abs(row(0)) - 0.5) < 1e-12 ||
                         std::abs(std::abs(row(1)) - 0.5) < 1e-12 ||
                         std::abs(std::abs(row(2)) - 0.5) < 1e-12;
    CHECK(on_face);
    CHECK(row.cwiseAbs().maxCoeff() <= 0.5 + 1e-12);
    // z-faces are part 2*class, side faces 2*class+1 (cube is class 1)
    const bool on_z_face = std::abs(std::abs(row(2)) - 0.5) < 1e-12;
    if (on_z_face)
      CHECK(s.part_labels[static_cast<size_t>(i)] == 2);
    else
      CHECK(s.part_labels[static_cast<size_t>(i)] == 3);
  }
}

TEST_CASE("synthetic cylinder caps sit at exactly half height before jitter") {
  Rng rng(6);
  const auto s = generate_synthetic<double>(Primitive::cylinder, 256, 0.0, rng);
  int caps = 0;
  for (Eigen::Index i = 0; i < s.cloud.coords.rows(); ++i) {
    const double z = s.cloud.coords(i, 2);
    const int part = s.part_labels[static_cast<size_t>(i)];
    REQUIRE((part == 4 || part == 5));  // cylinder is class 2
    if (part == 4) {
      CHECK(std::abs(z) == doctest::Approx(0.5));  // caps: |z| = h/2 exactly
      ++caps;
    } else {
      const double r = std::hypot(s.cloud.coords(i, 0), s.cloud.coords(i, 1));
      CHECK(r == doctest::Approx(0.5).epsilon(1e-9));  // barrel radius
    }
  }
  CHECK(caps > 0);
  CHECK(caps < 256);
}

TEST_CASE("generate_synthetic rejects tiny clouds and unknown names resolve strictly") {
  Rng rng(7);
  CHECK_THROWS_AS(generate_synthetic<float>(Primitive::plane, 4, 0.0, rng),
                  std::invalid_argument);
  CHECK(primitive_from_name("torus") == Primitive::torus);
  CHECK_THROWS_AS(primitive_from_name("pyramid"), data_error);
}

TEST_CASE("make_synthetic_dataset remaps labels and keeps per-sample seeding stable") {
  Dataset<float> full =
      make_synthetic_dataset<float>({"sphere", "cube", "torus"}, 3, 64, 0.0, 11, true);
  REQUIRE(full.samples.size() == 9);
  CHECK(full.class_count() == 3);
  CHECK(full.part_count == 6);
  CHECK(full.samples[0].shape_label == 0);
  CHECK(full.samples[8].shape_label == 2);
  for (const auto& s : full.samples)
    for (int p : s.part_labels) {
      CHECK(p >= 2 * s.shape_label);
      CHECK(p <= 2 * s.shape_label + 1);
    }

  // the same (primitive, ordinal) pair yields the same geometry even when the
  // class list shrinks or reorders
  Dataset<float> subset = make_synthetic_dataset<float>({"torus", "sphere"}, 3, 64, 0.0, 11, true);
  CHECK(subset.samples[0].cloud.coords == full.samples[6].cloud.coords);  // torus #0
  CHECK(subset.samples[3].cloud.coords == full.samples[0].cloud.coords);  // sphere #0
  CHECK(subset.samples[0].shape_label == 0);  // but labels follow the new class order
}

TEST_CASE("batch_indices shuffles, covers every index once, and keeps the partial batch") {
  Rng rng(8);
  const auto batches = batch_indices(10, 4, true, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);
  std::set<int> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 10);

  Rng r1(9), r2(9);
  CHECK(batch_indices(10, 4, true, r1) == batch_indices(10, 4, true, r2));
  Rng r3(10);
  const auto plain = batch_indices(5, 2, false, r3);
  CHECK(plain[0] == std::vector<int>{0, 1});
  CHECK(plain[2] == std::vector<int>{4});
}

TEST_CASE("cloud CSV round-trips bit-identically, with and without labels") {
  TempDir tmp;
  Rng rng(12);
  PointCloud<float> pc;
  pc.coords.resize(7, 3);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (Eigen::Index i = 0; i < 7; ++i)
    for (int c = 0; c < 3; ++c) pc.coords(i, c) = d(rng);

  const std::string plain = (tmp.path / "plain.csv").string();
  save_cloud_csv(plain, pc, nullptr);
  const auto [back, no_labels] = load_cloud_csv(plain);
  CHECK(back.coords == pc.coords);
  CHECK(no_labels.empty());

  std::vector<int> labels{0, 1, 2, 0, 1, 2, 0};
  const std::string with = (tmp.path / "with.csv").string();
  save_cloud_csv(with, pc, &labels);
  const auto [back2, labels2] = load_cloud_csv(with);
  CHECK(back2.coords == pc.coords);
  CHECK(labels2 == labels);
}

TEST_CASE("cloud CSV loader reports malformed input with line numbers") {
  TempDir tmp;
  const std::string path = (tmp.path / "bad.csv").string();
  {
    std::ofstream f(path);
    f << "x,y,z\n1,2\n";
  }
  CHECK_THROWS_AS(load_cloud_csv(path), data_error);
  CHECK_THROWS_AS(load_cloud_csv((tmp.path / "missing.csv").string()), data_error);
}

TEST_CASE("manifest round-trip and split filtering") {
  TempDir tmp;
  Dataset<float> ds = make_synthetic_dataset<float>({"sphere", "cube"}, 2, 64, 0.0, 13, true);
  Dataset<float> train, test;
  train.class_names = test.class_names = ds.class_names;
  train.part_count = test.part_count = ds.part_count;
  train.samples = {ds.samples[0], ds.samples[2]};
  test.samples = {ds.samples[1], ds.samples[3]};

  save_dataset_csv(tmp.path.string(), train, "train");
  save_dataset_csv(tmp.path.string(), test, "test");

  const auto loaded_train = load_manifest_dataset((tmp.path / "manifest.csv").string(), "train");
  const auto loaded_test = load_manifest_dataset((tmp.path / "manifest.csv").string(), "test");
  REQUIRE(loaded_train.samples.size() == 2);
  REQUIRE(loaded_test.samples.size() == 2);
  CHECK(loaded_train.class_names == std::vector<std::string>{"sphere", "cube"});
  CHECK(loaded_train.samples[0].cloud.coords == ds.samples[0].cloud.coords);
  CHECK(loaded_test.samples[1].cloud.coords == ds.samples[3].cloud.coords);
  CHECK(loaded_train.samples[1].shape_label == 1);
  CHECK(loaded_train.part_count == 4);
}

TEST_CASE("OFF loader handles triangles, fans quads, and rejects truncation") {
  TempDir tmp;
  {
    std::ofstream f(tmp.path / "tri.off");
    f << "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
  }
  const Mesh tri = load_off((tmp.path / "tri.off").string());
  CHECK(tri.vertices.rows() == 3);
  CHECK(tri.faces.size() == 1);

  {
    std::ofstream f(tmp.path / "quad.off");
    f << "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
  }
  const Mesh quad = load_off((tmp.path / "quad.off").string());
  CHECK(quad.faces.size() == 2);  // fan triangulation
  CHECK(quad.faces[0] == std::array<int, 3>{0, 1, 2});
  CHECK(quad.faces[1] == std::array<int, 3>{0, 2, 3});

  {
    std::ofstream f(tmp.path / "trunc.off");
    f << "OFF\n3 1 0\n0 0 0\n1 0 0\n";
  }
  CHECK_THROWS_AS(load_off((tmp.path / "trunc.off").string()), data_error);
}
