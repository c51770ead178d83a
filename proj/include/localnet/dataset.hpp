// Dataset plumbing: triangle meshes and area-weighted surface sampling,
// synthetic desk-scale primitives with exact two-part labelings, and epoch
// batching. Text formats (OFF, CSV clouds, manifests) live in dataset_io.cpp.
#pragma once

#include "localnet/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace localnet {

struct Mesh {
  MatX<double> vertices;                  // v x 3
  std::vector<std::array<int, 3>> faces;  // triangles; polygons are fan-split on load
};

Mesh load_off(const std::string& path);

inline double triangle_area(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b,
                            const Eigen::RowVector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

// Uniform surface sampling: triangles weighted by area, position inside the
// winner via p = (1-sqrt(r1)) A + sqrt(r1)(1-r2) B + sqrt(r1) r2 C.
// Per sample the draw order is fixed (triangle pick, r1, r2).
template <typename S>
PointCloud<S> sample_mesh_uniform(const Mesh& mesh, int n_points, Rng& rng) {
  if (n_points < 1) throw std::invalid_argument("sample_mesh_uniform: n_points must be >= 1");
  if (mesh.faces.empty()) throw std::invalid_argument("sample_mesh_uniform: mesh has no faces");

  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& tri = mesh.faces[f];
    total += triangle_area(mesh.vertices.row(tri[0]), mesh.vertices.row(tri[1]),
                           mesh.vertices.row(tri[2]));
    cumulative[f] = total;
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_mesh_uniform: zero total surface area");

  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud<S> out;
  out.coords.resize(n_points, 3);
  for (int i = 0; i < n_points; ++i) {
    const double pick = u(rng) * total;
    const size_t f = static_cast<size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    const auto& tri = mesh.faces[std::min(f, mesh.faces.size() - 1)];
    const Eigen::RowVector3d a = mesh.vertices.row(tri[0]);
    const Eigen::RowVector3d b = mesh.vertices.row(tri[1]);
    const Eigen::RowVector3d c = mesh.vertices.row(tri[2]);
    const double s1 = std::sqrt(u(rng));
    const double r2 = u(rng);
    const Eigen::RowVector3d p = (1.0 - s1) * a + s1 * (1.0 - r2) * b + s1 * r2 * c;
    out.coords.row(i) = p.cast<S>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic primitives. Every class has a two-part labeling with exact
// geometric ground truth; labels are assigned before jitter is added. Part
// ids are global: primitive c owns parts 2c and 2c+1.

enum class Primitive { sphere = 0, cube = 1, cylinder = 2, plane = 3, torus = 4 };

inline const std::vector<std::string>& primitive_names() {
  static const std::vector<std::string> names = {"sphere", "cube", "cylinder", "plane", "torus"};
  return names;
}

inline Primitive primitive_from_name(const std::string& name) {
  const auto& names = primitive_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Primitive>(i);
  throw data_error("unknown primitive class: " + name);
}

// Surface samples of the unit-scale primitive plus exact part labels:
//   sphere   (radius 1):            upper hemisphere (z >= 0) vs lower
//   cube     (side 1, centered):    top/bottom faces vs the four sides
//   cylinder (r=0.5, h=1):          caps (|z| = 0.5) vs barrel
//   plane    (unit square, z=0):    interior vs border band max(|x|,|y|) >= 0.4
//   torus    (R=0.75, r=0.25):      outer half (cos(theta) >= 0) vs inner
template <typename S>
LabeledSample<S> generate_synthetic(Primitive cls, int n_points, double jitter_sigma, Rng& rng) {
  if (n_points < 8) throw std::invalid_argument("generate_synthetic: n_points must be >= 8");
  if (jitter_sigma < 0.0) throw std::invalid_argument("generate_synthetic: jitter_sigma < 0");

  LabeledSample<S> out;
  out.shape_label = static_cast<int>(cls);
  out.cloud.coords.resize(n_points, 3);
  out.part_labels.resize(static_cast<size_t>(n_points));
  const int part0 = 2 * static_cast<int>(cls);

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr double kPi = 3.14159265358979323846;

  for (int i = 0; i < n_points; ++i) {
    double x = 0, y = 0, z = 0;
    int part = part0;
    switch (cls) {
      case Primitive::sphere: {
        do {
          x = gauss(rng);
          y = gauss(rng);
          z = gauss(rng);
        } while (x * x + y * y + z * z < 1e-12);
        const double inv = 1.0 / std::sqrt(x * x + y * y + z * z);
        x *= inv;
        y *= inv;
        z *= inv;
        part = (z >= 0.0) ? part0 : part0 + 1;
        break;
      }
      case Primitive::cube: {
        const int face = std::min(5, static_cast<int>(u(rng) * 6.0));
        const double a = u(rng) - 0.5, b = u(rng) - 0.5;
        const double fixed = (face % 2 == 0) ? 0.5 : -0.5;
        if (face < 2) {            // z = +/- 0.5: top and bottom
          x = a; y = b; z = fixed;
          part = part0;
        } else if (face < 4) {     // x = +/- 0.5
          x = fixed; y = a; z = b;
          part = part0 + 1;
        } else {                   // y = +/- 0.5
          x = a; y = fixed; z = b;
          part = part0 + 1;
        }
        break;
      }
      case Primitive::cylinder: {
        // Areas: two caps pi*r^2 each, barrel 2*pi*r*h; r=0.5, h=1 gives a
        // barrel probability of 2/3.
        const double r = 0.5, h = 1.0;
        const double cap_area = kPi * r * r;
        const double barrel_area = 2.0 * kPi * r * h;
        const double pick = u(rng) * (2.0 * cap_area + barrel_area);
        if (pick < barrel_area) {
          const double theta = 2.0 * kPi * u(rng);
          x = r * std::cos(theta);
          y = r * std::sin(theta);
          z = h * (u(rng) - 0.5);
          part = part0 + 1;
        } else {
          const double theta = 2.0 * kPi * u(rng);
          const double rad = r * std::sqrt(u(rng));
          x = rad * std::cos(theta);
          y = rad * std::sin(theta);
          z = (pick < barrel_area + cap_area) ? h / 2.0 : -h / 2.0;
          part = part0;
        }
        break;
      }
      case Primitive::plane: {
        x = u(rng) - 0.5;
        y = u(rng) - 0.5;
        z = 0.0;
        part = (std::max(std::abs(x), std::abs(y)) >= 0.4) ? part0 + 1 : part0;
        break;
      }
      case Primitive::torus: {
        // Density over the tube angle is proportional to R + r*cos(theta);
        // rejection against the maximum R + r keeps the sampling uniform in
        // surface area.
        const double R = 0.75, r = 0.25;
        double theta = 0.0;
        do {
          theta = 2.0 * kPi * u(rng);
        } while (u(rng) * (R + r) > R + r * std::cos(theta));
        const double phi = 2.0 * kPi * u(rng);
        const double ring = R + r * std::cos(theta);
        x = ring * std::cos(phi);
        y = ring * std::sin(phi);
        z = r * std::sin(theta);
        part = (std::cos(theta) >= 0.0) ? part0 : part0 + 1;
        break;
      }
    }
    out.part_labels[static_cast<size_t>(i)] = part;
    if (jitter_sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, jitter_sigma);
      x += noise(rng);
      y += noise(rng);
      z += noise(rng);
    }
    out.cloud.coords(i, 0) = static_cast<S>(x);
    out.cloud.coords(i, 1) = static_cast<S>(y);
    out.cloud.coords(i, 2) = static_cast<S>(z);
  }
  return out;
}

template <typename S>
struct Dataset {
  std::vector<LabeledSample<S>> samples;
  std::vector<std::string> class_names;
  int part_count = 0;  // 0 when samples carry no part labels

  int class_count() const { return static_cast<int>(class_names.size()); }
};

// count_per_class samples of each named primitive; shape labels are remapped
// to the position in `classes` (and part ids to 2*label, 2*label+1) so a
// subset of primitives still yields dense label ranges. Each sample draws
// from its own seeded stream, so the set is stable under reordering.
template <typename S>
Dataset<S> make_synthetic_dataset(const std::vector<std::string>& classes, int count_per_class,
                                  int n_points, double jitter_sigma, std::uint64_t seed,
                                  bool with_parts) {
  if (classes.empty()) throw std::invalid_argument("make_synthetic_dataset: no classes");
  if (count_per_class < 1) throw std::invalid_argument("make_synthetic_dataset: count_per_class < 1");
  Dataset<S> ds;
  ds.class_names = classes;
  ds.part_count = with_parts ? 2 * static_cast<int>(classes.size()) : 0;
  ds.samples.reserve(classes.size() * static_cast<size_t>(count_per_class));
  for (size_t ci = 0; ci < classes.size(); ++ci) {
    const Primitive prim = primitive_from_name(classes[ci]);
    for (int si = 0; si < count_per_class; ++si) {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(prim), static_cast<std::uint64_t>(si)));
      LabeledSample<S> s = generate_synthetic<S>(prim, n_points, jitter_sigma, rng);
      const int old0 = 2 * s.shape_label;
      s.shape_label = static_cast<int>(ci);
      if (with_parts) {
        for (int& p : s.part_labels) p = 2 * static_cast<int>(ci) + (p - old0);
      } else {
        s.part_labels.clear();
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// Index batches for one epoch: full shuffle when asked, last partial batch
// kept.
inline std::vector<std::vector<int>> batch_indices(int count, int batch_size, bool shuffle,
                                                   Rng& rng) {
  if (count < 1) throw std::invalid_argument("batch_indices: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("batch_indices: batch_size < 1");
  std::vector<int> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (int at = 0; at < count; at += batch_size) {
    const int len = std::min(batch_size, count - at);
    batches.emplace_back(order.begin() + at, order.begin() + at + len);
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Text formats, implemented in dataset_io.cpp with float payloads (the
// training scalar). Floats print as %.9g so a written cloud re-reads
// bit-identically.

void save_cloud_csv(const std::string& path, const PointCloud<float>& pc,
                    const std::vector<int>* labels = nullptr);
std::pair<PointCloud<float>, std::vector<int>> load_cloud_csv(const std::string& path);

struct ManifestEntry {
  std::string relative_path;
  std::string class_name;
  std::string split;  // empty when the manifest has no split column
};

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);

// Reads every cloud a manifest references (paths relative to the manifest's
// directory). Entries whose split does not match `split` are skipped; an
// empty `split` takes everything.
Dataset<float> load_manifest_dataset(const std::string& manifest_path, const std::string& split);

// Writes ds as one CSV per sample plus a manifest, under dir. All samples get
// the given split tag.
void save_dataset_csv(const std::string& dir, const Dataset<float>& ds, const std::string& split,
                      const std::string& manifest_name = "manifest.csv");

}  // namespace localnet
