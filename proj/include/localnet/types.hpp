// Core value types shared across the toolkit. Everything numeric is an
// Eigen dense matrix templated on the scalar so the same code runs in
// float for training and in double for the gradient-check suites.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace localnet {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowX = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <typename S>
using Points = Eigen::Matrix<S, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;

using Rng = std::mt19937_64;

// splitmix64-style mixer. Derives independent, reproducible streams for
// shuffling, augmentation and dropout so draws do not depend on batch
// grouping or evaluation order.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1) + 0xbf58476d1ce4e5b9ULL * (c + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct data_error : std::runtime_error {
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A point set with optional per-point extra feature columns.
template <typename S>
struct PointCloud {
  Points<S> coords;
  std::optional<MatX<S>> extras;

  PointCloud() = default;
  explicit PointCloud(Points<S> c) : coords(std::move(c)) {}

  Eigen::Index size() const { return coords.rows(); }
};

template <typename S>
struct LabeledSample {
  PointCloud<S> cloud;
  int shape_label = -1;
  std::vector<int> part_labels;  // empty when the sample carries none

  bool has_parts() const { return !part_labels.empty(); }
};

struct AugmentParams {
  double scale_lo = 0.66;
  double scale_hi = 1.4;
  double shift_range = 0.2;
  double noise_sigma = 0.01;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi))
      throw std::invalid_argument("augment: need 0 < scale_lo <= scale_hi");
    if (shift_range < 0.0) throw std::invalid_argument("augment: shift_range < 0");
    if (noise_sigma < 0.0) throw std::invalid_argument("augment: noise_sigma < 0");
  }
};

}  // namespace localnet
