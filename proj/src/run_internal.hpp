#pragma once

// Helpers shared by the run_* command implementations; not installed.

#include "localnet/dataset.hpp"
#include "localnet/train.hpp"

namespace localnet::detail {

struct LoadedData {
  Dataset<float> train;
  Dataset<float> test;
};

// Builds both splits from cfg.data (synthetic spec or manifest path) and
// normalizes every cloud to the unit sphere.
LoadedData load_data(const RunConfig& cfg);

// Part ids seen per shape class in the ground truth, sorted ascending.
std::vector<std::vector<int>> parts_by_class(const Dataset<float>& ds);

}  // namespace localnet::detail
