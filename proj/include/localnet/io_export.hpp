// Viewer-facing exports: ASCII PLY point clouds (optionally colored by
// label) and the CSV prediction/segmentation reports.
#pragma once

#include "localnet/types.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace localnet {

// Fixed palette indexed modulo by label; distinct nearby labels get clearly
// distinct colors.
std::array<std::uint8_t, 3> label_color(int label);

void save_ply(const std::string& path, const Points<float>& pts,
              const std::vector<std::array<std::uint8_t, 3>>* colors = nullptr);

struct PredictionRow {
  int sample_id = 0;
  int true_label = -1;
  int predicted_label = -1;
  std::vector<float> probabilities;
};

// Header: id,true,pred,p0..p{c-1}
void save_prediction_csv(const std::string& path, const std::vector<PredictionRow>& rows,
                         int class_count);

// Per-point CSV: x,y,z,pred[,true]; pass truth=nullptr when unknown.
void save_segmentation_csv(const std::string& path, const Points<float>& pts,
                           const std::vector<int>& pred, const std::vector<int>* truth = nullptr);

}  // namespace localnet
