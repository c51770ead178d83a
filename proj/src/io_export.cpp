#include "localnet/io_export.hpp"

#include <cstdio>
#include <fstream>

namespace localnet {

namespace {

std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

std::array<std::uint8_t, 3> label_color(int label) {
  static const std::array<std::uint8_t, 3> palette[] = {
      {230, 60, 60},  {60, 130, 230}, {70, 200, 90},   {240, 180, 40},
      {160, 80, 220}, {60, 210, 210}, {240, 120, 190}, {140, 140, 140},
      {150, 90, 40},  {170, 220, 60}, {40, 90, 160},   {250, 140, 70},
  };
  constexpr int n = static_cast<int>(sizeof(palette) / sizeof(palette[0]));
  const int i = ((label % n) + n) % n;
  return palette[i];
}

void save_ply(const std::string& path, const Points<float>& pts,
              const std::vector<std::array<std::uint8_t, 3>>* colors) {
  if (colors && static_cast<Eigen::Index>(colors->size()) != pts.rows())
    throw std::invalid_argument("save_ply: color count mismatch");
  std::ofstream f(path);
  if (!f) throw data_error("cannot write " + path);
  f << "ply\nformat ascii 1.0\nelement vertex " << pts.rows() << "\n"
    << "property float x\nproperty float y\nproperty float z\n";
  if (colors)
    f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "end_header\n";
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    f << fmt_float(pts(i, 0)) << ' ' << fmt_float(pts(i, 1)) << ' ' << fmt_float(pts(i, 2));
    if (colors) {
      const auto& c = (*colors)[static_cast<size_t>(i)];
      f << ' ' << static_cast<int>(c[0]) << ' ' << static_cast<int>(c[1]) << ' '
        << static_cast<int>(c[2]);
    }
    f << '\n';
  }
  if (!f) throw data_error("write failed: " + path);
}

void save_prediction_csv(const std::string& path, const std::vector<PredictionRow>& rows,
                         int class_count) {
  std::ofstream f(path);
  if (!f) throw data_error("cannot write " + path);
  f << "id,true,pred";
  for (int c = 0; c < class_count; ++c) f << ",p" << c;
  f << '\n';
  for (const auto& r : rows) {
    if (static_cast<int>(r.probabilities.size()) != class_count)
      throw std::invalid_argument("save_prediction_csv: probability width mismatch");
    f << r.sample_id << ',' << r.true_label << ',' << r.predicted_label;
    for (float p : r.probabilities) f << ',' << fmt_float(p);
    f << '\n';
  }
  if (!f) throw data_error("write failed: " + path);
}

void save_segmentation_csv(const std::string& path, const Points<float>& pts,
                           const std::vector<int>& pred, const std::vector<int>* truth) {
  if (static_cast<Eigen::Index>(pred.size()) != pts.rows() ||
      (truth && truth->size() != pred.size()))
    throw std::invalid_argument("save_segmentation_csv: size mismatch");
  std::ofstream f(path);
  if (!f) throw data_error("cannot write " + path);
  f << (truth ? "x,y,z,pred,true\n" : "x,y,z,pred\n");
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    f << fmt_float(pts(i, 0)) << ',' << fmt_float(pts(i, 1)) << ',' << fmt_float(pts(i, 2)) << ','
      << pred[static_cast<size_t>(i)];
    if (truth) f << ',' << (*truth)[static_cast<size_t>(i)];
    f << '\n';
  }
  if (!f) throw data_error("write failed: " + path);
}

}  // namespace localnet
