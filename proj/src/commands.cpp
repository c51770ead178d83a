#include "localnet/checkpoint.hpp"
#include "localnet/geometry.hpp"
#include "localnet/io_export.hpp"
#include "localnet/train.hpp"

#include "run_internal.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace localnet {

namespace {

namespace fs = std::filesystem;

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// x,y,z,is_center,times_selected for every input point.
void write_center_csv(const std::string& path, const Points<float>& pts,
                      const std::vector<int>& times_selected) {
  std::ofstream f(path);
  if (!f) throw data_error("cannot write " + path);
  f << "x,y,z,is_center,times_selected\n";
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const int t = times_selected[static_cast<size_t>(i)];
    f << fmt_g(pts(i, 0)) << ',' << fmt_g(pts(i, 1)) << ',' << fmt_g(pts(i, 2)) << ','
      << (t > 0 ? 1 : 0) << ',' << t << '\n';
  }
  if (!f) throw data_error("write failed: " + path);
}

void write_center_ply(const std::string& path, const Points<float>& pts,
                      const std::vector<int>& times_selected) {
  std::vector<std::array<std::uint8_t, 3>> colors(static_cast<size_t>(pts.rows()));
  for (size_t i = 0; i < colors.size(); ++i)
    colors[i] = times_selected[i] > 0 ? std::array<std::uint8_t, 3>{220, 50, 47}
                                      : std::array<std::uint8_t, 3>{190, 190, 190};
  save_ply(path, pts, &colors);
}

std::vector<int> selection_counts(const std::vector<int>& indices, Eigen::Index n) {
  std::vector<int> counts(static_cast<size_t>(n), 0);
  for (int idx : indices) counts[static_cast<size_t>(idx)]++;
  return counts;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  size_t at = 0;
  while (at != std::string::npos) {
    const size_t comma = s.find(',', at);
    out.push_back(comma == std::string::npos ? s.substr(at) : s.substr(at, comma - at));
    at = comma == std::string::npos ? std::string::npos : comma + 1;
  }
  return out;
}

// "192,224" | "192..320" (step 32) | "192..320:64"
std::vector<std::string> grid_values(const std::string& key, const std::string& rhs) {
  const size_t dots = rhs.find("..");
  if (dots == std::string::npos) {
    auto vals = split_list(rhs);
    for (const auto& v : vals)
      if (v.empty()) throw config_error("ablate: empty value in grid '" + rhs + "'");
    return vals;
  }
  std::string lo = rhs.substr(0, dots);
  std::string hi = rhs.substr(dots + 2);
  if (key == "mfc") {
    if (lo.size() != 1 || hi.size() != 1 || lo[0] > hi[0])
      throw config_error("ablate: bad mfc range '" + rhs + "'");
    std::vector<std::string> vals;
    for (char c = lo[0]; c <= hi[0]; ++c) vals.emplace_back(1, c);
    return vals;
  }
  long step = 32;
  const size_t colon = hi.find(':');
  if (colon != std::string::npos) {
    step = std::stol(hi.substr(colon + 1));
    hi = hi.substr(0, colon);
  }
  const long a = std::stol(lo), b = std::stol(hi);
  if (step <= 0 || a > b) throw config_error("ablate: bad range '" + rhs + "'");
  std::vector<std::string> vals;
  for (long v = a; v <= b; v += step) vals.push_back(std::to_string(v));
  return vals;
}

}  // namespace

void run_predict(const RunConfig& raw, const std::string& checkpoint_path,
                 const std::string& cloud_csv, const std::string& out_dir, int class_id) {
  RunConfig cfg = raw;
  cfg.finalize();
  fs::create_directories(out_dir);

  auto [cloud, labels] = load_cloud_csv(cloud_csv);
  cloud = normalize_unit_sphere(cloud);

  // The data spec defines the label space (class names, part count).
  detail::LoadedData data = detail::load_data(cfg);
  const int class_count = data.train.class_count();

  if (cfg.task == "segment") {
    if (data.train.part_count < 2) throw config_error("config: segmentation needs part labels");
    if (class_id < 0 || class_id >= class_count)
      throw config_error("predict: class_id " + std::to_string(class_id) + " out of range [0," +
                         std::to_string(class_count) + ")");
    SegmenterConfig scfg = cfg.segmenter_config(class_count, data.train.part_count);
    NetworkParams<float> params = init_segmenter_params<float>(scfg, cfg.seed);
    load_checkpoint(checkpoint_path, params);

    RowX<float> onehot = RowX<float>::Zero(scfg.class_onehot_dim);
    onehot[class_id] = 1.0f;
    const auto out = segment_forward(cloud, onehot, params, scfg);

    const bool has_truth = labels.size() == static_cast<size_t>(cloud.size());
    const std::string csv = (fs::path(out_dir) / "segmentation.csv").string();
    save_segmentation_csv(csv, cloud.coords, out.predicted_parts, has_truth ? &labels : nullptr);
    std::vector<std::array<std::uint8_t, 3>> colors(out.predicted_parts.size());
    for (size_t i = 0; i < colors.size(); ++i) colors[i] = label_color(out.predicted_parts[i]);
    const std::string ply = (fs::path(out_dir) / "segmentation.ply").string();
    save_ply(ply, cloud.coords, &colors);
    std::cout << "segmented " << cloud.size() << " points as class " << class_id << " ("
              << data.train.class_names[static_cast<size_t>(class_id)] << ")\n"
              << "wrote " << csv << "\nwrote " << ply << "\n";
    return;
  }

  ClassifierConfig ccfg = cfg.classifier_config(class_count);
  NetworkParams<float> params = init_classifier_params<float>(ccfg, cfg.seed);
  load_checkpoint(checkpoint_path, params);

  RowX<float> probs;
  if (cfg.votes > 1) {
    Rng rng(mix_seed(cfg.seed, 0x7E, 0));
    probs = vote_predict(cloud, params, ccfg, cfg.votes, cfg.scale_lo, cfg.scale_hi, rng);
  } else {
    probs = classify_forward(cloud, params, ccfg).probabilities;
  }
  PredictionRow row;
  row.sample_id = 0;
  row.true_label = -1;
  row.predicted_label = argmax_index(probs);
  row.probabilities.assign(probs.data(), probs.data() + probs.cols());
  const std::string csv = (fs::path(out_dir) / "prediction.csv").string();
  save_prediction_csv(csv, {row}, class_count);
  std::cout << "predicted class " << row.predicted_label << " ("
            << data.train.class_names[static_cast<size_t>(row.predicted_label)]
            << "), p=" << fmt_g(probs[row.predicted_label]) << "\nwrote " << csv << "\n";
}

void run_inspect_centers(const RunConfig& raw, const std::string& checkpoint_path,
                         const std::string& cloud_csv, const std::string& out_dir) {
  RunConfig cfg = raw;
  cfg.finalize();
  fs::create_directories(out_dir);

  auto [cloud, labels] = load_cloud_csv(cloud_csv);
  (void)labels;
  cloud = normalize_unit_sphere(cloud);
  const Eigen::Index n = cloud.coords.rows();

  detail::LoadedData data = detail::load_data(cfg);
  const int class_count = data.train.class_count();

  NetworkParams<float> params;
  int cpl_m = 0;
  if (cfg.task == "segment") {
    if (data.train.part_count < 2) throw config_error("config: segmentation needs part labels");
    SegmenterConfig scfg = cfg.segmenter_config(class_count, data.train.part_count);
    params = init_segmenter_params<float>(scfg, cfg.seed);
    cpl_m = scfg.cpl_m;
  } else {
    ClassifierConfig ccfg = cfg.classifier_config(class_count);
    params = init_classifier_params<float>(ccfg, cfg.seed);
    cpl_m = ccfg.m;
  }
  load_checkpoint(checkpoint_path, params);

  save_ply((fs::path(out_dir) / "cloud.ply").string(), cloud.coords, nullptr);

  const auto fps = farthest_point_sampling<float>(cloud.coords, cfg.m, 0);
  const auto fps_counts = selection_counts(fps, n);
  write_center_csv((fs::path(out_dir) / "centers_fps.csv").string(), cloud.coords, fps_counts);
  write_center_ply((fs::path(out_dir) / "centers_fps.ply").string(), cloud.coords, fps_counts);

  const auto cpl = cpl_forward(cloud, params.cpl, Mode::eval);
  const auto cpl_counts = selection_counts(cpl.critical_indices, n);
  write_center_csv((fs::path(out_dir) / "centers_cpl.csv").string(), cloud.coords, cpl_counts);
  write_center_ply((fs::path(out_dir) / "centers_cpl.ply").string(), cloud.coords, cpl_counts);

  std::cout << "fps: " << cfg.m << " centers (all distinct)\n"
            << "cpl: " << cpl_m << " selections, " << cpl.distinct_count
            << " distinct critical points\nwrote " << out_dir
            << "/{cloud,centers_fps,centers_cpl}.{ply,csv}\n";
}

std::vector<AblationRow> run_ablate(const RunConfig& raw, const std::string& grid_spec) {
  RunConfig cfg = raw;
  cfg.finalize();

  const size_t eq = grid_spec.find('=');
  if (eq == std::string::npos)
    throw config_error("ablate: grid must look like key=values, got '" + grid_spec + "'");
  const std::string key = grid_spec.substr(0, eq);
  const auto values = grid_values(key, grid_spec.substr(eq + 1));

  const std::string base_out = cfg.out_dir;
  std::vector<AblationRow> rows;
  for (const auto& value : values) {
    RunConfig run = cfg;
    if (key == "m")
      run.m = std::stoi(value);
    else if (key == "k")
      run.k = std::stoi(value);
    else if (key == "mfc")
      run.mfc = value;
    else if (key == "centers")
      run.centers = value;
    else
      throw config_error("ablate: unknown grid key '" + key + "'");
    run.out_dir = (fs::path(base_out) / (key + "_" + value)).string();
    const TrainResult tr = run_train(run);

    AblationRow row;
    row.parameter = key;
    row.value = value;
    row.final_metric = tr.final_test_metric;
    row.mprime_mean_last = tr.rows.empty() ? 0.0 : tr.rows.back().mprime_mean;
    rows.push_back(row);
    std::cout << key << "=" << value << "  metric=" << fmt_g(row.final_metric)
              << "  mprime_mean=" << fmt_g(row.mprime_mean_last) << "\n";
  }
  fs::create_directories(base_out);
  save_ablation_csv((fs::path(base_out) / "ablation.csv").string(), rows);
  return rows;
}

void save_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path);
  if (!f) throw data_error("cannot write " + path);
  f << "parameter,value,final_metric,mprime_mean_last\n";
  for (const auto& r : rows)
    f << r.parameter << ',' << r.value << ',' << fmt_g(r.final_metric) << ','
      << fmt_g(r.mprime_mean_last) << '\n';
  if (!f) throw data_error("write failed: " + path);
}

}  // namespace localnet
