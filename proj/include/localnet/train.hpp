// Run orchestration: resolved run configuration, the training/evaluation
// loops, and the report emitters behind the CLI subcommands. Everything here
// is deterministic for a fixed seed and jobs=1; evaluation with more jobs
// produces the same numbers because per-sample results are reduced in index
// order.
#pragma once

#include "localnet/dataset.hpp"
#include "localnet/model.hpp"

#include <string>

namespace localnet {

// Plain key = value configuration with task-dependent defaults. Sentinel -1
// (or an empty string for mfc) means "use the task default"; finalize()
// resolves them and validates.
struct RunConfig {
  std::string task = "classify";  // classify | segment
  // "synthetic:<name>,<name>,..." or the path of a manifest CSV.
  std::string data = "synthetic:sphere,cube,cylinder,plane";
  int train_per_class = 50;
  int test_per_class = 20;
  int n_points = 256;
  double gen_jitter = 0.0;

  int m = -1;                  // classify: 256, segment: 512
  int k = -1;                  // 128
  std::string centers = "cpl";  // cpl | fps (classification; segmentation always fps)
  bool use_g1 = true;
  std::string mfc;             // letter A..H, "phiX[,phiY...]", or "none"/"all"
  double dropout = 0.5;
  int cpl_m = 256;             // segmentation: CPL pool width (g1 size)
  int k_interp = 3;

  int epochs = 60;
  int batch_size = 16;
  double base_lr = 0.001;
  double lr_decay_rate = 0.7;
  int lr_decay_interval = 23;
  std::uint64_t seed = 0;

  bool augment = true;
  double scale_lo = -1.0;      // classify: 0.66, segment: 0.5
  double scale_hi = -1.0;      // classify: 1.4,  segment: 2.0
  double shift_range = 0.2;
  double noise_sigma = 0.01;

  std::string out_dir = "run_out";
  int votes = 1;
  int jobs = 1;

  void finalize();  // resolve sentinels, validate; throws config_error

  ClassifierConfig classifier_config(int class_count) const;
  SegmenterConfig segmenter_config(int class_count, int part_count) const;
};

MfcMask parse_mfc_spec(const std::string& spec);
std::string mfc_letter(const MfcMask& mask);

// key = value lines, '#' comments; unknown keys are configuration errors.
RunConfig parse_run_config_file(const std::string& path);
void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value);
void save_run_config(const std::string& path, const RunConfig& cfg,
                     const std::vector<std::string>& extra_lines = {});

// LOCALNET_THREADS caps the requested worker count; values < 1 become 1.
int resolve_jobs(int requested);

struct EpochRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_metric = 0.0;  // accuracy (classify) or mIoU (segment)
  double mprime_mean = 0.0;  // distinct critical points over the epoch's training clouds
  int mprime_max = 0;
  int mprime_min = 0;
};

struct TrainResult {
  std::vector<EpochRow> rows;
  double final_test_metric = 0.0;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string config_path;
};

// Trains per the recipe (Adam, step-decayed lr, anisotropic scale + shift +
// jitter augmentation), logs one CSV row per epoch, and writes the final
// checkpoint with optimizer state. A non-finite loss raises numeric_error.
TrainResult run_train(const RunConfig& cfg);

struct EvalResult {
  double metric_plain = 0.0;
  double metric_voted = 0.0;
  int sample_count = 0;
  std::string report_json_path;
  std::string report_csv_path;
};

// Evaluates a checkpoint on the config's test split, with and without
// voting, and writes report.json / report.csv / predictions.csv to out_dir.
EvalResult run_eval(const RunConfig& cfg, const std::string& checkpoint_path);

// Classifies or segments one cloud file; writes prediction CSV (and, for
// segmentation, a per-point CSV plus a colored PLY) under out_dir. class_id
// selects the shape one-hot fed to the segmentation head.
void run_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& cloud_csv, const std::string& out_dir, int class_id = 0);

// Emits the input cloud plus FPS and CPL centers (with multiplicities) as
// PLY/CSV for side-by-side viewing.
void run_inspect_centers(const RunConfig& cfg, const std::string& checkpoint_path,
                         const std::string& cloud_csv, const std::string& out_dir);

struct AblationRow {
  std::string parameter;
  std::string value;
  double final_metric = 0.0;
  double mprime_mean_last = 0.0;
};

// Re-trains the run config once per grid value ("m=192..320:64", "k=...",
// or "mfc=A..H") and tabulates the final test metrics.
std::vector<AblationRow> run_ablate(const RunConfig& cfg, const std::string& grid_spec);
void save_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace localnet
