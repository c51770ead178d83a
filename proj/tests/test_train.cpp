#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "localnet/checkpoint.hpp"
#include "localnet/train.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

using namespace localnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("localnet_train_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Two well-separated classes, handful of clouds, shallow settings: one run
// takes a couple of seconds.
RunConfig tiny_classify(const fs::path& out) {
  RunConfig cfg;
  cfg.task = "classify";
  cfg.data = "synthetic:sphere,plane";
  cfg.train_per_class = 4;
  cfg.test_per_class = 2;
  cfg.n_points = 64;
  cfg.m = 8;
  cfg.k = 4;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.out_dir = out.string();
  return cfg;
}

RunConfig tiny_segment(const fs::path& out) {
  RunConfig cfg;
  cfg.task = "segment";
  cfg.data = "synthetic:sphere,cube";
  cfg.train_per_class = 2;
  cfg.test_per_class = 1;
  cfg.n_points = 64;
  cfg.m = 8;
  cfg.k = 4;
  cfg.cpl_m = 8;
  cfg.k_interp = 2;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.out_dir = out.string();
  return cfg;
}

}  // namespace

TEST_CASE("mfc letters map to the eight feature subsets and back") {
  const std::pair<const char*, MfcMask> table[] = {
      {"A", {false, false, false}}, {"B", {true, false, false}},
      {"C", {false, true, false}},  {"D", {false, false, true}},
      {"E", {true, true, false}},   {"F", {true, false, true}},
      {"G", {false, true, true}},   {"H", {true, true, true}},
  };
  for (const auto& [letter, mask] : table) {
    CHECK(parse_mfc_spec(letter) == mask);
    CHECK(mfc_letter(mask) == letter);
  }
  CHECK(parse_mfc_spec("none") == MfcMask{false, false, false});
  CHECK(parse_mfc_spec("all") == MfcMask{true, true, true});
  CHECK(parse_mfc_spec("phi1,phi3") == MfcMask{true, false, true});
  CHECK(parse_mfc_spec(" phi2 ") == MfcMask{false, true, false});
  CHECK_THROWS_AS(parse_mfc_spec("phi4"), config_error);
  CHECK_THROWS_AS(parse_mfc_spec("Z"), config_error);
}

TEST_CASE("finalize resolves task-dependent defaults") {
  RunConfig c;
  c.task = "classify";
  c.finalize();
  CHECK(c.m == 256);
  CHECK(c.k == 128);
  CHECK(c.scale_lo == doctest::Approx(0.66));
  CHECK(c.scale_hi == doctest::Approx(1.4));
  CHECK(c.mfc == "H");

  RunConfig s;
  s.task = "segment";
  s.finalize();
  CHECK(s.m == 512);
  CHECK(s.k == 128);
  CHECK(s.scale_lo == doctest::Approx(0.5));
  CHECK(s.scale_hi == doctest::Approx(2.0));
  CHECK(s.mfc == "A");

  RunConfig keep;
  keep.m = 77;
  keep.mfc = "C";
  keep.finalize();
  CHECK(keep.m == 77);  // explicit values survive
  CHECK(keep.mfc == "C");
}

TEST_CASE("finalize rejects inconsistent settings") {
  auto broken = [](auto&& tweak) {
    RunConfig c;
    tweak(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.task = "detect"; }).finalize(), config_error);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.centers = "grid"; }).finalize(), config_error);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.epochs = -1; }).finalize(), config_error);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.batch_size = 0; }).finalize(), config_error);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.votes = 0; }).finalize(), config_error);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.n_points = 4; }).finalize(), config_error);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.mfc = "phi9"; }).finalize(), config_error);
  CHECK_THROWS_AS(broken([](RunConfig& c) {
                    c.scale_lo = 2.0;
                    c.scale_hi = 1.0;
                  }).finalize(),
                  config_error);
  // ... but augmentation bounds are ignored when augmentation is off
  RunConfig off;
  off.augment = false;
  off.scale_lo = 2.0;
  off.scale_hi = 1.0;
  off.finalize();
}

TEST_CASE("apply_config_line parses values and rejects unknown keys") {
  RunConfig c;
  apply_config_line(c, "epochs", "11");
  apply_config_line(c, "base_lr", "0.005");
  apply_config_line(c, "use_g1", "false");
  apply_config_line(c, "centers", "fps");
  apply_config_line(c, "seed", "42");
  CHECK(c.epochs == 11);
  CHECK(c.base_lr == doctest::Approx(0.005));
  CHECK(c.use_g1 == false);
  CHECK(c.centers == "fps");
  CHECK(c.seed == 42);
  CHECK_THROWS_AS(apply_config_line(c, "learning_rate", "0.1"), config_error);
  CHECK_THROWS_AS(apply_config_line(c, "epochs", "eleven"), config_error);
  CHECK_THROWS_AS(apply_config_line(c, "use_g1", "maybe"), config_error);
}

TEST_CASE("run config files round-trip through save and parse") {
  TempDir tmp;
  RunConfig c;
  c.task = "segment";
  c.data = "synthetic:torus,cube";
  c.train_per_class = 7;
  c.test_per_class = 3;
  c.n_points = 96;
  c.m = 24;
  c.k = 6;
  c.centers = "fps";
  c.use_g1 = false;
  c.mfc = "E";
  c.dropout = 0.25;
  c.cpl_m = 12;
  c.k_interp = 2;
  c.epochs = 5;
  c.batch_size = 3;
  c.base_lr = 0.0042;
  c.lr_decay_rate = 0.5;
  c.lr_decay_interval = 9;
  c.seed = 1234;
  c.augment = false;
  c.scale_lo = 0.9;
  c.scale_hi = 1.1;
  c.shift_range = 0.05;
  c.noise_sigma = 0.002;
  c.out_dir = "elsewhere";
  c.votes = 4;
  c.jobs = 2;

  const std::string path = (tmp.path / "run.cfg").string();
  save_run_config(path, c, {"# a trailing comment"});
  const RunConfig back = parse_run_config_file(path);

  CHECK(back.task == c.task);
  CHECK(back.data == c.data);
  CHECK(back.train_per_class == c.train_per_class);
  CHECK(back.test_per_class == c.test_per_class);
  CHECK(back.n_points == c.n_points);
  CHECK(back.m == c.m);
  CHECK(back.k == c.k);
  CHECK(back.centers == c.centers);
  CHECK(back.use_g1 == c.use_g1);
  CHECK(back.mfc == c.mfc);
  CHECK(back.dropout == doctest::Approx(c.dropout));
  CHECK(back.cpl_m == c.cpl_m);
  CHECK(back.k_interp == c.k_interp);
  CHECK(back.epochs == c.epochs);
  CHECK(back.batch_size == c.batch_size);
  CHECK(back.base_lr == doctest::Approx(c.base_lr));
  CHECK(back.lr_decay_rate == doctest::Approx(c.lr_decay_rate));
  CHECK(back.lr_decay_interval == c.lr_decay_interval);
  CHECK(back.seed == c.seed);
  CHECK(back.augment == c.augment);
  CHECK(back.scale_lo == doctest::Approx(c.scale_lo));
  CHECK(back.scale_hi == doctest::Approx(c.scale_hi));
  CHECK(back.shift_range == doctest::Approx(c.shift_range));
  CHECK(back.noise_sigma == doctest::Approx(c.noise_sigma));
  CHECK(back.out_dir == c.out_dir);
  CHECK(back.votes == c.votes);
  CHECK(back.jobs == c.jobs);

  CHECK_THROWS_AS(parse_run_config_file((tmp.path / "absent.cfg").string()), config_error);
}

TEST_CASE("resolve_jobs respects the LOCALNET_THREADS cap") {
  unsetenv("LOCALNET_THREADS");
  CHECK(resolve_jobs(3) == 3);
  CHECK(resolve_jobs(0) == 1);
  CHECK(resolve_jobs(-5) == 1);

  setenv("LOCALNET_THREADS", "2", 1);
  CHECK(resolve_jobs(8) == 2);
  CHECK(resolve_jobs(1) == 1);

  setenv("LOCALNET_THREADS", "banana", 1);
  CHECK_THROWS_AS(resolve_jobs(4), config_error);
  unsetenv("LOCALNET_THREADS");
}

TEST_CASE("zero-epoch training still writes artifacts and evaluates") {
  TempDir tmp;
  RunConfig cfg = tiny_classify(tmp.path / "run");
  cfg.epochs = 0;
  const TrainResult res = run_train(cfg);

  CHECK(res.rows.empty());
  CHECK(res.final_test_metric >= 0.0);
  CHECK(res.final_test_metric <= 1.0);
  CHECK(fs::exists(res.checkpoint_path));
  CHECK(fs::exists(res.config_path));
  const std::string metrics = slurp(res.metrics_path);
  CHECK(metrics == "epoch,lr,train_loss,test_metric,mprime_mean,mprime_max,mprime_min\n");
}

TEST_CASE("training logs one row per epoch with sane fields") {
  TempDir tmp;
  RunConfig cfg = tiny_classify(tmp.path / "run");
  const TrainResult res = run_train(cfg);

  REQUIRE(res.rows.size() == 2);
  for (const auto& row : res.rows) {
    CHECK(row.lr == doctest::Approx(0.001));  // first decay step is at epoch 23
    CHECK(row.train_loss > 0.0);
    CHECK(row.test_metric >= 0.0);
    CHECK(row.test_metric <= 1.0);
    CHECK(row.mprime_min >= 1);
    CHECK(row.mprime_max <= 8);  // m' <= m
    CHECK(row.mprime_mean >= row.mprime_min);
    CHECK(row.mprime_mean <= row.mprime_max);
  }
  CHECK(res.rows[0].epoch == 0);
  CHECK(res.rows[1].epoch == 1);
  CHECK(res.final_test_metric == res.rows.back().test_metric);
}

TEST_CASE("same seed, same artifacts: training is reproducible") {
  TempDir tmp;
  RunConfig a = tiny_classify(tmp.path / "a");
  RunConfig b = tiny_classify(tmp.path / "b");
  const TrainResult ra = run_train(a);
  const TrainResult rb = run_train(b);

  CHECK(slurp(ra.metrics_path) == slurp(rb.metrics_path));
  CHECK(slurp(ra.checkpoint_path) == slurp(rb.checkpoint_path));

  RunConfig c = tiny_classify(tmp.path / "c");
  c.seed = 1;
  const TrainResult rc = run_train(c);
  CHECK(slurp(ra.checkpoint_path) != slurp(rc.checkpoint_path));
}

TEST_CASE("evaluation of a saved checkpoint reproduces the final training metric") {
  TempDir tmp;
  RunConfig cfg = tiny_classify(tmp.path / "run");
  const TrainResult trained = run_train(cfg);

  RunConfig eval_cfg = cfg;
  eval_cfg.out_dir = (tmp.path / "eval").string();
  const EvalResult ev = run_eval(eval_cfg, trained.checkpoint_path);

  CHECK(ev.metric_plain == trained.final_test_metric);
  CHECK(ev.metric_voted == ev.metric_plain);  // votes = 1
  CHECK(ev.sample_count == 4);                // 2 classes x 2 test clouds
  CHECK(fs::exists(ev.report_json_path));
  CHECK(fs::exists(ev.report_csv_path));
  CHECK(fs::exists(tmp.path / "eval" / "predictions.csv"));

  const std::string json = slurp(ev.report_json_path);
  CHECK(json.find("\"task\"") != std::string::npos);
  CHECK(json.find("\"accuracy\"") != std::string::npos);

  RunConfig voted_cfg = eval_cfg;
  voted_cfg.out_dir = (tmp.path / "eval_voted").string();
  voted_cfg.votes = 3;
  const EvalResult v1 = run_eval(voted_cfg, trained.checkpoint_path);
  const EvalResult v2 = run_eval(voted_cfg, trained.checkpoint_path);
  CHECK(v1.metric_voted == v2.metric_voted);  // voting draws are seeded per sample
}

TEST_CASE("segmentation training and evaluation run end to end") {
  TempDir tmp;
  RunConfig cfg = tiny_segment(tmp.path / "run");
  const TrainResult res = run_train(cfg);

  REQUIRE(res.rows.size() == 1);
  CHECK(res.rows[0].test_metric >= 0.0);
  CHECK(res.rows[0].test_metric <= 1.0);
  CHECK(res.rows[0].mprime_max <= cfg.cpl_m);

  RunConfig eval_cfg = cfg;
  eval_cfg.out_dir = (tmp.path / "eval").string();
  const EvalResult ev = run_eval(eval_cfg, res.checkpoint_path);
  CHECK(ev.metric_plain == res.final_test_metric);
  const std::string json = slurp(ev.report_json_path);
  CHECK(json.find("\"miou\"") != std::string::npos);
}

TEST_CASE("evaluation with more jobs reduces to the same numbers") {
  TempDir tmp;
  RunConfig cfg = tiny_classify(tmp.path / "run");
  const TrainResult trained = run_train(cfg);

  RunConfig e1 = cfg;
  e1.out_dir = (tmp.path / "e1").string();
  RunConfig e2 = cfg;
  e2.out_dir = (tmp.path / "e2").string();
  e2.jobs = 4;
  const EvalResult r1 = run_eval(e1, trained.checkpoint_path);
  const EvalResult r2 = run_eval(e2, trained.checkpoint_path);
  CHECK(r1.metric_plain == r2.metric_plain);
}

TEST_CASE("ablation sweeps re-train once per grid value") {
  TempDir tmp;
  RunConfig cfg = tiny_classify(tmp.path / "grid");
  cfg.epochs = 1;

  const auto rows = run_ablate(cfg, "m=6,8");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].parameter == "m");
  CHECK(rows[0].value == "6");
  CHECK(rows[1].value == "8");
  for (const auto& r : rows) {
    CHECK(r.final_metric >= 0.0);
    CHECK(r.final_metric <= 1.0);
    CHECK(r.mprime_mean_last >= 1.0);
  }
  CHECK(fs::exists(tmp.path / "grid" / "ablation.csv"));
  CHECK(fs::exists(tmp.path / "grid" / "m_6"));
  CHECK(fs::exists(tmp.path / "grid" / "m_8"));

  const auto letters = run_ablate(cfg, "mfc=A..B");
  REQUIRE(letters.size() == 2);
  CHECK(letters[0].value == "A");
  CHECK(letters[1].value == "B");

  CHECK_THROWS_AS(run_ablate(cfg, "m=" ), config_error);
  CHECK_THROWS_AS(run_ablate(cfg, "width=3"), config_error);
}
