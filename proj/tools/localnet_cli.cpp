#include "localnet/dataset.hpp"
#include "localnet/geometry.hpp"
#include "localnet/io_export.hpp"
#include "localnet/train.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>

namespace {

namespace fs = std::filesystem;
using namespace localnet;

// One flag per frequently swept setting; everything else goes through
// --config files or repeated --set key=value pairs.
struct RunFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string task, data, centers, mfc, out;
  int seed = 0, epochs = 0, m = 0, k = 0, votes = 0, jobs = 0, batch_size = 0, n_points = 0;
  bool use_g1 = true, no_g1 = false, no_augment = false;
  double lr = 0.0;

  CLI::App* app = nullptr;

  void attach(CLI::App* cmd) {
    app = cmd;
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--set", sets, "override any config key, e.g. --set noise_sigma=0.02");
    cmd->add_option("--task", task, "classify | segment");
    cmd->add_option("--data", data, "synthetic:<classes> or manifest path");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--m", m, "center points per cloud");
    cmd->add_option("--k", k, "neighbors per local area");
    cmd->add_option("--centers", centers, "cpl | fps");
    cmd->add_flag("--use-g1,!--no-g1", use_g1, "include the selection-net global feature");
    cmd->add_option("--mfc", mfc, "metric feature set: A..H, none, all, or phi list");
    cmd->add_option("--votes", votes, "anisotropic-scaling votes at eval");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--jobs", jobs, "parallel eval workers (capped by LOCALNET_THREADS)");
    cmd->add_option("--batch-size", batch_size, "training batch size");
    cmd->add_option("--lr", lr, "base learning rate");
    cmd->add_option("--n-points", n_points, "points per generated cloud");
    cmd->add_flag("--no-augment", no_augment, "disable training augmentation");
  }

  RunConfig build() const {
    RunConfig cfg;
    if (app->count("--config")) cfg = parse_run_config_file(config_path);
    auto given = [&](const char* name) { return app->count(name) > 0; };
    if (given("--task")) cfg.task = task;
    if (given("--data")) cfg.data = data;
    if (given("--seed")) cfg.seed = static_cast<std::uint64_t>(seed);
    if (given("--epochs")) cfg.epochs = epochs;
    if (given("--m")) cfg.m = m;
    if (given("--k")) cfg.k = k;
    if (given("--centers")) cfg.centers = centers;
    if (given("--use-g1") || given("--no-g1")) cfg.use_g1 = use_g1;
    if (given("--mfc")) cfg.mfc = mfc;
    if (given("--votes")) cfg.votes = votes;
    if (given("--out")) cfg.out_dir = out;
    if (given("--jobs")) cfg.jobs = jobs;
    if (given("--batch-size")) cfg.batch_size = batch_size;
    if (given("--lr")) cfg.base_lr = lr;
    if (given("--n-points")) cfg.n_points = n_points;
    if (no_augment) cfg.augment = false;
    for (const auto& kv : sets) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
      apply_config_line(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

int dispatch(int argc, char** argv) {
  CLI::App app{"point-cloud classification / part segmentation with learned critical-point "
               "selection and metric-enriched local areas"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train a model, write metrics + checkpoint");
  RunFlags train_flags;
  train_flags.attach(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (plain and voted)");
  RunFlags eval_flags;
  eval_flags.attach(eval_cmd);
  std::string eval_ckpt;
  eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();

  auto* predict_cmd = app.add_subcommand("predict", "run one cloud through a checkpoint");
  RunFlags predict_flags;
  predict_flags.attach(predict_cmd);
  std::string predict_ckpt, predict_cloud;
  int predict_class = 0;
  predict_cmd->add_option("checkpoint", predict_ckpt)->required();
  predict_cmd->add_option("cloud", predict_cloud, "cloud CSV (x,y,z[,label])")->required();
  predict_cmd->add_option("--class-id", predict_class, "shape class one-hot for segmentation");

  auto* inspect_cmd =
      app.add_subcommand("inspect-centers", "export FPS vs learned centers for one cloud");
  RunFlags inspect_flags;
  inspect_flags.attach(inspect_cmd);
  std::string inspect_ckpt, inspect_cloud;
  inspect_cmd->add_option("checkpoint", inspect_ckpt)->required();
  inspect_cmd->add_option("cloud", inspect_cloud, "cloud CSV (x,y,z[,label])")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "train once per grid value, tabulate metrics");
  RunFlags ablate_flags;
  ablate_flags.attach(ablate_cmd);
  std::string grid;
  ablate_cmd->add_option("--grid", grid, "m=192..320[:step] | k=... | mfc=A..H | lists")
      ->required();

  auto* mesh_cmd = app.add_subcommand("sample-mesh", "sample a point cloud from an OFF mesh");
  std::string mesh_in, mesh_out;
  int mesh_n = 1024;
  std::uint64_t mesh_seed = 0;
  mesh_cmd->add_option("mesh", mesh_in, "OFF file")->required();
  mesh_cmd->add_option("out", mesh_out, "output cloud CSV")->required();
  mesh_cmd->add_option("--n-points", mesh_n, "samples to draw");
  mesh_cmd->add_option("--seed", mesh_seed, "sampling seed");

  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a synthetic dataset as CSV files");
  std::string gen_classes = "sphere,cube,cylinder,plane";
  std::string gen_dir;
  int gen_train = 50, gen_test = 20, gen_n = 256;
  double gen_jitter = 0.0;
  std::uint64_t gen_seed = 0;
  bool gen_parts = false;
  gen_cmd->add_option("out", gen_dir, "output directory")->required();
  gen_cmd->add_option("--classes", gen_classes, "comma list of sphere,cube,cylinder,plane,torus");
  gen_cmd->add_option("--train-per-class", gen_train);
  gen_cmd->add_option("--test-per-class", gen_test);
  gen_cmd->add_option("--n-points", gen_n);
  gen_cmd->add_option("--jitter", gen_jitter, "gaussian jitter sigma");
  gen_cmd->add_option("--seed", gen_seed);
  gen_cmd->add_flag("--parts", gen_parts, "emit per-point part labels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // prints help or usage error; --help exits 0
  }

  if (train_cmd->parsed()) {
    const TrainResult r = run_train(train_flags.build());
    std::cout << "final test metric: " << r.final_test_metric << "\n"
              << "wrote " << r.metrics_path << "\nwrote " << r.checkpoint_path << "\n";
  } else if (eval_cmd->parsed()) {
    const EvalResult r = run_eval(eval_flags.build(), eval_ckpt);
    std::cout << "metric (plain): " << r.metric_plain << "\nmetric (voted): " << r.metric_voted
              << "\nwrote " << r.report_json_path << "\n";
  } else if (predict_cmd->parsed()) {
    RunConfig cfg = predict_flags.build();
    const std::string out = predict_cmd->count("--out") ? cfg.out_dir : std::string("predict_out");
    run_predict(cfg, predict_ckpt, predict_cloud, out, predict_class);
  } else if (inspect_cmd->parsed()) {
    RunConfig cfg = inspect_flags.build();
    const std::string out = inspect_cmd->count("--out") ? cfg.out_dir : std::string("inspect_out");
    run_inspect_centers(cfg, inspect_ckpt, inspect_cloud, out);
  } else if (ablate_cmd->parsed()) {
    run_ablate(ablate_flags.build(), grid);
  } else if (mesh_cmd->parsed()) {
    const Mesh mesh = load_off(mesh_in);
    Rng rng(mesh_seed);
    const PointCloud<float> pc = sample_mesh_uniform<float>(mesh, mesh_n, rng);
    if (const fs::path dir = fs::path(mesh_out).parent_path(); !dir.empty())
      fs::create_directories(dir);
    save_cloud_csv(mesh_out, pc, nullptr);
    std::cout << "sampled " << mesh_n << " points from " << mesh.faces.size() << " faces\nwrote "
              << mesh_out << "\n";
  } else if (gen_cmd->parsed()) {
    std::vector<std::string> classes;
    for (size_t at = 0; at <= gen_classes.size();) {
      const size_t comma = gen_classes.find(',', at);
      const size_t end = comma == std::string::npos ? gen_classes.size() : comma;
      if (end > at) classes.push_back(gen_classes.substr(at, end - at));
      at = end + 1;
    }
    const int per_class = gen_train + gen_test;
    Dataset<float> all =
        make_synthetic_dataset<float>(classes, per_class, gen_n, gen_jitter, gen_seed, gen_parts);
    Dataset<float> train, test;
    train.class_names = test.class_names = all.class_names;
    train.part_count = test.part_count = all.part_count;
    for (size_t ci = 0; ci < classes.size(); ++ci)
      for (int si = 0; si < per_class; ++si) {
        auto& s = all.samples[ci * static_cast<size_t>(per_class) + static_cast<size_t>(si)];
        (si < gen_train ? train : test).samples.push_back(std::move(s));
      }
    save_dataset_csv(gen_dir, train, "train");
    save_dataset_csv(gen_dir, test, "test");
    std::cout << "wrote " << train.samples.size() << " train + " << test.samples.size()
              << " test clouds under " << gen_dir << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
