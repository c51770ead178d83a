#include "localnet/train.hpp"

#include "localnet/checkpoint.hpp"
#include "localnet/geometry.hpp"
#include "localnet/io_export.hpp"
#include "run_internal.hpp"

#include "json.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

namespace localnet {

namespace {

namespace fs = std::filesystem;

// Independent deterministic streams per purpose; the epoch/sample arguments
// keep draws independent of batch grouping.
constexpr std::uint64_t kStreamShuffle = 0xE0;
constexpr std::uint64_t kStreamAugment = 0xA6;
constexpr std::uint64_t kStreamDropout = 0xD0;
constexpr std::uint64_t kStreamVote = 0x7E;

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void run_parallel(int count, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next(0);
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  const int t = std::min(jobs, count);
  pool.reserve(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

bool is_synthetic(const std::string& data) { return data.rfind("synthetic:", 0) == 0; }

std::vector<std::string> synthetic_classes(const std::string& data) {
  std::vector<std::string> classes;
  std::string rest = data.substr(std::string("synthetic:").size());
  size_t at = 0;
  while (at != std::string::npos) {
    const size_t comma = rest.find(',', at);
    const std::string name =
        comma == std::string::npos ? rest.substr(at) : rest.substr(at, comma - at);
    if (!name.empty()) classes.push_back(name);
    at = comma == std::string::npos ? std::string::npos : comma + 1;
  }
  if (classes.empty()) throw config_error("config: no synthetic classes in '" + data + "'");
  return classes;
}

}  // namespace

namespace detail {

// Synthetic data draws train+test from one per-sample-seeded pool, so the
// splits are disjoint by construction; manifests are filtered by their split
// column. All clouds are normalized to the unit sphere here, once.
LoadedData load_data(const RunConfig& cfg) {
  LoadedData d;
  const bool with_parts = cfg.task == "segment";
  if (is_synthetic(cfg.data)) {
    const auto classes = synthetic_classes(cfg.data);
    const int per_class = cfg.train_per_class + cfg.test_per_class;
    if (per_class < 1) throw config_error("config: train_per_class + test_per_class must be >= 1");
    Dataset<float> all = make_synthetic_dataset<float>(classes, per_class, cfg.n_points,
                                                       cfg.gen_jitter, cfg.seed, with_parts);
    d.train.class_names = d.test.class_names = all.class_names;
    d.train.part_count = d.test.part_count = all.part_count;
    for (size_t ci = 0; ci < classes.size(); ++ci) {
      for (int si = 0; si < per_class; ++si) {
        auto& s = all.samples[ci * static_cast<size_t>(per_class) + static_cast<size_t>(si)];
        (si < cfg.train_per_class ? d.train : d.test).samples.push_back(std::move(s));
      }
    }
  } else {
    d.train = load_manifest_dataset(cfg.data, "train");
    d.test = load_manifest_dataset(cfg.data, "test");
    if (!with_parts) {
      for (auto& s : d.train.samples) s.part_labels.clear();
      for (auto& s : d.test.samples) s.part_labels.clear();
      d.train.part_count = d.test.part_count = 0;
    }
  }
  for (auto& s : d.train.samples) s.cloud = normalize_unit_sphere(s.cloud);
  for (auto& s : d.test.samples) s.cloud = normalize_unit_sphere(s.cloud);
  return d;
}

// Part ids a class can carry, collected from ground truth; used as the
// per-shape part set of the IoU.
std::vector<std::vector<int>> parts_by_class(const Dataset<float>& ds) {
  std::vector<std::vector<int>> parts(static_cast<size_t>(ds.class_count()));
  for (const auto& s : ds.samples)
    for (int p : s.part_labels) {
      auto& list = parts[static_cast<size_t>(s.shape_label)];
      bool seen = false;
      for (int q : list) seen = seen || (q == p);
      if (!seen) list.push_back(p);
    }
  for (auto& list : parts) std::sort(list.begin(), list.end());
  return parts;
}

}  // namespace detail

namespace {

using detail::LoadedData;
using detail::load_data;
using detail::parts_by_class;

MatX<float> onehot_rows(const std::vector<int>& labels, int dim) {
  MatX<float> m = MatX<float>::Zero(static_cast<Eigen::Index>(labels.size()), dim);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= dim)
      throw std::invalid_argument("onehot_rows: label out of range");
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0f;
  }
  return m;
}

double eval_classification(const Dataset<float>& test, NetworkParams<float>& params,
                           const ClassifierConfig& ccfg, int votes, double scale_lo,
                           double scale_hi, std::uint64_t seed, int jobs,
                           std::vector<PredictionRow>* rows_out) {
  const int count = static_cast<int>(test.samples.size());
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<PredictionRow> rows(static_cast<size_t>(count));
  run_parallel(count, jobs, [&](int i) {
    const auto& s = test.samples[static_cast<size_t>(i)];
    RowX<float> probs;
    if (votes > 1) {
      Rng rng(mix_seed(seed, kStreamVote, static_cast<std::uint64_t>(i)));
      probs = vote_predict(s.cloud, params, ccfg, votes, scale_lo, scale_hi, rng);
    } else {
      probs = classify_forward(s.cloud, params, ccfg).probabilities;
    }
    PredictionRow& r = rows[static_cast<size_t>(i)];
    r.sample_id = i;
    r.true_label = s.shape_label;
    r.predicted_label = argmax_index(probs);
    r.probabilities.assign(probs.data(), probs.data() + probs.cols());
  });
  std::vector<int> pred(rows.size()), truth(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    pred[i] = rows[i].predicted_label;
    truth[i] = rows[i].true_label;
  }
  if (rows_out) *rows_out = std::move(rows);
  return instance_accuracy(pred, truth);
}

double eval_segmentation(const Dataset<float>& test, NetworkParams<float>& params,
                         const SegmenterConfig& scfg, int votes, double scale_lo, double scale_hi,
                         std::uint64_t seed, int jobs) {
  const int count = static_cast<int>(test.samples.size());
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  const auto class_parts = parts_by_class(test);
  std::vector<double> ious(static_cast<size_t>(count));
  run_parallel(count, jobs, [&](int i) {
    const auto& s = test.samples[static_cast<size_t>(i)];
    RowX<float> onehot = RowX<float>::Zero(scfg.class_onehot_dim);
    onehot[s.shape_label] = 1.0f;

    MatX<float> scores;
    if (votes > 1) {
      Rng rng(mix_seed(seed, kStreamVote, static_cast<std::uint64_t>(i)));
      std::uniform_real_distribution<double> draw(scale_lo, scale_hi);
      for (int v = 0; v < votes; ++v) {
        Eigen::Matrix<float, 1, 3> scale;
        for (int a = 0; a < 3; ++a) scale[a] = static_cast<float>(draw(rng));
        PointCloud<float> scaled;
        scaled.coords = s.cloud.coords.array().rowwise() * scale.array();
        const auto out = segment_forward(scaled, onehot, params, scfg);
        if (v == 0) scores = out.per_point_scores;
        else scores += out.per_point_scores;
      }
      scores /= static_cast<float>(votes);
    } else {
      scores = segment_forward(s.cloud, onehot, params, scfg).per_point_scores;
    }
    std::vector<int> pred(static_cast<size_t>(scores.rows()));
    for (Eigen::Index r = 0; r < scores.rows(); ++r)
      pred[static_cast<size_t>(r)] = argmax_index<float>(scores.row(r));
    ious[static_cast<size_t>(i)] =
        shape_iou(pred, s.part_labels, class_parts[static_cast<size_t>(s.shape_label)]);
  });
  return mean_iou(ious);
}

void write_metrics_csv(const std::string& path, const std::vector<EpochRow>& rows) {
  std::ofstream f(path);
  if (!f) throw data_error("cannot write " + path);
  f << "epoch,lr,train_loss,test_metric,mprime_mean,mprime_max,mprime_min\n";
  for (const auto& r : rows) {
    f << r.epoch << ',' << fmt_g(r.lr) << ',' << fmt_g(r.train_loss) << ','
      << fmt_g(r.test_metric) << ',' << fmt_g(r.mprime_mean) << ',' << r.mprime_max << ','
      << r.mprime_min << '\n';
  }
  if (!f) throw data_error("write failed: " + path);
}

}  // namespace

TrainResult run_train(const RunConfig& raw) {
  RunConfig cfg = raw;
  cfg.finalize();
  fs::create_directories(cfg.out_dir);

  LoadedData data = load_data(cfg);
  if (data.train.samples.empty()) throw config_error("config: training split is empty");
  const int class_count = data.train.class_count();
  const bool seg = cfg.task == "segment";

  ClassifierConfig ccfg;
  SegmenterConfig scfg;
  NetworkParams<float> params;
  if (seg) {
    if (data.train.part_count < 2) throw config_error("config: segmentation needs part labels");
    scfg = cfg.segmenter_config(class_count, data.train.part_count);
    params = init_segmenter_params<float>(scfg, cfg.seed);
  } else {
    ccfg = cfg.classifier_config(class_count);
    params = init_classifier_params<float>(ccfg, cfg.seed);
  }

  AdamState<float> adam;
  adam.lr = cfg.base_lr;

  AugmentParams aug;
  aug.scale_lo = cfg.scale_lo;
  aug.scale_hi = cfg.scale_hi;
  aug.shift_range = cfg.shift_range;
  aug.noise_sigma = cfg.noise_sigma;

  const int jobs = resolve_jobs(cfg.jobs);
  const int train_count = static_cast<int>(data.train.samples.size());

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_decay_rate, cfg.lr_decay_interval);

    Rng shuffle_rng(mix_seed(cfg.seed, kStreamShuffle, static_cast<std::uint64_t>(epoch)));
    const auto batches = batch_indices(train_count, cfg.batch_size, true, shuffle_rng);

    double loss_sum = 0.0;
    long loss_clouds = 0;
    std::vector<int> mprimes;

    for (size_t step = 0; step < batches.size(); ++step) {
      const auto& batch = batches[step];

      std::vector<PointCloud<float>> clouds;
      clouds.reserve(batch.size());
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (int idx : batch) {
        const auto& s = data.train.samples[static_cast<size_t>(idx)];
        if (cfg.augment) {
          Rng arng(mix_seed(cfg.seed ^ kStreamAugment, static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(idx)));
          clouds.push_back(augment(s.cloud, aug, arng));
        } else {
          clouds.push_back(s.cloud);
        }
        labels.push_back(s.shape_label);
      }
      std::vector<const PointCloud<float>*> ptrs;
      ptrs.reserve(clouds.size());
      for (const auto& c : clouds) ptrs.push_back(&c);

      Tape<float> tape(true);
      Binder<float> binder(tape);
      Rng drng(mix_seed(cfg.seed ^ kStreamDropout, static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(step)));

      typename Tape<float>::Var loss;
      if (seg) {
        auto out = segmenter_forward_tape(binder, params, scfg, ptrs,
                                          onehot_rows(labels, scfg.class_onehot_dim), Mode::train,
                                          drng);
        std::vector<int> point_labels;
        for (int idx : batch) {
          const auto& pl = data.train.samples[static_cast<size_t>(idx)].part_labels;
          point_labels.insert(point_labels.end(), pl.begin(), pl.end());
        }
        loss = tape.softmax_cross_entropy(out.point_logits, point_labels);
        mprimes.insert(mprimes.end(), out.distinct_counts.begin(), out.distinct_counts.end());
      } else {
        auto out = classifier_forward_tape(binder, params, ccfg, ptrs, Mode::train, drng);
        loss = tape.softmax_cross_entropy(out.logits, labels);
        mprimes.insert(mprimes.end(), out.distinct_counts.begin(), out.distinct_counts.end());
      }

      const double loss_value = static_cast<double>(tape.value(loss)(0, 0));
      if (!std::isfinite(loss_value))
        throw numeric_error("loss is not finite at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(step));
      tape.backward(loss);
      adam_step(binder, adam);

      loss_sum += loss_value * static_cast<double>(batch.size());
      loss_clouds += static_cast<long>(batch.size());
    }

    EpochRow row;
    row.epoch = epoch;
    row.lr = adam.lr;
    row.train_loss = loss_sum / static_cast<double>(loss_clouds);
    row.test_metric = seg ? eval_segmentation(data.test, params, scfg, 1, cfg.scale_lo,
                                              cfg.scale_hi, cfg.seed, jobs)
                          : eval_classification(data.test, params, ccfg, 1, cfg.scale_lo,
                                                cfg.scale_hi, cfg.seed, jobs, nullptr);
    if (!mprimes.empty()) {
      const DistinctStats st = count_distinct_stats(mprimes);
      row.mprime_mean = st.mean;
      row.mprime_max = st.max;
      row.mprime_min = st.min;
    }
    result.rows.push_back(row);
  }

  result.metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  write_metrics_csv(result.metrics_path, result.rows);

  result.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.bin").string();
  save_checkpoint(result.checkpoint_path, params, &adam);

  result.config_path = (fs::path(cfg.out_dir) / "config.txt").string();
  std::vector<std::string> extra;
  {
    std::string names = "# classes:";
    for (const auto& n : data.train.class_names) names += " " + n;
    extra.push_back(names);
    extra.push_back("# part_count: " + std::to_string(data.train.part_count));
  }
  save_run_config(result.config_path, cfg, extra);

  result.final_test_metric =
      result.rows.empty()
          ? (seg ? eval_segmentation(data.test, params, scfg, 1, cfg.scale_lo, cfg.scale_hi,
                                     cfg.seed, jobs)
                 : eval_classification(data.test, params, ccfg, 1, cfg.scale_lo, cfg.scale_hi,
                                       cfg.seed, jobs, nullptr))
          : result.rows.back().test_metric;
  return result;
}

EvalResult run_eval(const RunConfig& raw, const std::string& checkpoint_path) {
  RunConfig cfg = raw;
  cfg.finalize();
  fs::create_directories(cfg.out_dir);

  LoadedData data = load_data(cfg);
  if (data.test.samples.empty()) throw config_error("config: test split is empty");
  const int class_count = data.test.class_count();
  const bool seg = cfg.task == "segment";
  const int jobs = resolve_jobs(cfg.jobs);

  EvalResult res;
  res.sample_count = static_cast<int>(data.test.samples.size());

  nlohmann::json report;
  report["task"] = cfg.task;
  report["samples"] = res.sample_count;
  report["votes"] = cfg.votes;
  report["checkpoint"] = checkpoint_path;

  if (seg) {
    if (data.test.part_count < 2) throw config_error("config: segmentation needs part labels");
    SegmenterConfig scfg = cfg.segmenter_config(class_count, data.test.part_count);
    NetworkParams<float> params = init_segmenter_params<float>(scfg, cfg.seed);
    load_checkpoint(checkpoint_path, params);
    res.metric_plain = eval_segmentation(data.test, params, scfg, 1, cfg.scale_lo, cfg.scale_hi,
                                         cfg.seed, jobs);
    res.metric_voted = cfg.votes > 1
                           ? eval_segmentation(data.test, params, scfg, cfg.votes, cfg.scale_lo,
                                               cfg.scale_hi, cfg.seed, jobs)
                           : res.metric_plain;
    report["miou"] = res.metric_plain;
    report["miou_voted"] = res.metric_voted;
  } else {
    ClassifierConfig ccfg = cfg.classifier_config(class_count);
    NetworkParams<float> params = init_classifier_params<float>(ccfg, cfg.seed);
    load_checkpoint(checkpoint_path, params);
    std::vector<PredictionRow> rows;
    res.metric_plain = eval_classification(data.test, params, ccfg, 1, cfg.scale_lo, cfg.scale_hi,
                                           cfg.seed, jobs, &rows);
    res.metric_voted = cfg.votes > 1
                           ? eval_classification(data.test, params, ccfg, cfg.votes, cfg.scale_lo,
                                                 cfg.scale_hi, cfg.seed, jobs, nullptr)
                           : res.metric_plain;
    report["accuracy"] = res.metric_plain;
    report["accuracy_voted"] = res.metric_voted;
    save_prediction_csv((fs::path(cfg.out_dir) / "predictions.csv").string(), rows, class_count);
  }

  res.report_json_path = (fs::path(cfg.out_dir) / "report.json").string();
  std::ofstream jf(res.report_json_path);
  if (!jf) throw data_error("cannot write " + res.report_json_path);
  jf << report.dump(2) << '\n';

  res.report_csv_path = (fs::path(cfg.out_dir) / "report.csv").string();
  std::ofstream cf(res.report_csv_path);
  if (!cf) throw data_error("cannot write " + res.report_csv_path);
  cf << "task,samples,votes,metric_plain,metric_voted\n"
     << cfg.task << ',' << res.sample_count << ',' << cfg.votes << ',' << fmt_g(res.metric_plain)
     << ',' << fmt_g(res.metric_voted) << '\n';
  return res;
}

}  // namespace localnet
