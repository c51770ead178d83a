#include "localnet/train.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace localnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw config_error("config: bad boolean for " + key + ": '" + v + "'");
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw config_error("config: bad integer for " + key + ": '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw config_error("config: bad number for " + key + ": '" + v + "'");
  }
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

// Accepts a Table-5-style letter (A = none ... H = all), "none"/"all", or a
// comma list of phi1/phi2/phi3.
MfcMask parse_mfc_spec(const std::string& spec) {
  const std::string s = trim(spec);
  if (s.size() == 1 && s[0] >= 'A' && s[0] <= 'H') {
    switch (s[0]) {
      case 'A': return {false, false, false};
      case 'B': return {true, false, false};
      case 'C': return {false, true, false};
      case 'D': return {false, false, true};
      case 'E': return {true, true, false};
      case 'F': return {true, false, true};
      case 'G': return {false, true, true};
      default: return {true, true, true};  // H
    }
  }
  if (s == "none") return {false, false, false};
  if (s == "all") return {true, true, true};
  MfcMask mask = {false, false, false};
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (t == "phi1") mask[0] = true;
    else if (t == "phi2") mask[1] = true;
    else if (t == "phi3") mask[2] = true;
    else throw config_error("config: bad mfc spec '" + spec + "'");
  }
  return mask;
}

std::string mfc_letter(const MfcMask& m) {
  const char letters[2][2][2] = {{{'A', 'D'}, {'C', 'G'}}, {{'B', 'F'}, {'E', 'H'}}};
  return std::string(1, letters[m[0] ? 1 : 0][m[1] ? 1 : 0][m[2] ? 1 : 0]);
}

void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "task") cfg.task = value;
  else if (key == "data") cfg.data = value;
  else if (key == "train_per_class") cfg.train_per_class = parse_int(value, key);
  else if (key == "test_per_class") cfg.test_per_class = parse_int(value, key);
  else if (key == "n_points") cfg.n_points = parse_int(value, key);
  else if (key == "gen_jitter") cfg.gen_jitter = parse_double(value, key);
  else if (key == "m") cfg.m = parse_int(value, key);
  else if (key == "k") cfg.k = parse_int(value, key);
  else if (key == "centers") cfg.centers = value;
  else if (key == "use_g1") cfg.use_g1 = parse_bool(value, key);
  else if (key == "mfc") cfg.mfc = value;
  else if (key == "dropout") cfg.dropout = parse_double(value, key);
  else if (key == "cpl_m") cfg.cpl_m = parse_int(value, key);
  else if (key == "k_interp") cfg.k_interp = parse_int(value, key);
  else if (key == "epochs") cfg.epochs = parse_int(value, key);
  else if (key == "batch_size") cfg.batch_size = parse_int(value, key);
  else if (key == "base_lr") cfg.base_lr = parse_double(value, key);
  else if (key == "lr_decay_rate") cfg.lr_decay_rate = parse_double(value, key);
  else if (key == "lr_decay_interval") cfg.lr_decay_interval = parse_int(value, key);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::strtoull(value.c_str(), nullptr, 10));
  else if (key == "augment") cfg.augment = parse_bool(value, key);
  else if (key == "scale_lo") cfg.scale_lo = parse_double(value, key);
  else if (key == "scale_hi") cfg.scale_hi = parse_double(value, key);
  else if (key == "shift_range") cfg.shift_range = parse_double(value, key);
  else if (key == "noise_sigma") cfg.noise_sigma = parse_double(value, key);
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "votes") cfg.votes = parse_int(value, key);
  else if (key == "jobs") cfg.jobs = parse_int(value, key);
  else throw config_error("config: unknown key '" + key + "'");
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot open config file " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_config_line(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

void save_run_config(const std::string& path, const RunConfig& cfg,
                     const std::vector<std::string>& extra_lines) {
  std::ofstream f(path);
  if (!f) throw data_error("cannot write " + path);
  f << "task = " << cfg.task << '\n'
    << "data = " << cfg.data << '\n'
    << "train_per_class = " << cfg.train_per_class << '\n'
    << "test_per_class = " << cfg.test_per_class << '\n'
    << "n_points = " << cfg.n_points << '\n'
    << "gen_jitter = " << fmt_g(cfg.gen_jitter) << '\n'
    << "m = " << cfg.m << '\n'
    << "k = " << cfg.k << '\n'
    << "centers = " << cfg.centers << '\n'
    << "use_g1 = " << (cfg.use_g1 ? "true" : "false") << '\n'
    << "mfc = " << cfg.mfc << '\n'
    << "dropout = " << fmt_g(cfg.dropout) << '\n'
    << "cpl_m = " << cfg.cpl_m << '\n'
    << "k_interp = " << cfg.k_interp << '\n'
    << "epochs = " << cfg.epochs << '\n'
    << "batch_size = " << cfg.batch_size << '\n'
    << "base_lr = " << fmt_g(cfg.base_lr) << '\n'
    << "lr_decay_rate = " << fmt_g(cfg.lr_decay_rate) << '\n'
    << "lr_decay_interval = " << cfg.lr_decay_interval << '\n'
    << "seed = " << cfg.seed << '\n'
    << "augment = " << (cfg.augment ? "true" : "false") << '\n'
    << "scale_lo = " << fmt_g(cfg.scale_lo) << '\n'
    << "scale_hi = " << fmt_g(cfg.scale_hi) << '\n'
    << "shift_range = " << fmt_g(cfg.shift_range) << '\n'
    << "noise_sigma = " << fmt_g(cfg.noise_sigma) << '\n'
    << "out_dir = " << cfg.out_dir << '\n'
    << "votes = " << cfg.votes << '\n'
    << "jobs = " << cfg.jobs << '\n';
  for (const auto& l : extra_lines) f << l << '\n';
  if (!f) throw data_error("write failed: " + path);
}

void RunConfig::finalize() {
  if (task != "classify" && task != "segment")
    throw config_error("config: task must be classify or segment");
  if (centers != "cpl" && centers != "fps")
    throw config_error("config: centers must be cpl or fps");
  const bool seg = task == "segment";
  if (m < 0) m = seg ? 512 : 256;
  if (k < 0) k = 128;
  if (scale_lo < 0.0) scale_lo = seg ? 0.5 : 0.66;
  if (scale_hi < 0.0) scale_hi = seg ? 2.0 : 1.4;
  if (mfc.empty()) mfc = seg ? "A" : "H";
  parse_mfc_spec(mfc);  // validate early
  if (epochs < 0) throw config_error("config: epochs must be >= 0");
  if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw config_error("config: base_lr must be > 0");
  if (!(lr_decay_rate > 0.0)) throw config_error("config: lr_decay_rate must be > 0");
  if (lr_decay_interval < 1) throw config_error("config: lr_decay_interval must be >= 1");
  if (n_points < 8) throw config_error("config: n_points must be >= 8");
  if (train_per_class < 0 || test_per_class < 0)
    throw config_error("config: per-class counts must be >= 0");
  if (votes < 1) throw config_error("config: votes must be >= 1");
  if (jobs < 1) throw config_error("config: jobs must be >= 1");
  if (augment) {
    if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi))
      throw config_error("config: need 0 < scale_lo <= scale_hi");
    if (shift_range < 0.0 || noise_sigma < 0.0)
      throw config_error("config: shift_range and noise_sigma must be >= 0");
  }
}

ClassifierConfig RunConfig::classifier_config(int class_count) const {
  ClassifierConfig c;
  c.class_count = class_count;
  c.m = m;
  c.k = k;
  c.use_cpl = centers == "cpl";
  c.use_g1 = use_g1;
  c.mfc = parse_mfc_spec(mfc);
  c.dropout_ratio = dropout;
  c.validate();
  return c;
}

SegmenterConfig RunConfig::segmenter_config(int class_count, int part_count) const {
  SegmenterConfig c;
  c.part_count = part_count;
  c.class_onehot_dim = class_count;
  c.m = m;
  c.k = k;
  c.use_g1 = use_g1;
  c.mfc = parse_mfc_spec(mfc);
  c.cpl_m = cpl_m;
  c.dropout_ratio = dropout;
  c.k_interp = k_interp;
  c.validate();
  return c;
}

int resolve_jobs(int requested) {
  int jobs = std::max(1, requested);
  if (const char* cap = std::getenv("LOCALNET_THREADS")) {
    try {
      const int limit = std::stoi(cap);
      if (limit >= 1) jobs = std::min(jobs, limit);
    } catch (const std::exception&) {
      throw config_error("LOCALNET_THREADS is not an integer");
    }
  }
  return jobs;
}

}  // namespace localnet
