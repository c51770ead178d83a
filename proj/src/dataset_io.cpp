#include "localnet/dataset.hpp"

#include <cstdio>
#include <filesystem>
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

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

[[noreturn]] void fail(const std::string& path, int line, const std::string& msg) {
  throw data_error(path + ":" + std::to_string(line) + ": " + msg);
}

// %.9g keeps every float distinct, so written clouds re-read bit-identically.
std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

float parse_float(const std::string& s, const std::string& path, int line) {
  try {
    size_t used = 0;
    const float v = std::stof(s, &used);
    if (used != s.size()) fail(path, line, "trailing characters in number '" + s + "'");
    return v;
  } catch (const data_error&) {
    throw;
  } catch (const std::exception&) {
    fail(path, line, "not a number: '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& path, int line) {
  try {
    size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) fail(path, line, "trailing characters in integer '" + s + "'");
    return v;
  } catch (const data_error&) {
    throw;
  } catch (const std::exception&) {
    fail(path, line, "not an integer: '" + s + "'");
  }
}

}  // namespace

void save_cloud_csv(const std::string& path, const PointCloud<float>& pc,
                    const std::vector<int>* labels) {
  if (labels && static_cast<Eigen::Index>(labels->size()) != pc.size())
    throw std::invalid_argument("save_cloud_csv: label count mismatch");
  std::ofstream f(path);
  if (!f) throw data_error("cannot write " + path);
  f << (labels ? "x,y,z,label\n" : "x,y,z\n");
  for (Eigen::Index i = 0; i < pc.size(); ++i) {
    f << fmt_float(pc.coords(i, 0)) << ',' << fmt_float(pc.coords(i, 1)) << ','
      << fmt_float(pc.coords(i, 2));
    if (labels) f << ',' << (*labels)[static_cast<size_t>(i)];
    f << '\n';
  }
  if (!f) throw data_error("write failed: " + path);
}

std::pair<PointCloud<float>, std::vector<int>> load_cloud_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("cannot open " + path);
  std::string line;
  int lineno = 0;

  if (!std::getline(f, line)) fail(path, 1, "empty file");
  ++lineno;
  const auto header = split_csv(trim(line));
  bool with_label = false;
  if (header.size() == 4 && header[0] == "x" && header[1] == "y" && header[2] == "z" &&
      header[3] == "label") {
    with_label = true;
  } else if (!(header.size() == 3 && header[0] == "x" && header[1] == "y" && header[2] == "z")) {
    fail(path, 1, "expected header x,y,z[,label]");
  }

  std::vector<std::array<float, 3>> pts;
  std::vector<int> labels;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto fields = split_csv(t);
    if (fields.size() != (with_label ? 4u : 3u))
      fail(path, lineno, "expected " + std::to_string(with_label ? 4 : 3) + " fields");
    pts.push_back({parse_float(fields[0], path, lineno), parse_float(fields[1], path, lineno),
                   parse_float(fields[2], path, lineno)});
    if (with_label) labels.push_back(parse_int(fields[3], path, lineno));
  }
  if (pts.empty()) fail(path, lineno, "no points");

  PointCloud<float> pc;
  pc.coords.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (size_t i = 0; i < pts.size(); ++i)
    for (int a = 0; a < 3; ++a) pc.coords(static_cast<Eigen::Index>(i), a) = pts[i][static_cast<size_t>(a)];
  return {std::move(pc), std::move(labels)};
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path);
  if (!f) throw data_error("cannot write " + path);
  for (const auto& e : entries) {
    f << e.relative_path << ',' << e.class_name;
    if (!e.split.empty()) f << ',' << e.split;
    f << '\n';
  }
  if (!f) throw data_error("write failed: " + path);
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("cannot open " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split_csv(t);
    if (fields.size() < 2 || fields.size() > 3) fail(path, lineno, "expected path,class[,split]");
    if (fields[0].empty() || fields[1].empty()) fail(path, lineno, "empty path or class name");
    ManifestEntry e;
    e.relative_path = fields[0];
    e.class_name = fields[1];
    if (fields.size() == 3) e.split = fields[2];
    entries.push_back(std::move(e));
  }
  return entries;
}

// Entries without a split column count as "train". Class ids follow first
// appearance order in the manifest so train/test splits of one manifest
// agree on the labeling.
Dataset<float> load_manifest_dataset(const std::string& manifest_path, const std::string& split) {
  const auto entries = load_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

  Dataset<float> ds;
  for (const auto& e : entries) {
    bool known = false;
    for (const auto& n : ds.class_names) known = known || (n == e.class_name);
    if (!known) ds.class_names.push_back(e.class_name);
  }
  int max_part = -1;
  for (const auto& e : entries) {
    const std::string s = e.split.empty() ? "train" : e.split;
    if (!split.empty() && s != split) continue;
    auto [cloud, labels] = load_cloud_csv((base / e.relative_path).string());
    LabeledSample<float> sample;
    sample.cloud = std::move(cloud);
    for (size_t i = 0; i < ds.class_names.size(); ++i)
      if (ds.class_names[i] == e.class_name) sample.shape_label = static_cast<int>(i);
    if (!labels.empty()) {
      for (int l : labels) max_part = std::max(max_part, l);
      sample.part_labels = std::move(labels);
    }
    ds.samples.push_back(std::move(sample));
  }
  ds.part_count = max_part + 1;
  return ds;
}

void save_dataset_csv(const std::string& dir, const Dataset<float>& ds, const std::string& split,
                      const std::string& manifest_name) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  std::vector<int> per_class_counter(ds.class_names.size(), 0);
  for (const auto& s : ds.samples) {
    const std::string cls = ds.class_names[static_cast<size_t>(s.shape_label)];
    const int ordinal = per_class_counter[static_cast<size_t>(s.shape_label)]++;
    const std::string rel = cls + "_" + split + "_" + std::to_string(ordinal) + ".csv";
    save_cloud_csv((std::filesystem::path(dir) / rel).string(), s.cloud,
                   s.has_parts() ? &s.part_labels : nullptr);
    entries.push_back({rel, cls, split});
  }
  const auto manifest = std::filesystem::path(dir) / manifest_name;
  // Append to an existing manifest so train and test splits can share one.
  std::vector<ManifestEntry> all;
  if (std::filesystem::exists(manifest)) all = load_manifest(manifest.string());
  all.insert(all.end(), entries.begin(), entries.end());
  save_manifest(manifest.string(), all);
}

Mesh load_off(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("cannot open " + path);
  std::string line;
  int lineno = 0;

  auto next_content = [&](const char* what) -> std::string {
    while (std::getline(f, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (!t.empty() && t[0] != '#') return t;
    }
    fail(path, lineno, std::string("unexpected end of file, expected ") + what);
  };

  std::string head = next_content("OFF header");
  if (head.rfind("OFF", 0) != 0) fail(path, lineno, "missing OFF header");
  std::string counts = trim(head.substr(3));
  if (counts.empty()) counts = next_content("vertex/face counts");

  long v = 0, fc = 0, ec = 0;
  {
    std::stringstream ss(counts);
    if (!(ss >> v >> fc >> ec) || v < 0 || fc < 0)
      fail(path, lineno, "bad count line '" + counts + "'");
  }

  Mesh mesh;
  mesh.vertices.resize(v, 3);
  for (long i = 0; i < v; ++i) {
    std::stringstream ss(next_content("vertex"));
    double x, y, z;
    if (!(ss >> x >> y >> z)) fail(path, lineno, "bad vertex line");
    mesh.vertices(i, 0) = x;
    mesh.vertices(i, 1) = y;
    mesh.vertices(i, 2) = z;
  }
  for (long i = 0; i < fc; ++i) {
    std::stringstream ss(next_content("face"));
    long cnt = 0;
    if (!(ss >> cnt) || cnt < 3) fail(path, lineno, "bad face vertex count");
    std::vector<long> idx(static_cast<size_t>(cnt));
    for (long j = 0; j < cnt; ++j) {
      if (!(ss >> idx[static_cast<size_t>(j)])) fail(path, lineno, "truncated face line");
      if (idx[static_cast<size_t>(j)] < 0 || idx[static_cast<size_t>(j)] >= v)
        fail(path, lineno, "vertex index out of range");
    }
    // Fan triangulation around the first vertex for quads and larger.
    for (long j = 1; j + 1 < cnt; ++j)
      mesh.faces.push_back({static_cast<int>(idx[0]), static_cast<int>(idx[static_cast<size_t>(j)]),
                            static_cast<int>(idx[static_cast<size_t>(j + 1)])});
  }
  return mesh;
}

}  // namespace localnet
