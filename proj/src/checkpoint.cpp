#include "localnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace localnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint code assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'N', 'C', 'H', 'K', 'P', 'T', '\0'};
constexpr std::uint64_t kVersion = 1;

struct Block {
  std::string name;
  std::vector<std::uint64_t> dims;
  const float* data = nullptr;       // borrowed when writing
  std::vector<float> owned;          // filled when reading

  std::uint64_t count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& f, const std::string& path) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!f) throw data_error("truncated checkpoint: " + path);
  return v;
}

void write_blocks(const std::string& path, const std::vector<Block>& blocks) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot write " + path);
  f.write(kMagic, sizeof(kMagic));
  write_u64(f, kVersion);
  write_u64(f, blocks.size());
  for (const auto& b : blocks) {
    write_u64(f, b.name.size());
    f.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_u64(f, b.dims.size());
    for (auto d : b.dims) write_u64(f, d);
    f.write(reinterpret_cast<const char*>(b.data),
            static_cast<std::streamsize>(b.count() * sizeof(float)));
  }
  if (!f) throw data_error("write failed: " + path);
}

std::map<std::string, Block> read_blocks(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw data_error("not a checkpoint file: " + path);
  if (read_u64(f, path) != kVersion) throw data_error("unsupported checkpoint version: " + path);

  std::map<std::string, Block> blocks;
  const std::uint64_t count = read_u64(f, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    Block b;
    const std::uint64_t name_len = read_u64(f, path);
    if (name_len > 4096) throw data_error("corrupt checkpoint (name length): " + path);
    b.name.resize(name_len);
    f.read(b.name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rank = read_u64(f, path);
    if (rank > 8) throw data_error("corrupt checkpoint (rank): " + path);
    b.dims.resize(rank);
    for (auto& d : b.dims) d = read_u64(f, path);
    if (b.count() > (1ull << 32)) throw data_error("corrupt checkpoint (size): " + path);
    b.owned.resize(b.count());
    f.read(reinterpret_cast<char*>(b.owned.data()),
           static_cast<std::streamsize>(b.owned.size() * sizeof(float)));
    if (!f) throw data_error("truncated checkpoint: " + path);
    if (!blocks.emplace(b.name, std::move(b)).second)
      throw data_error("duplicate block in checkpoint: " + path);
  }
  return blocks;
}

}  // namespace

void save_checkpoint(const std::string& path, NetworkParams<float>& params,
                     const AdamState<float>* opt) {
  std::vector<Block> blocks;
  params.visit_tensors(true, [&](const std::string& name, float* data,
                                 const std::vector<std::size_t>& dims) {
    Block b;
    b.name = name;
    b.dims.assign(dims.begin(), dims.end());
    b.data = data;
    blocks.push_back(std::move(b));
  });

  std::vector<float> scalars;  // keep alive until write_blocks runs
  if (opt) {
    params.visit_tensors(false, [&](const std::string& name, float*,
                                    const std::vector<std::size_t>& dims) {
      const auto it = opt->slots.find(name);
      if (it == opt->slots.end()) return;  // parameter never updated (e.g. unused stack)
      for (const char* kind : {"m", "v"}) {
        Block b;
        b.name = std::string("adam.") + kind + "." + name;
        b.dims.assign(dims.begin(), dims.end());
        b.data = (kind[0] == 'm') ? it->second.m.data() : it->second.v.data();
        blocks.push_back(std::move(b));
      }
    });
    scalars = {static_cast<float>(opt->step_count), static_cast<float>(opt->lr),
               static_cast<float>(opt->beta1), static_cast<float>(opt->beta2),
               static_cast<float>(opt->eps)};
    Block b;
    b.name = "optim.scalars";
    b.dims = {scalars.size()};
    b.data = scalars.data();
    blocks.push_back(std::move(b));
  }
  write_blocks(path, blocks);
}

void load_checkpoint(const std::string& path, NetworkParams<float>& params,
                     AdamState<float>* opt) {
  auto blocks = read_blocks(path);

  auto take = [&](const std::string& name, const std::vector<std::size_t>& dims) -> const Block& {
    const auto it = blocks.find(name);
    if (it == blocks.end()) throw data_error(path + ": missing tensor " + name);
    const Block& b = it->second;
    if (b.dims.size() != dims.size())
      throw data_error(path + ": rank mismatch for " + name);
    for (size_t i = 0; i < dims.size(); ++i)
      if (b.dims[i] != dims[i]) throw data_error(path + ": shape mismatch for " + name);
    return b;
  };

  params.visit_tensors(true, [&](const std::string& name, float* data,
                                 const std::vector<std::size_t>& dims) {
    const Block& b = take(name, dims);
    std::memcpy(data, b.owned.data(), b.owned.size() * sizeof(float));
  });

  if (opt) {
    const auto it = blocks.find("optim.scalars");
    if (it == blocks.end() || it->second.owned.size() != 5)
      throw data_error(path + ": checkpoint carries no optimizer state");
    const auto& s = it->second.owned;
    opt->step_count = static_cast<long>(s[0]);
    opt->lr = static_cast<double>(s[1]);
    opt->beta1 = static_cast<double>(s[2]);
    opt->beta2 = static_cast<double>(s[3]);
    opt->eps = static_cast<double>(s[4]);
    opt->slots.clear();
    params.visit_tensors(false, [&](const std::string& name, float*,
                                    const std::vector<std::size_t>& dims) {
      if (blocks.find("adam.m." + name) == blocks.end()) return;
      const Eigen::Index rows = dims.size() == 2 ? static_cast<Eigen::Index>(dims[0]) : 1;
      const Eigen::Index cols = static_cast<Eigen::Index>(dims.back());
      auto& slot = opt->slot(name, rows, cols);
      const Block& m = take("adam.m." + name, dims);
      const Block& v = take("adam.v." + name, dims);
      std::memcpy(slot.m.data(), m.owned.data(), m.owned.size() * sizeof(float));
      std::memcpy(slot.v.data(), v.owned.data(), v.owned.size() * sizeof(float));
    });
  }
}

}  // namespace localnet
