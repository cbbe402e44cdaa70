#include "rgmp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "rgmp/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace rgmp {

namespace {

constexpr char kMagic[4] = {'R', 'G', 'M', 'P'};
constexpr std::uint32_t kVersion = 1;

struct ArrayEntry {
  std::string name;
  std::vector<int> dims;
  std::vector<double> data;
};

struct Container {
  std::string tag;  // 4 chars
  std::map<std::string, double> cfg;
  std::vector<ArrayEntry> arrays;
};

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, std::string path)
      : buf_(buf), path_(std::move(path)) {}

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > 4096) throw IoError(path_ + ": implausible name length in container");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void raw(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) throw IoError(path_ + ": truncated container");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

void write_container(const std::string& path, const Container& c) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  if (c.tag.size() != 4) throw ValidationError("section tag must be 4 characters");
  w.raw(c.tag.data(), 4);

  w.u32(static_cast<std::uint32_t>(c.cfg.size()));
  for (const auto& [name, value] : c.cfg) {
    w.str(name);
    w.f64(value);
  }

  w.u32(static_cast<std::uint32_t>(c.arrays.size()));
  std::uint64_t offset = 0;
  for (const ArrayEntry& a : c.arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.dims.size()));
    for (int d : a.dims) w.u32(static_cast<std::uint32_t>(d));
    w.u64(offset);
    offset += a.data.size();
  }
  w.u64(offset);
  for (const ArrayEntry& a : c.arrays) {
    w.raw(a.data.data(), a.data.size() * sizeof(double));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(w.bytes().data()),
          static_cast<std::streamsize>(w.bytes().size()));
  if (!f) throw IoError("short write to " + path);
}

Container read_container(const std::string& path, const std::string& want_tag) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for reading");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  Reader r(buf, path);

  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError(path + " is not a checkpoint container (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError(path + ": unsupported container version " + std::to_string(version));
  }
  Container c;
  char tag[4];
  r.raw(tag, 4);
  c.tag.assign(tag, 4);
  if (c.tag != want_tag) {
    throw ValidationError(path + " holds a \"" + c.tag + "\" section, expected \"" +
                          want_tag + "\"");
  }

  const std::uint32_t n_cfg = r.u32();
  for (std::uint32_t i = 0; i < n_cfg; ++i) {
    std::string name = r.str();
    c.cfg[name] = r.f64();
  }

  struct PendingArray {
    std::string name;
    std::vector<int> dims;
    std::uint64_t offset;
    std::uint64_t count;
  };
  const std::uint32_t n_arrays = r.u32();
  std::vector<PendingArray> pending;
  pending.reserve(n_arrays);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    PendingArray pa;
    pa.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 4) {
      throw ValidationError(path + ": array " + pa.name + " has unsupported rank " +
                            std::to_string(rank));
    }
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim == 0 || dim > (1u << 24)) {
        throw ValidationError(path + ": array " + pa.name + " has invalid extent " +
                              std::to_string(dim));
      }
      pa.dims.push_back(static_cast<int>(dim));
      count *= dim;
    }
    pa.offset = r.u64();
    pa.count = count;
    pending.push_back(std::move(pa));
  }

  const std::uint64_t blob_len = r.u64();
  std::vector<double> blob(blob_len);
  r.raw(blob.data(), blob_len * sizeof(double));
  if (!r.exhausted()) throw IoError(path + ": trailing bytes after container blob");

  for (PendingArray& pa : pending) {
    if (pa.offset + pa.count > blob_len) {
      throw IoError(path + ": array " + pa.name + " overruns the container blob");
    }
    ArrayEntry a;
    a.name = std::move(pa.name);
    a.dims = std::move(pa.dims);
    a.data.assign(blob.begin() + static_cast<std::ptrdiff_t>(pa.offset),
                  blob.begin() + static_cast<std::ptrdiff_t>(pa.offset + pa.count));
    c.arrays.push_back(std::move(a));
  }
  return c;
}

double require_cfg(const Container& c, const std::string& path, const std::string& key) {
  auto it = c.cfg.find(key);
  if (it == c.cfg.end()) {
    throw ValidationError(path + ": missing config entry \"" + key + "\"");
  }
  return it->second;
}

}  // namespace

void save_model_checkpoint(const std::string& path, const PolicyModel& m) {
  Container c;
  c.tag = "ARGN";
  c.cfg["width0"] = m.cfg.widths[0];
  c.cfg["width1"] = m.cfg.widths[1];
  c.cfg["width2"] = m.cfg.widths[2];
  c.cfg["patch"] = m.cfg.patch;
  c.cfg["decay_mode"] = m.cfg.decay_mode == DecayMode::PerPatch ? 0.0 : 1.0;
  c.cfg["scan_init"] = m.cfg.scan_init == ScanInit::K ? 0.0 : 1.0;
  c.cfg["eps_den"] = m.cfg.eps_den;
  for (const Parameter* p : m.parameters()) {
    ArrayEntry a;
    a.name = p->name;
    a.dims = p->value.shape();
    a.data.assign(p->value.data(), p->value.data() + p->value.size());
    c.arrays.push_back(std::move(a));
  }
  write_container(path, c);
}

PolicyModel load_model_checkpoint(const std::string& path) {
  const Container c = read_container(path, "ARGN");
  ModelConfig cfg;
  cfg.widths[0] = static_cast<int>(require_cfg(c, path, "width0"));
  cfg.widths[1] = static_cast<int>(require_cfg(c, path, "width1"));
  cfg.widths[2] = static_cast<int>(require_cfg(c, path, "width2"));
  cfg.patch = static_cast<int>(require_cfg(c, path, "patch"));
  cfg.decay_mode =
      require_cfg(c, path, "decay_mode") == 0.0 ? DecayMode::PerPatch : DecayMode::Shared;
  cfg.scan_init = require_cfg(c, path, "scan_init") == 0.0 ? ScanInit::K : ScanInit::KV;
  cfg.eps_den = require_cfg(c, path, "eps_den");

  PolicyModel m(cfg, 0);
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : m.parameters()) by_name[p->name] = p;

  std::size_t matched = 0;
  for (const ArrayEntry& a : c.arrays) {
    auto it = by_name.find(a.name);
    if (it == by_name.end()) {
      throw ValidationError(path + ": unknown parameter \"" + a.name +
                            "\" for this model configuration");
    }
    Parameter* p = it->second;
    if (a.dims != p->value.shape()) {
      Tensor probe(a.dims);
      throw ValidationError(path + ": parameter \"" + a.name + "\" has shape " +
                            probe.shape_str() + ", model expects " +
                            p->value.shape_str());
    }
    std::memcpy(p->value.data(), a.data.data(), a.data.size() * sizeof(double));
    ++matched;
  }
  if (matched != by_name.size()) {
    throw ValidationError(path + ": container holds " + std::to_string(matched) +
                          " of the " + std::to_string(by_name.size()) +
                          " model parameters");
  }
  return m;
}

void save_gmm_checkpoint(const std::string& path, const GmmParams& g) {
  g.validate();
  Container c;
  c.tag = "GMM0";
  c.cfg["K"] = g.K;

  ArrayEntry alpha;
  alpha.name = "alpha";
  alpha.dims = {g.K};
  alpha.data = g.alpha;
  c.arrays.push_back(std::move(alpha));

  ArrayEntry mu;
  mu.name = "mu";
  mu.dims = {g.K, 6};
  mu.data.reserve(static_cast<std::size_t>(g.K) * 6);
  for (int k = 0; k < g.K; ++k) {
    for (int j = 0; j < 6; ++j) mu.data.push_back(g.mu(k, j));
  }
  c.arrays.push_back(std::move(mu));

  ArrayEntry sigma;
  sigma.name = "sigma";
  sigma.dims = {g.K, 6, 6};
  sigma.data.reserve(static_cast<std::size_t>(g.K) * 36);
  for (int k = 0; k < g.K; ++k) {
    const Eigen::MatrixXd& s = g.sigma[static_cast<std::size_t>(k)];
    for (int r = 0; r < 6; ++r) {
      for (int cidx = 0; cidx < 6; ++cidx) sigma.data.push_back(s(r, cidx));
    }
  }
  c.arrays.push_back(std::move(sigma));

  write_container(path, c);
}

GmmParams load_gmm_checkpoint(const std::string& path) {
  const Container c = read_container(path, "GMM0");
  const int K = static_cast<int>(require_cfg(c, path, "K"));
  if (K < 1) throw ValidationError(path + ": component count must be >= 1");

  GmmParams g;
  g.K = K;
  bool saw_alpha = false, saw_mu = false, saw_sigma = false;
  for (const ArrayEntry& a : c.arrays) {
    if (a.name == "alpha") {
      if (a.dims != std::vector<int>{K}) {
        throw ValidationError(path + ": alpha must have extent K=" + std::to_string(K));
      }
      g.alpha = a.data;
      saw_alpha = true;
    } else if (a.name == "mu") {
      if (a.dims != std::vector<int>{K, 6}) {
        throw ValidationError(path + ": mu must be K x 6");
      }
      g.mu.resize(K, 6);
      for (int k = 0; k < K; ++k) {
        for (int j = 0; j < 6; ++j) g.mu(k, j) = a.data[static_cast<std::size_t>(k) * 6 + j];
      }
      saw_mu = true;
    } else if (a.name == "sigma") {
      if (a.dims != std::vector<int>{K, 6, 6}) {
        throw ValidationError(path + ": sigma must be K x 6 x 6");
      }
      g.sigma.assign(static_cast<std::size_t>(K), Eigen::MatrixXd(6, 6));
      for (int k = 0; k < K; ++k) {
        for (int r = 0; r < 6; ++r) {
          for (int cidx = 0; cidx < 6; ++cidx) {
            g.sigma[static_cast<std::size_t>(k)](r, cidx) =
                a.data[(static_cast<std::size_t>(k) * 6 + r) * 6 + cidx];
          }
        }
      }
      saw_sigma = true;
    } else {
      throw ValidationError(path + ": unknown mixture array \"" + a.name + "\"");
    }
  }
  if (!saw_alpha || !saw_mu || !saw_sigma) {
    throw ValidationError(path + ": mixture container must hold alpha, mu, and sigma");
  }
  g.validate();
  return g;
}

}  // namespace rgmp
