#include "dpnet/data_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dpnet/rng.hpp"
#include "json.hpp"

namespace dpnet {

namespace {

using nlohmann::json;

[[noreturn]] void parse_fail(const std::string& path, std::size_t offset,
                             const std::string& what) {
  throw std::runtime_error(path + ": " + what + " at byte " + std::to_string(offset));
}

std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  const std::size_t off = static_cast<std::size_t>(in.tellg());
  if (!in.read(reinterpret_cast<char*>(b), 4))
    parse_fail(path, off, "truncated header");
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void write_f64_le(std::ofstream& out, const double* d, std::size_t n) {
  static_assert(sizeof(double) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(d), static_cast<std::streamsize>(n * 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t v;
      std::memcpy(&v, &d[i], 8);
      unsigned char b[8];
      for (int j = 0; j < 8; ++j) b[j] = static_cast<unsigned char>(v >> (8 * j));
      out.write(reinterpret_cast<char*>(b), 8);
    }
  }
}

void read_f64_le(std::ifstream& in, double* d, std::size_t n, const std::string& path) {
  const std::size_t off = static_cast<std::size_t>(in.tellg());
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(d), static_cast<std::streamsize>(n * 8)))
      parse_fail(path, off, "truncated filter data");
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char b[8];
      if (!in.read(reinterpret_cast<char*>(b), 8))
        parse_fail(path, off + i * 8, "truncated filter data");
      std::uint64_t v = 0;
      for (int j = 0; j < 8; ++j) v |= static_cast<std::uint64_t>(b[j]) << (8 * j);
      std::memcpy(&d[i], &v, 8);
    }
  }
}

constexpr char kCkptMagic[] = "DPNCKPT1";

}  // namespace

Tensor load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");

  const std::uint32_t magic = read_be32(in, path);
  const std::uint32_t dtype = (magic >> 8) & 0xff;
  const std::uint32_t ndims = magic & 0xff;
  if ((magic >> 16) != 0) parse_fail(path, 0, "bad magic " + std::to_string(magic));
  if (dtype != 0x08) parse_fail(path, 2, "unsupported dtype " + std::to_string(dtype));
  if (ndims != 1 && ndims != 3)
    parse_fail(path, 3, "unsupported dimension count " + std::to_string(ndims));

  std::vector<int> dims(ndims);
  std::size_t total = 1;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    const std::uint32_t d = read_be32(in, path);
    if (d == 0 || d > (1u << 30)) parse_fail(path, 4 + 4 * i, "bad dimension");
    dims[i] = static_cast<int>(d);
    total *= d;
  }

  std::vector<unsigned char> bytes(total);
  const std::size_t data_off = 4 + 4 * ndims;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total)))
    parse_fail(path, data_off + static_cast<std::size_t>(in.gcount()), "truncated data");
  char extra;
  if (in.read(&extra, 1)) parse_fail(path, data_off + total, "trailing data");

  Tensor t(dims);
  for (std::size_t i = 0; i < total; ++i) t[i] = static_cast<double>(bytes[i]);
  return t;
}

void save_idx(const std::string& path, const Tensor& t) {
  if (t.rank() != 1 && t.rank() != 3)
    throw std::invalid_argument("save_idx: rank must be 1 or 3, got " + t.shape_str());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");

  write_be32(out, 0x0800u | static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) write_be32(out, static_cast<std::uint32_t>(t.dim(i)));
  std::vector<unsigned char> bytes(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double v = t[i];
    if (v < 0.0 || v > 255.0 || v != std::floor(v))
      throw std::invalid_argument("save_idx: value " + std::to_string(v) +
                                  " is not an unsigned byte");
    bytes[i] = static_cast<unsigned char>(v);
  }
  out.write(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path + ": write failed");
}

Dataset load_mnist(const std::string& images_path, const std::string& labels_path,
                   int limit) {
  Tensor images = load_idx(images_path);
  Tensor labels = load_idx(labels_path);
  if (images.rank() != 3)
    throw std::runtime_error(images_path + ": expected an image file (3 dimensions)");
  if (labels.rank() != 1)
    throw std::runtime_error(labels_path + ": expected a label file (1 dimension)");
  if (images.dim(0) != labels.dim(0))
    throw std::runtime_error("image count " + std::to_string(images.dim(0)) +
                             " does not match label count " + std::to_string(labels.dim(0)));

  int n = images.dim(0);
  if (limit > 0 && limit < n) n = limit;
  const int h = images.dim(1), w = images.dim(2);

  Dataset d;
  d.images = Tensor({n, 1, h, w});
  std::copy_n(images.data(), static_cast<std::size_t>(n) * h * w, d.images.data());
  d.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) d.labels[i] = static_cast<int>(labels[i]);
  return d;
}

Dataset subset_dataset(const Dataset& d, int n, std::uint64_t seed) {
  const int N = d.images.dim(0);
  if (n < 1 || n > N)
    throw std::invalid_argument("subset_dataset: size " + std::to_string(n) +
                                " out of range for " + std::to_string(N) + " images");
  std::vector<int> order(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;
  if (seed != 0) {
    Rng rng(seed);
    rng.shuffle(order);
  }

  const std::size_t stride =
      static_cast<std::size_t>(d.images.dim(1)) * d.images.dim(2) * d.images.dim(3);
  Dataset out;
  out.split = d.split;
  out.images = Tensor({n, d.images.dim(1), d.images.dim(2), d.images.dim(3)});
  out.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int src = order[static_cast<std::size_t>(i)];
    std::copy_n(d.images.data() + src * stride, stride, out.images.data() + i * stride);
    out.labels[static_cast<std::size_t>(i)] = d.labels[static_cast<std::size_t>(src)];
  }
  return out;
}

void save_checkpoint(const std::string& path, const ModelState& m) {
  json hdr;
  hdr["format"] = 1;
  hdr["input"] = {{"channels", m.input_channels}, {"h", m.input_h}, {"w", m.input_w}};
  hdr["pool_mode"] = m.pool_mode == PoolMode::gaussian ? "gaussian" : "max";
  hdr["nonneg"] = m.nonneg;
  hdr["seed"] = m.seed;
  json layers = json::array();
  for (const LayerSpec& ls : m.layers)
    layers.push_back({{"maps", ls.maps},
                      {"filter_size", ls.filter_size},
                      {"pool_size", ls.pool_size},
                      {"fan_in", ls.fan_in},
                      {"lambda", ls.lambda},
                      {"alpha", ls.alpha}});
  hdr["layers"] = layers;

  const std::string h = hdr.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(kCkptMagic, 8);
  write_be32(out, static_cast<std::uint32_t>(h.size()));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const FilterBank& f : m.filters) {
    write_be32(out, static_cast<std::uint32_t>(f.mask.size()));
    out.write(reinterpret_cast<const char*>(f.mask.data()),
              static_cast<std::streamsize>(f.mask.size()));
    write_be32(out, static_cast<std::uint32_t>(f.filters.numel()));
    write_f64_le(out, f.filters.data(), f.filters.numel());
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    parse_fail(path, 0, "not a model checkpoint");
  const std::uint32_t hlen = read_be32(in, path);
  std::string h(hlen, '\0');
  if (!in.read(h.data(), hlen)) parse_fail(path, 12, "truncated header");

  json hdr;
  try {
    hdr = json::parse(h);
  } catch (const std::exception& e) {
    parse_fail(path, 12, std::string("bad header: ") + e.what());
  }
  if (hdr.value("format", 0) != 1) parse_fail(path, 12, "unsupported format version");

  std::vector<LayerSpec> layers;
  for (const json& jl : hdr.at("layers")) {
    LayerSpec ls;
    ls.maps = jl.at("maps").get<int>();
    ls.filter_size = jl.at("filter_size").get<int>();
    ls.pool_size = jl.at("pool_size").get<int>();
    ls.fan_in = jl.at("fan_in").get<int>();
    ls.lambda = jl.at("lambda").get<double>();
    ls.alpha = jl.at("alpha").get<double>();
    layers.push_back(ls);
  }
  ModelState m = make_model(hdr.at("input").at("channels").get<int>(),
                            hdr.at("input").at("h").get<int>(),
                            hdr.at("input").at("w").get<int>(), layers,
                            hdr.at("seed").get<std::uint64_t>(),
                            hdr.at("pool_mode").get<std::string>() == "max"
                                ? PoolMode::max
                                : PoolMode::gaussian,
                            hdr.at("nonneg").get<bool>());
  for (FilterBank& f : m.filters) {
    std::size_t off = static_cast<std::size_t>(in.tellg());
    const std::uint32_t mask_len = read_be32(in, path);
    if (mask_len != f.mask.size())
      parse_fail(path, off, "connectivity blob length " + std::to_string(mask_len) +
                                " does not match expected " +
                                std::to_string(f.mask.size()));
    if (!in.read(reinterpret_cast<char*>(f.mask.data()),
                 static_cast<std::streamsize>(f.mask.size())))
      parse_fail(path, off + 4, "truncated connectivity mask");
    off = static_cast<std::size_t>(in.tellg());
    const std::uint32_t filt_len = read_be32(in, path);
    if (filt_len != f.filters.numel())
      parse_fail(path, off, "filter blob length " + std::to_string(filt_len) +
                                " does not match expected " +
                                std::to_string(f.filters.numel()));
    read_f64_le(in, f.filters.data(), f.filters.numel(), path);
  }
  return m;
}

void export_features(const std::string& path, const std::vector<SparseVec>& rows,
                     const std::vector<int>& labels) {
  if (rows.size() != labels.size())
    throw std::invalid_argument("export_features: row/label count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  char buf[64];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << labels[i];
    const SparseVec& r = rows[i];
    for (std::size_t j = 0; j < r.idx.size(); ++j) {
      std::snprintf(buf, sizeof(buf), " %d:%.9g", r.idx[j] + 1, r.val[j]);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

std::pair<std::vector<SparseVec>, std::vector<int>> import_features(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::vector<SparseVec> rows;
  std::vector<int> labels;
  std::string line;
  int max_dim = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    SparseVec r;
    const char* s = line.c_str();
    char* end = nullptr;
    const long lab = std::strtol(s, &end, 10);
    if (end == s)
      throw std::runtime_error(path + ": bad label on line " + std::to_string(lineno));
    labels.push_back(static_cast<int>(lab));
    s = end;
    while (*s) {
      while (*s == ' ') ++s;
      if (!*s) break;
      const long idx = std::strtol(s, &end, 10);
      if (end == s || *end != ':')
        throw std::runtime_error(path + ": bad index on line " + std::to_string(lineno));
      s = end + 1;
      const double val = std::strtod(s, &end);
      if (end == s)
        throw std::runtime_error(path + ": bad value on line " + std::to_string(lineno));
      s = end;
      r.idx.push_back(static_cast<int>(idx) - 1);
      r.val.push_back(val);
      max_dim = std::max(max_dim, static_cast<int>(idx));
    }
    rows.push_back(std::move(r));
  }
  for (SparseVec& r : rows) r.dim = max_dim;
  return {std::move(rows), std::move(labels)};
}

}  // namespace dpnet
