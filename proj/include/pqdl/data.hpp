#pragma once

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pqdl/error.hpp"
#include "pqdl/matrix.hpp"
#include "pqdl/nn.hpp"
#include "pqdl/rng.hpp"

namespace pqdl {

/// Labeled examples. `origin[i]` is the index of example i in the dataset it
/// was ultimately drawn from, so subsets can be checked for leakage.
struct Dataset {
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 2;
  Shape shape;
  std::string name;
  std::string provenance;
  std::vector<std::size_t> origin;

  std::size_t size() const noexcept { return labels.size(); }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset d;
    d.inputs = Matrix(rows.size(), inputs.cols());
    d.labels.reserve(rows.size());
    d.origin.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= size()) throw DataError("subset index out of range");
      std::copy_n(inputs.row(rows[i]).begin(), inputs.cols(), d.inputs.row(i).begin());
      d.labels.push_back(labels[rows[i]]);
      d.origin.push_back(origin.empty() ? rows[i] : origin[rows[i]]);
    }
    d.num_classes = num_classes;
    d.shape = shape;
    d.name = name;
    d.provenance = provenance;
    return d;
  }

  Batch batch(std::span<const std::size_t> rows) const {
    Batch b{Matrix(rows.size(), inputs.cols()), {}};
    b.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(inputs.row(rows[i]).begin(), inputs.cols(), b.inputs.row(i).begin());
      b.labels.push_back(labels[rows[i]]);
    }
    return b;
  }

  Batch all() const { return {inputs, labels}; }

  /// Throws DataError when labels, shape or origin are inconsistent.
  void validate() const {
    if (size() == 0) throw DataError("dataset '" + name + "' is empty");
    if (inputs.rows() != labels.size()) throw DataError("input/label count mismatch");
    if (inputs.cols() != shape.size()) throw DataError("input width does not match shape");
    if (num_classes < 2) throw DataError("dataset needs at least 2 classes");
    for (std::size_t y : labels)
      if (y >= num_classes) throw DataError("label out of range");
    if (!origin.empty() && origin.size() != labels.size())
      throw DataError("origin index count mismatch");
  }
};

/// Scales all features jointly to [0, 1] with one dataset-wide min/max.
inline void normalize_min_max(Matrix& inputs) {
  auto v = inputs.values();
  if (v.empty()) return;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double min = *lo;
  const double range = *hi - *lo;
  for (double& x : v) x = range > 0.0 ? (x - min) / range : 0.0;
}

namespace detail {

inline std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw DataError("cannot open '" + path + "'");
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  const std::string message = msg ? msg : "";
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END))
    throw DataError("read error in '" + path + "': " + message);
  return out;
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> data;
};

inline IdxArray parse_idx(const std::vector<unsigned char>& bytes, std::uint32_t magic,
                          const std::string& path) {
  if (bytes.size() < 4) throw DataError("'" + path + "': truncated IDX header");
  const std::uint32_t got = be32(bytes, 0);
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x (expected 0x%08x)", got, magic);
    throw DataError("'" + path + "': " + buf);
  }
  const std::size_t ndims = magic & 0xff;
  if (bytes.size() < 4 + 4 * ndims) throw DataError("'" + path + "': truncated IDX header");
  IdxArray a;
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    a.dims.push_back(be32(bytes, 4 + 4 * d));
    count *= a.dims.back();
  }
  const std::size_t offset = 4 + 4 * ndims;
  if (bytes.size() - offset < count) throw DataError("'" + path + "': truncated IDX payload");
  if (bytes.size() - offset > count) throw DataError("'" + path + "': trailing bytes after IDX payload");
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return a;
}

}  // namespace detail

/// MNIST-family IDX pair (images 0x00000803, labels 0x00000801), raw or
/// gzip-compressed. Pixels are scaled by 1/255.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto images = detail::parse_idx(detail::read_maybe_gzip(images_path), 0x00000803, images_path);
  const auto labels = detail::parse_idx(detail::read_maybe_gzip(labels_path), 0x00000801, labels_path);
  if (images.dims[0] != labels.dims[0])
    throw DataError("count mismatch: " + std::to_string(images.dims[0]) + " images, " +
                    std::to_string(labels.dims[0]) + " labels");
  const std::size_t n = images.dims[0];
  const std::size_t h = images.dims[1];
  const std::size_t w = images.dims[2];
  Dataset d;
  d.shape = Shape::image(h, w, 1);
  d.inputs = Matrix(n, h * w);
  auto px = d.inputs.values();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = images.data[i] / 255.0;
  std::size_t max_label = 0;
  for (unsigned char y : labels.data) {
    d.labels.push_back(y);
    max_label = std::max<std::size_t>(max_label, y);
  }
  d.num_classes = std::max<std::size_t>(2, max_label + 1);
  d.origin.resize(n);
  std::iota(d.origin.begin(), d.origin.end(), 0);
  d.name = images_path;
  d.provenance = "idx:" + images_path + "," + labels_path;
  d.validate();
  return d;
}

/// CSV with header `label,f0,f1,...`; features are min-max normalized.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "': missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::size_t dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (line.rfind("label,", 0) != 0 || dim == 0)
    throw DataError("'" + path + "': header must start with 'label,f0'");
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cells.size() != dim + 1)
      throw DataError("'" + path + "' line " + std::to_string(lineno) + ": expected " +
                      std::to_string(dim + 1) + " fields");
    std::size_t y = 0;
    auto r = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), y);
    if (r.ec != std::errc{} || r.ptr != cells[0].data() + cells[0].size())
      throw DataError("'" + path + "' line " + std::to_string(lineno) + ": bad label");
    labels.push_back(y);
    for (std::size_t c = 1; c <= dim; ++c) {
      double v = 0.0;
      auto rv = std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), v);
      if (rv.ec != std::errc{} || !std::isfinite(v))
        throw DataError("'" + path + "' line " + std::to_string(lineno) + ": bad feature");
      values.push_back(v);
    }
  }
  Dataset d;
  d.shape = Shape::flat(dim);
  d.inputs = Matrix(labels.size(), dim);
  std::copy(values.begin(), values.end(), d.inputs.values().begin());
  normalize_min_max(d.inputs);
  d.labels = std::move(labels);
  std::size_t max_label = 0;
  for (std::size_t y : d.labels) max_label = std::max(max_label, y);
  d.num_classes = std::max<std::size_t>(2, max_label + 1);
  d.origin.resize(d.size());
  std::iota(d.origin.begin(), d.origin.end(), 0);
  d.name = path;
  d.provenance = "csv:" + path;
  d.validate();
  return d;
}

/// Balanced Gaussian mixture with unit-variance isotropic clusters. Class
/// centers are drawn from N(0, (separation^2 / dim) I) and rejected until
/// every pair is at least `separation` apart. Examples cycle through the
/// classes (example i has label i % num_classes).
inline Dataset synth_mixture(std::size_t num_classes, std::size_t dim,
                             std::size_t examples_per_class, double separation,
                             std::uint64_t seed) {
  if (num_classes < 2 || dim == 0 || examples_per_class == 0)
    throw DataError("synth_mixture: counts must be positive (and at least 2 classes)");
  if (!(separation >= 0.0)) throw DataError("synth_mixture: separation must be >= 0");
  constexpr int kMaxRetries = 10000;
  auto rng = Rng::stream(seed, Stream::synth);
  const double spread = std::max(separation, 1.0) / std::sqrt(static_cast<double>(dim));
  std::vector<std::vector<double>> centers;
  for (std::size_t c = 0; c < num_classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
      std::vector<double> cand(dim);
      for (double& x : cand) x = spread * rng.normal();
      placed = std::all_of(centers.begin(), centers.end(), [&](const auto& other) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) d2 += (cand[j] - other[j]) * (cand[j] - other[j]);
        return std::sqrt(d2) >= separation;
      });
      if (placed) centers.push_back(std::move(cand));
    }
    if (!placed) throw DataError("synth_mixture: separation infeasible after bounded retries");
  }
  const std::size_t n = num_classes * examples_per_class;
  Dataset d;
  d.shape = Shape::flat(dim);
  d.num_classes = num_classes;
  d.inputs = Matrix(n, dim);
  d.labels.resize(n);
  d.origin.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % num_classes;
    d.labels[i] = y;
    d.origin[i] = i;
    auto row = d.inputs.row(i);
    for (std::size_t j = 0; j < dim; ++j) row[j] = centers[y][j] + rng.normal();
  }
  normalize_min_max(d.inputs);
  std::ostringstream prov;
  prov << "synth:K=" << num_classes << ",dim=" << dim << ",per_class=" << examples_per_class
       << ",separation=" << separation << ",seed=" << seed;
  d.name = "synth_mixture";
  d.provenance = prov.str();
  return d;
}

/// Nested subsets: subset(n) is the first n entries of one seeded permutation.
struct PrefixChain {
  std::vector<std::size_t> order;
  std::vector<std::size_t> sizes;

  std::span<const std::size_t> subset(std::size_t n) const {
    if (n > order.size()) throw DataError("prefix size exceeds dataset");
    return {order.data(), n};
  }
  /// Indices added when growing from size m to size n (n > m).
  std::span<const std::size_t> added(std::size_t m, std::size_t n) const {
    if (m > n || n > order.size()) throw DataError("bad prefix range");
    return {order.data() + m, n - m};
  }
};

/// Seeded permutation of [0, n); the order in which examples are transmitted.
inline std::vector<std::size_t> transmission_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = Rng::stream(seed, Stream::chain);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

inline PrefixChain make_prefix_chain(std::size_t dataset_size, std::vector<std::size_t> sizes,
                                     std::uint64_t seed) {
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || sizes[i] > dataset_size)
      throw DataError("prefix size " + std::to_string(sizes[i]) + " out of range [1, " +
                      std::to_string(dataset_size) + "]");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw DataError("prefix sizes must strictly increase");
  }
  return {transmission_order(dataset_size, seed), std::move(sizes)};
}

inline PrefixChain make_prefix_chain(const Dataset& dataset, std::vector<std::size_t> sizes,
                                     std::uint64_t seed) {
  return make_prefix_chain(dataset.size(), std::move(sizes), seed);
}

struct SplitSpec {
  double calib_fraction = 0.10;
  std::uint64_t seed = 0;
};

struct TrainCalibSplit {
  Dataset train;
  Dataset calib;
};

/// calib size = max(1, round(fraction * n)). The partition is drawn from
/// Rng::stream(seed, split, {n}) and both halves keep prefix order.
inline TrainCalibSplit split_train_calib(const Dataset& subset, const SplitSpec& spec) {
  if (!(spec.calib_fraction > 0.0 && spec.calib_fraction < 1.0))
    throw DataError("calibration fraction must lie in (0, 1)");
  const std::size_t n = subset.size();
  if (n < 2) throw DataError("need at least 2 examples to split, got " + std::to_string(n));
  const auto calib_n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(spec.calib_fraction * static_cast<double>(n))));
  if (calib_n >= n) throw DataError("split leaves no training examples");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = Rng::stream(spec.seed, Stream::split, {n});
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<std::size_t> calib(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(calib_n));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(calib_n), perm.end());
  std::sort(calib.begin(), calib.end());
  std::sort(train.begin(), train.end());
  return {subset.subset(train), subset.subset(calib)};
}

}  // namespace pqdl
