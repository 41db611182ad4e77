#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dhd/binary_io.hpp"
#include "dhd/error.hpp"
#include "dhd/matrix.hpp"
#include "dhd/random.hpp"

namespace dhd {

using LabelSet = std::vector<std::uint32_t>;  // sorted, unique class indices

struct Dataset {
  Matrix features;  // one sample per row
  std::vector<LabelSet> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }

  /// Multi-hot {0,1} vector over num_classes.
  std::vector<double> multi_hot(std::size_t i) const {
    std::vector<double> y(num_classes, 0.0);
    for (auto c : labels[i]) y[c] = 1.0;
    return y;
  }

  void validate() const {
    if (labels.size() != features.rows()) throw ShapeError("dataset: label count does not match feature rows");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].empty()) throw InvalidInput("dataset: sample " + std::to_string(i) + " has no label");
      for (auto c : labels[i])
        if (c >= num_classes) throw InvalidInput("dataset: sample " + std::to_string(i) + " has class out of range");
    }
    if (!all_finite(features.flat())) throw InvalidInput("dataset: non-finite feature");
  }

  bool operator==(const Dataset&) const = default;
};

/// Gaussian-cluster dataset description.
struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t dim = 64;
  /// Per-coordinate noise standard deviation, as a multiple of the mean
  /// pairwise centroid distance.
  double spread = 0.1;
  std::size_t train_size = 800;
  std::size_t query_size = 200;
  std::size_t database_size = 1000;
  /// Optional num_classes x num_classes matrix; entry (c, j) is the
  /// probability that class j is added to a sample whose primary class is c.
  /// Empty means single-label data.
  std::vector<std::vector<double>> cooccurrence;

  void validate() const {
    if (num_classes < 1) throw InvalidConfig("synthetic.num_classes must be >= 1");
    if (dim < 1) throw InvalidConfig("synthetic.dim must be >= 1");
    if (!(spread >= 0.0) || !std::isfinite(spread)) throw InvalidConfig("synthetic.spread must be >= 0");
    if (train_size + query_size + database_size == 0) throw InvalidConfig("synthetic: all split sizes are zero");
    if (!cooccurrence.empty()) {
      if (cooccurrence.size() != num_classes) throw InvalidConfig("synthetic.cooccurrence must have num_classes rows");
      for (const auto& row : cooccurrence) {
        if (row.size() != num_classes) throw InvalidConfig("synthetic.cooccurrence rows must have num_classes entries");
        for (double p : row)
          if (!(p >= 0.0 && p <= 1.0)) throw InvalidConfig("synthetic.cooccurrence entries must be in [0, 1]");
      }
    }
  }
};

struct SyntheticData {
  Matrix centroids;
  double noise_stddev = 0.0;
  Dataset train;
  Dataset query;
  Dataset database;
};

/// Centroids ~ N(0, I); each sample picks a primary class uniformly, adds
/// co-occurring classes, and is the mean of its class centroids plus
/// isotropic Gaussian noise. Splits are drawn in order train, query, database.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  SyntheticData out;
  out.centroids = Matrix(spec.num_classes, spec.dim);
  for (double& v : out.centroids.flat()) v = rng.normal();

  double mean_distance = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < spec.num_classes; ++a)
    for (std::size_t b = a + 1; b < spec.num_classes; ++b) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < spec.dim; ++k) {
        const double d = out.centroids(a, k) - out.centroids(b, k);
        d2 += d * d;
      }
      mean_distance += std::sqrt(d2);
      ++pairs;
    }
  mean_distance = pairs > 0 ? mean_distance / static_cast<double>(pairs) : 1.0;
  out.noise_stddev = spec.spread * mean_distance;

  auto draw = [&](std::size_t n) {
    Dataset d;
    d.num_classes = spec.num_classes;
    d.features = Matrix(n, spec.dim);
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto primary = static_cast<std::uint32_t>(rng.below(spec.num_classes));
      LabelSet labels{primary};
      if (!spec.cooccurrence.empty())
        for (std::uint32_t j = 0; j < spec.num_classes; ++j)
          if (j != primary && rng.bernoulli(spec.cooccurrence[primary][j])) labels.push_back(j);
      std::sort(labels.begin(), labels.end());
      auto row = d.features.row(i);
      const double w = 1.0 / static_cast<double>(labels.size());
      for (auto c : labels)
        for (std::size_t k = 0; k < spec.dim; ++k) row[k] += w * out.centroids(c, k);
      for (double& v : row) v += rng.normal(0.0, out.noise_stddev);
      d.labels[i] = std::move(labels);
    }
    return d;
  };
  out.train = draw(spec.train_size);
  out.query = draw(spec.query_size);
  out.database = draw(spec.database_size);
  return out;
}

// Text tables. Features: header "# dhd-features v1 rows=N dim=D", then one
// comma-separated row per sample in shortest round-trip decimal form.
// Labels: header "# dhd-labels v1 rows=N classes=C", then semicolon-joined
// class indices per sample.

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError("line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_uint(std::string_view s, std::size_t line) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError("line " + std::to_string(line) + ": bad integer '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

/// Parses "# <tag> v1 key=value key=value".
inline std::vector<std::uint64_t> parse_header(const std::string& line, std::string_view tag,
                                               std::initializer_list<std::string_view> keys) {
  std::istringstream in(line);
  std::string hash, got_tag, version;
  in >> hash >> got_tag >> version;
  if (hash != "#" || got_tag != tag) throw VersionMismatch(std::string(tag) + ": missing header");
  if (version != "v1") throw VersionMismatch(std::string(tag) + ": unsupported version " + version);
  std::vector<std::uint64_t> values;
  for (auto key : keys) {
    std::string kv;
    in >> kv;
    const auto eq = kv.find('=');
    if (eq == std::string::npos || kv.substr(0, eq) != key)
      throw IoError(std::string(tag) + ": header lacks '" + std::string(key) + "'");
    values.push_back(parse_uint(std::string_view(kv).substr(eq + 1), 1));
  }
  return values;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

inline std::string format_features(const Matrix& features) {
  std::string out = "# dhd-features v1 rows=" + std::to_string(features.rows()) +
                    " dim=" + std::to_string(features.cols()) + "\n";
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto row = features.row(i);
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out.push_back(',');
      detail::append_double(out, row[k]);
    }
    out.push_back('\n');
  }
  return out;
}

inline std::string format_labels(std::span<const LabelSet> labels, std::size_t num_classes) {
  std::string out = "# dhd-labels v1 rows=" + std::to_string(labels.size()) +
                    " classes=" + std::to_string(num_classes) + "\n";
  for (const auto& l : labels) {
    for (std::size_t k = 0; k < l.size(); ++k) {
      if (k) out.push_back(';');
      out += std::to_string(l[k]);
    }
    out.push_back('\n');
  }
  return out;
}

inline Matrix parse_features(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("feature table: empty file");
  const auto hdr = detail::parse_header(line, "dhd-features", {"rows", "dim"});
  Matrix m(hdr[0], hdr[1]);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (!std::getline(in, line)) throw IoError("feature table: expected " + std::to_string(m.rows()) + " rows");
    const auto parts = detail::split(line, ',');
    if (parts.size() != m.cols())
      throw IoError("feature table line " + std::to_string(i + 2) + ": expected " + std::to_string(m.cols()) +
                    " values");
    for (std::size_t k = 0; k < parts.size(); ++k) m(i, k) = detail::parse_double(parts[k], i + 2);
  }
  return m;
}

inline std::pair<std::vector<LabelSet>, std::size_t> parse_labels(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("label table: empty file");
  const auto hdr = detail::parse_header(line, "dhd-labels", {"rows", "classes"});
  std::vector<LabelSet> labels(hdr[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::getline(in, line)) throw IoError("label table: expected " + std::to_string(labels.size()) + " rows");
    if (line.empty()) throw IoError("label table line " + std::to_string(i + 2) + ": empty label");
    for (auto part : detail::split(line, ';')) {
      const auto c = detail::parse_uint(part, i + 2);
      if (c >= hdr[1]) throw IoError("label table line " + std::to_string(i + 2) + ": class out of range");
      labels[i].push_back(static_cast<std::uint32_t>(c));
    }
    std::sort(labels[i].begin(), labels[i].end());
    labels[i].erase(std::unique(labels[i].begin(), labels[i].end()), labels[i].end());
  }
  return {std::move(labels), hdr[1]};
}

inline void save_dataset_text(const Dataset& d, const std::filesystem::path& features_path,
                              const std::filesystem::path& labels_path) {
  detail::write_file(features_path, format_features(d.features));
  detail::write_file(labels_path, format_labels(d.labels, d.num_classes));
}

inline Dataset load_dataset_text(const std::filesystem::path& features_path,
                                 const std::filesystem::path& labels_path) {
  Dataset d;
  d.features = parse_features(detail::read_file(features_path));
  std::tie(d.labels, d.num_classes) = parse_labels(detail::read_file(labels_path));
  d.validate();
  return d;
}

// Packed binary variant: "DHDF", u16 version, u64 rows, u64 dim, u64 classes,
// rows*dim little-endian f64, then per row u32 count followed by u32 indices.

inline void save_dataset_binary(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::write_magic(out, "DHDF");
  io::write_le<std::uint16_t>(out, 1);
  io::write_le<std::uint64_t>(out, d.size());
  io::write_le<std::uint64_t>(out, d.dim());
  io::write_le<std::uint64_t>(out, d.num_classes);
  for (double v : d.features.flat()) io::write_f64(out, v);
  for (const auto& l : d.labels) {
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.size()));
    for (auto c : l) io::write_le<std::uint32_t>(out, c);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline Dataset load_dataset_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  io::expect_magic(in, "DHDF", "dataset file");
  const auto version = io::read_le<std::uint16_t>(in);
  if (version != 1) throw VersionMismatch("dataset file: unsupported version " + std::to_string(version));
  Dataset d;
  const auto rows = io::read_le<std::uint64_t>(in);
  const auto dim = io::read_le<std::uint64_t>(in);
  d.num_classes = io::read_le<std::uint64_t>(in);
  d.features = Matrix(rows, dim);
  for (double& v : d.features.flat()) v = io::read_f64(in);
  d.labels.resize(rows);
  for (auto& l : d.labels) {
    const auto n = io::read_le<std::uint32_t>(in);
    if (n > d.num_classes) throw IoError("dataset file: label count out of range");
    l.resize(n);
    for (auto& c : l) c = io::read_le<std::uint32_t>(in);
  }
  d.validate();
  return d;
}

}  // namespace dhd
