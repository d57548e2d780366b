#pragma once

// Synthetic manifold datasets, CSV point-cloud I/O and train/test splits.

#include "cdcflow/core/error.hpp"
#include "cdcflow/core/random.hpp"
#include "cdcflow/core/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace cdcflow {

enum class Split : std::uint8_t { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// N points in R^d (stored as a d x N matrix) with a train/test tag per point.
struct PointCloud {
  Matrix points;
  std::vector<Split> split;
  std::uint64_t seed = 0;
  std::string name;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();

  Index dim() const { return points.rows(); }
  Index size() const { return points.cols(); }

  std::vector<Index> indices(Split which) const {
    std::vector<Index> out;
    for (Index i = 0; i < size(); ++i)
      if (split[static_cast<std::size_t>(i)] == which) out.push_back(i);
    return out;
  }

  Matrix subset(Split which) const {
    const auto idx = indices(which);
    Matrix out(dim(), static_cast<Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Index>(j)) = points.col(idx[j]);
    return out;
  }

  Matrix train_points() const { return subset(Split::train); }
  Matrix test_points() const { return subset(Split::test); }

  void validate() const {
    if (size() < 1 || dim() < 1) throw ConfigError("point cloud must hold at least one point of dimension >= 1");
    if (static_cast<Index>(split.size()) != size()) throw ConfigError("split tags do not cover all points");
    if (!points.allFinite()) throw ConfigError("point cloud contains non-finite coordinates");
  }
};

/// Wraps a bare d x N matrix as an all-train cloud.
inline PointCloud make_cloud(Matrix points, std::string name = "points") {
  PointCloud c;
  c.split.assign(static_cast<std::size_t>(points.cols()), Split::train);
  c.points = std::move(points);
  c.name = std::move(name);
  return c;
}

enum class DatasetKind { circle, two_circles, torus, gaussian, file };

inline std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::circle: return "circle";
    case DatasetKind::two_circles: return "two_circles";
    case DatasetKind::torus: return "torus";
    case DatasetKind::gaussian: return "gaussian";
    case DatasetKind::file: return "file";
  }
  return "?";
}

inline DatasetKind dataset_kind_from_string(std::string_view s) {
  for (auto k : {DatasetKind::circle, DatasetKind::two_circles, DatasetKind::torus, DatasetKind::gaussian, DatasetKind::file})
    if (to_string(k) == s) return k;
  throw ConfigError("unsupported dataset kind '" + std::string(s) + "'");
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::circle;
  Index n_train = 8;
  Index n_test = 0;
  /// Intrinsic dimension for tori (ambient 2*dim), ambient dimension for gaussian.
  Index dim = 1;
  std::vector<double> radii = {1.0};
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  /// CSV source for kind == file.
  std::string path;

  void validate() const {
    if (n_train < 0 || n_test < 0) throw ConfigError("dataset counts must be non-negative");
    if (noise_sigma < 0 || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be finite and >= 0");
    for (double r : radii)
      if (!(r > 0) || !std::isfinite(r)) throw ConfigError("radii must be strictly positive");
    switch (kind) {
      case DatasetKind::circle:
        if (radii.size() != 1) throw ConfigError("circle needs exactly one radius");
        break;
      case DatasetKind::two_circles:
        if (radii.size() != 2) throw ConfigError("two_circles needs exactly two radii");
        break;
      case DatasetKind::torus:
      case DatasetKind::gaussian:
        if (dim < 1) throw ConfigError("dim must be >= 1");
        break;
      case DatasetKind::file:
        if (path.empty()) throw ConfigError("file dataset needs a path");
        break;
    }
    if (kind != DatasetKind::file && n_train + n_test < 1) throw ConfigError("dataset must contain at least one point");
  }
};

namespace detail {

inline void write_double(std::ostream& out, double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  out.write(buf, res.ptr - buf);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Points on circles are equidistant in angle starting at 0; test points on
/// circles and all torus points are uniform random angles. Optional additive
/// Gaussian noise is applied to every coordinate. Deterministic in spec.seed.
inline PointCloud generate(const DatasetSpec& spec);

inline PointCloud load_csv(const std::string& path);

inline PointCloud generate(const DatasetSpec& spec) {
  spec.validate();
  if (spec.kind == DatasetKind::file) {
    PointCloud c = load_csv(spec.path);
    c.seed = spec.seed;
    return c;
  }

  auto rng = make_stream(spec.seed, {stream_tag::dataset});
  const Index n = spec.n_train + spec.n_test;
  PointCloud c;
  c.seed = spec.seed;
  c.name = std::string(to_string(spec.kind));
  c.split.assign(static_cast<std::size_t>(spec.n_train), Split::train);
  c.split.resize(static_cast<std::size_t>(n), Split::test);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  switch (spec.kind) {
    case DatasetKind::circle: {
      const double r = spec.radii[0];
      c.points.resize(2, n);
      for (Index i = 0; i < n; ++i) {
        const double theta = i < spec.n_train ? two_pi * static_cast<double>(i) / static_cast<double>(spec.n_train)
                                              : two_pi * uniform01(rng);
        c.points(0, i) = r * std::cos(theta);
        c.points(1, i) = r * std::sin(theta);
      }
      c.params = {{"radius", r}};
      break;
    }
    case DatasetKind::two_circles: {
      // First ceil(n_train/2) train points on circle 0, the rest on circle 1;
      // test points alternate between the circles.
      c.points.resize(2, n);
      const Index first = (spec.n_train + 1) / 2;
      const Index counts[2] = {first, spec.n_train - first};
      Index col = 0;
      for (int which = 0; which < 2; ++which)
        for (Index j = 0; j < counts[which]; ++j, ++col) {
          const double theta = two_pi * static_cast<double>(j) / static_cast<double>(counts[which]);
          c.points(0, col) = spec.radii[static_cast<std::size_t>(which)] * std::cos(theta);
          c.points(1, col) = spec.radii[static_cast<std::size_t>(which)] * std::sin(theta);
        }
      for (Index j = 0; j < spec.n_test; ++j, ++col) {
        const double r = spec.radii[static_cast<std::size_t>(j % 2)];
        const double theta = two_pi * uniform01(rng);
        c.points(0, col) = r * std::cos(theta);
        c.points(1, col) = r * std::sin(theta);
      }
      c.params = {{"radii", spec.radii}, {"concentric", true}};
      break;
    }
    case DatasetKind::torus: {
      c.points.resize(2 * spec.dim, n);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < spec.dim; ++j) {
          const double theta = two_pi * uniform01(rng);
          c.points(2 * j, i) = std::cos(theta);
          c.points(2 * j + 1, i) = std::sin(theta);
        }
      c.params = {{"dim", spec.dim}};
      break;
    }
    case DatasetKind::gaussian: {
      c.points = standard_normal(rng, spec.dim, n);
      c.params = {{"dim", spec.dim}};
      break;
    }
    case DatasetKind::file:
      break;
  }

  if (spec.noise_sigma > 0) {
    auto noise_rng = make_stream(spec.seed, {stream_tag::dataset, stream_tag::noise});
    c.points += spec.noise_sigma * standard_normal(noise_rng, c.points.rows(), c.points.cols());
  }
  c.params["noise_sigma"] = spec.noise_sigma;
  c.params["n_train"] = spec.n_train;
  c.params["n_test"] = spec.n_test;
  return c;
}

/// Header `x0,...,x{d-1}[,split]`, one row per point, 17 significant digits.
inline void save_csv(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  for (Index j = 0; j < cloud.dim(); ++j) out << (j ? "," : "") << 'x' << j;
  out << ",split\n";
  for (Index i = 0; i < cloud.size(); ++i) {
    for (Index j = 0; j < cloud.dim(); ++j) {
      if (j) out << ',';
      detail::write_double(out, cloud.points(j, i));
    }
    out << ',' << to_string(cloud.split[static_cast<std::size_t>(i)]) << '\n';
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

/// Samples and other untagged point sets: every point written as train.
inline void save_points_csv(const Matrix& points, const std::string& path) { save_csv(make_cloud(points), path); }

/// Parses CSV text. A `split` column (any position) is honoured; without it
/// every point is tagged train.
inline PointCloud parse_csv(std::istream& in, const std::string& source = "<csv>") {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) break;
  }
  if (line_no == 0 || detail::trim(line).empty()) throw ParseError("empty CSV file '" + source + "'");
  for (auto f : detail::split_fields(line)) header.emplace_back(detail::trim(f));

  std::ptrdiff_t split_col = -1;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == "split") split_col = static_cast<std::ptrdiff_t>(j);
  const std::size_t d = header.size() - (split_col >= 0 ? 1 : 0);
  if (d == 0) throw ParseError("CSV '" + source + "' has no coordinate columns", line_no);

  std::vector<double> values;
  std::vector<Split> tags;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size())
      throw ParseError("ragged row in '" + source + "': expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    Split tag = Split::train;
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const auto cell = detail::trim(fields[j]);
      if (static_cast<std::ptrdiff_t>(j) == split_col) {
        if (cell == "train") tag = Split::train;
        else if (cell == "test") tag = Split::test;
        else throw ParseError("bad split tag '" + std::string(cell) + "' in '" + source + "'", line_no);
        continue;
      }
      double x = 0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), x);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(x))
        throw ParseError("non-numeric cell '" + std::string(cell) + "' in '" + source + "'", line_no);
      values.push_back(x);
    }
    tags.push_back(tag);
  }
  if (tags.empty()) throw ParseError("CSV '" + source + "' has a header but no rows", line_no);

  PointCloud c;
  c.points = Eigen::Map<const Matrix>(values.data(), static_cast<Index>(d), static_cast<Index>(tags.size()));
  c.split = std::move(tags);
  c.name = "file";
  c.params = {{"path", source}};
  return c;
}

inline PointCloud load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return parse_csv(in, path);
}

/// Re-tags the cloud: a seeded random permutation picks exactly n_train
/// train points; the rest become test.
inline PointCloud split(PointCloud cloud, Index n_train, std::uint64_t seed, Warnings* warnings = nullptr) {
  if (n_train < 0 || n_train > cloud.size())
    throw ConfigError("n_train=" + std::to_string(n_train) + " exceeds cloud size " + std::to_string(cloud.size()));
  if (n_train == cloud.size()) warn(warnings, "split leaves an empty test set");
  std::vector<Index> perm(static_cast<std::size_t>(cloud.size()));
  std::iota(perm.begin(), perm.end(), Index{0});
  auto rng = make_stream(seed, {stream_tag::split});
  std::shuffle(perm.begin(), perm.end(), rng);
  cloud.split.assign(perm.size(), Split::test);
  for (Index i = 0; i < n_train; ++i) cloud.split[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = Split::train;
  cloud.seed = seed;
  return cloud;
}

}  // namespace cdcflow
