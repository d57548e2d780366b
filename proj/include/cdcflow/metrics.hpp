#pragma once

// Evaluation: memorisation ratio, distance to manifold, coverage, the
// closed-form Gaussian-mixture densities and the per-checkpoint report.

#include "cdcflow/core/error.hpp"
#include "cdcflow/core/parallel.hpp"
#include "cdcflow/core/types.hpp"
#include "cdcflow/geometry.hpp"
#include "cdcflow/knn.hpp"
#include "cdcflow/mlp.hpp"
#include "cdcflow/ode.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace cdcflow {

inline constexpr double kDefaultMemorisationCutoff = 0.2;

struct TrainPointMemorisation {
  Index index = 0;
  Index assigned = 0;
  Index memorised = 0;
  double pct() const { return assigned ? 100.0 * static_cast<double>(memorised) / static_cast<double>(assigned) : 0.0; }
};

struct MemorisationResult {
  /// Mean of per-train-point percentages over points with >= 1 assigned sample.
  double memorised_pct = 0.0;
  double cutoff = kDefaultMemorisationCutoff;
  /// M(y) per sample.
  Vector ratios;
  /// Nearest train point per sample.
  std::vector<Index> nearest;
  std::vector<TrainPointMemorisation> per_point;

  /// Same aggregation restricted to a subset of train points.
  double pct_over(const std::vector<Index>& train_indices) const {
    double sum = 0.0;
    Index count = 0;
    for (Index i : train_indices) {
      const auto& p = per_point.at(static_cast<std::size_t>(i));
      if (p.assigned == 0) continue;
      sum += p.pct();
      ++count;
    }
    return count ? sum / static_cast<double>(count) : 0.0;
  }
};

/// M(y) = |y - x1| / |y - x2| with x1, x2 the two nearest train points.
inline MemorisationResult memorisation(const Matrix& samples, const Matrix& train, double cutoff = kDefaultMemorisationCutoff,
                                       unsigned threads = 1) {
  if (train.cols() < 2) throw ConfigError("memorisation needs at least 2 train points");
  if (samples.cols() < 1) throw ConfigError("memorisation needs at least one sample");
  if (samples.rows() != train.rows()) throw ConfigError("sample and train dimensions differ");
  if (!(cutoff > 0)) throw ConfigError("memorisation cutoff must be > 0");
  const KnnIndex index(train);
  MemorisationResult out;
  out.cutoff = cutoff;
  out.ratios.resize(samples.cols());
  out.nearest.resize(static_cast<std::size_t>(samples.cols()));
  parallel_for(static_cast<std::size_t>(samples.cols()), threads, [&](std::size_t j) {
    const auto nn = index.query(samples.col(static_cast<Index>(j)), 2);
    const double d1 = std::sqrt(nn[0].dist2), d2 = std::sqrt(nn[1].dist2);
    out.ratios(static_cast<Index>(j)) = d1 == 0.0 ? 0.0 : d1 / d2;
    out.nearest[j] = nn[0].index;
  });
  out.per_point.resize(static_cast<std::size_t>(train.cols()));
  for (Index i = 0; i < train.cols(); ++i) out.per_point[static_cast<std::size_t>(i)].index = i;
  for (Index j = 0; j < samples.cols(); ++j) {
    auto& p = out.per_point[static_cast<std::size_t>(out.nearest[static_cast<std::size_t>(j)])];
    ++p.assigned;
    if (out.ratios(j) < cutoff) ++p.memorised;
  }
  std::vector<Index> all(static_cast<std::size_t>(train.cols()));
  for (Index i = 0; i < train.cols(); ++i) all[static_cast<std::size_t>(i)] = i;
  out.memorised_pct = out.pct_over(all);
  return out;
}

enum class ManifoldKind { none, circles, torus, reference_cloud };

struct Manifold {
  ManifoldKind kind = ManifoldKind::none;
  /// Concentric circles about the origin (one radius for a single circle).
  std::vector<double> radii;
  /// Intrinsic torus dimension; ambient is 2 * torus_dim.
  Index torus_dim = 0;
  Matrix reference;

  static Manifold circle(double r) { return {ManifoldKind::circles, {r}, 0, {}}; }
  static Manifold circles(std::vector<double> r) { return {ManifoldKind::circles, std::move(r), 0, {}}; }
  static Manifold torus(Index d) { return {ManifoldKind::torus, {}, d, {}}; }
  static Manifold cloud(Matrix ref) { return {ManifoldKind::reference_cloud, {}, 0, std::move(ref)}; }
};

struct DtmStats {
  Vector values;
  double mean = 0.0;
  double median = 0.0;
};

inline double median(Vector v) {
  if (v.size() == 0) throw ConfigError("median of an empty set");
  std::sort(v.data(), v.data() + v.size());
  const Index n = v.size();
  return n % 2 ? v(n / 2) : 0.5 * (v(n / 2 - 1) + v(n / 2));
}

inline DtmStats distance_to_manifold(const Matrix& samples, const Manifold& m) {
  if (samples.cols() < 1) throw ConfigError("distance_to_manifold needs at least one sample");
  DtmStats out;
  out.values.resize(samples.cols());
  switch (m.kind) {
    case ManifoldKind::none: throw ConfigError("no manifold descriptor");
    case ManifoldKind::circles: {
      if (samples.rows() != 2) throw ConfigError("circle manifold needs 2-D samples");
      if (m.radii.empty()) throw ConfigError("circle manifold needs a radius");
      for (double r : m.radii)
        if (!(r > 0)) throw ConfigError("circle radius must be > 0");
      for (Index j = 0; j < samples.cols(); ++j) {
        const double norm = samples.col(j).norm();
        double best = std::numeric_limits<double>::infinity();
        for (double r : m.radii) best = std::min(best, std::abs(norm - r));
        out.values(j) = best;
      }
      break;
    }
    case ManifoldKind::torus: {
      if (m.torus_dim < 1 || samples.rows() != 2 * m.torus_dim)
        throw ConfigError("torus manifold of dimension " + std::to_string(m.torus_dim) + " needs " +
                          std::to_string(2 * m.torus_dim) + "-D samples");
      for (Index j = 0; j < samples.cols(); ++j) {
        double s = 0.0;
        for (Index c = 0; c < m.torus_dim; ++c) {
          const double e = std::hypot(samples(2 * c, j), samples(2 * c + 1, j)) - 1.0;
          s += e * e;
        }
        out.values(j) = std::sqrt(s);
      }
      break;
    }
    case ManifoldKind::reference_cloud: {
      if (m.reference.cols() < 1 || m.reference.rows() != samples.rows())
        throw ConfigError("reference cloud dimension does not match samples");
      const KnnIndex index(m.reference);
      for (Index j = 0; j < samples.cols(); ++j) out.values(j) = std::sqrt(index.nearest(samples.col(j)).dist2);
      break;
    }
  }
  out.mean = out.values.mean();
  out.median = median(out.values);
  return out;
}

/// Mean distance from each test point to its nearest sample.
inline double coverage(const Matrix& samples, const Matrix& test) {
  if (samples.cols() < 1 || test.cols() < 1) throw ConfigError("coverage needs non-empty samples and test points");
  if (samples.rows() != test.rows()) throw ConfigError("sample and test dimensions differ");
  const KnnIndex index(samples);
  double sum = 0.0;
  for (Index j = 0; j < test.cols(); ++j) sum += std::sqrt(index.nearest(test.col(j)).dist2);
  return sum / static_cast<double>(test.cols());
}

namespace detail {

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace detail

/// log (1/N) sum_i N(y; x_i, s2 I), per column of y.
inline Vector gmm_logdensity_isotropic(const Matrix& y, const Matrix& centers, double s2) {
  if (!(s2 > 0)) throw ConfigError("isotropic mixture variance must be > 0");
  if (centers.cols() < 1 || y.rows() != centers.rows()) throw ConfigError("mixture centers do not match points");
  const double d = static_cast<double>(y.rows());
  const double norm = -0.5 * d * (detail::kLog2Pi + std::log(s2)) - std::log(static_cast<double>(centers.cols()));
  Vector out(y.cols());
  Vector terms(centers.cols());
  for (Index j = 0; j < y.cols(); ++j) {
    terms = -0.5 * (centers.colwise() - y.col(j)).colwise().squaredNorm().transpose() / s2;
    out(j) = norm + detail::log_sum_exp(terms);
  }
  return out;
}

/// log (1/N) sum_i N(y; x_i, Gamma_i + floor2 I) with each Gamma_i given by its
/// low-rank factorization (plus the field's own isotropic floor, if any).
/// Log-determinants come from the eigenvalues: the covariance is
/// Q diag(lambda + floor2) Q^T + a (I - Q Q^T), a = sigma_floor^2 + floor2.
inline Vector gmm_logdensity(const Matrix& y, const Matrix& centers, const GammaField& gamma, double floor2) {
  if (centers.cols() != gamma.n || centers.rows() != gamma.dim) throw ConfigError("gamma field does not match mixture centers");
  if (y.rows() != centers.rows()) throw ConfigError("points do not match mixture dimension");
  if (floor2 < 0) throw ConfigError("mixture floor must be >= 0");
  const Index d = gamma.dim, r = gamma.rank, n = gamma.n;
  const double a = gamma.sigma_floor * gamma.sigma_floor + floor2;
  if (r < d && !(a > 0)) throw ConfigError("rank-deficient mixture components need a positive floor");
  std::vector<double> logdet(static_cast<std::size_t>(n));
  Matrix inv_eig(r, n);
  for (Index i = 0; i < n; ++i) {
    double ld = static_cast<double>(d - r) * (r < d ? std::log(a) : 0.0);
    for (Index k = 0; k < r; ++k) {
      const double lam = std::max(gamma.eigenvalues(k, i), 0.0) + floor2;
      if (!(lam > 0)) throw ConfigError("rank-deficient mixture components need a positive floor");
      ld += std::log(lam);
      inv_eig(k, i) = 1.0 / lam;
    }
    logdet[static_cast<std::size_t>(i)] = ld;
  }
  const double base = -0.5 * static_cast<double>(d) * detail::kLog2Pi - std::log(static_cast<double>(n));
  Vector out(y.cols());
  Vector terms(n);
  for (Index j = 0; j < y.cols(); ++j) {
    for (Index i = 0; i < n; ++i) {
      const Vector res = y.col(j) - centers.col(i);
      const auto q = gamma.basis(i);
      const Vector p = q.transpose() * res;
      double maha = p.cwiseAbs2().dot(inv_eig.col(i));
      if (r < d) maha += (res - q * p).squaredNorm() / a;
      terms(i) = -0.5 * (maha + logdet[static_cast<std::size_t>(i)]);
    }
    out(j) = base + detail::log_sum_exp(terms);
  }
  return out;
}

/// Default mixture floor: 1e-3 times the mean nearest-neighbour distance.
inline double default_gmm_floor(const Matrix& train) {
  if (train.cols() < 2) throw ConfigError("need at least 2 points for a nearest-neighbour scale");
  const KnnIndex index(train);
  double sum = 0.0;
  for (Index i = 0; i < train.cols(); ++i) sum += std::sqrt(index.query(train.col(i), 1, i)[0].dist2);
  return 1e-3 * sum / static_cast<double>(train.cols());
}

struct MetricsReport {
  std::int64_t epoch = 0;
  double cutoff = kDefaultMemorisationCutoff;
  Index n_samples = 0;
  std::uint64_t sample_seed = 0;
  double memorised_pct = 0.0;
  std::optional<double> nll_mean;
  std::optional<double> dtm_mean;
  std::optional<double> dtm_median;
  std::optional<double> coverage;
  std::int64_t nfe = 0;

  nlohmann::ordered_json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["cutoff"] = cutoff;
    j["n_samples"] = n_samples;
    j["sample_seed"] = sample_seed;
    j["memorised_pct"] = memorised_pct;
    j["nll_mean"] = opt(nll_mean);
    j["dtm_mean"] = opt(dtm_mean);
    j["dtm_median"] = opt(dtm_median);
    j["coverage"] = opt(coverage);
    j["nfe"] = nfe;
    return j;
  }

  static MetricsReport from_json(const nlohmann::ordered_json& j) {
    auto opt = [&](const char* key) -> std::optional<double> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      return j.at(key).get<double>();
    };
    try {
      MetricsReport r;
      r.epoch = j.at("epoch").get<std::int64_t>();
      r.cutoff = j.at("cutoff").get<double>();
      r.n_samples = j.at("n_samples").get<Index>();
      r.sample_seed = j.at("sample_seed").get<std::uint64_t>();
      r.memorised_pct = j.at("memorised_pct").get<double>();
      r.nll_mean = opt("nll_mean");
      r.dtm_mean = opt("dtm_mean");
      r.dtm_median = opt("dtm_median");
      r.coverage = opt("coverage");
      r.nfe = j.at("nfe").get<std::int64_t>();
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed metrics report: ") + e.what());
    }
  }

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct EvalConfig {
  double cutoff = kDefaultMemorisationCutoff;
  /// 0 selects max(10 * N_train, 1000).
  Index n_samples = 0;
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
  bool compute_nll = true;
  unsigned threads = 1;

  Index resolved_samples(Index n_train) const { return n_samples > 0 ? n_samples : std::max<Index>(10 * n_train, 1000); }
};

struct Evaluation {
  MetricsReport report;
  Matrix samples;
  MemorisationResult memorisation;
};

/// Samples the model, then scores the samples against train/test data.
/// NLL and coverage are skipped when `test` is empty; DtM when no manifold.
inline Evaluation evaluate(const VelocityModel& model, const Matrix& train, const Matrix& test, const Manifold& manifold,
                           const SolverConfig& solver, const EvalConfig& cfg) {
  if (train.rows() != model.dim()) throw ConfigError("model dimension does not match the data");
  Evaluation out;
  auto& r = out.report;
  r.epoch = cfg.epoch;
  r.cutoff = cfg.cutoff;
  r.n_samples = cfg.resolved_samples(train.cols());
  r.sample_seed = cfg.seed;
  auto s = sample(model, r.n_samples, solver, cfg.seed);
  out.samples = std::move(s.cloud.points);
  r.nfe = s.stats.nfe;
  out.memorisation = memorisation(out.samples, train, cfg.cutoff, cfg.threads);
  r.memorised_pct = out.memorisation.memorised_pct;
  if (manifold.kind != ManifoldKind::none) {
    const auto dtm = distance_to_manifold(out.samples, manifold);
    r.dtm_mean = dtm.mean;
    r.dtm_median = dtm.median;
  }
  if (test.cols() > 0) {
    r.coverage = coverage(out.samples, test);
    if (cfg.compute_nll) r.nll_mean = log_likelihood(model, test, solver).nll.mean();
  }
  return out;
}

}  // namespace cdcflow
