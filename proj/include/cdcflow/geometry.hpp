#pragma once

// Local kernel covariance (Gamma) estimation on a training cloud.
//
// Pipeline: kNN graph -> variable-bandwidth Gaussian kernel
//   w(i,j) = exp(-|x_i - x_j|^2 / (eps_i eps_j))
// restricted to each point's k nearest neighbours (self excluded) ->
// row-normalised transition probabilities P_ij -> local mean
// m_i = sum_j P_ij x_j and covariance Gamma_i = sum_j P_ij (x_j - m_i)(x_j - m_i)^T
// -> top-d_cdc eigenpairs -> per-point rescaling so the largest eigenvalue is
// gamma * min(|x_i - pi(x_i)|^2 / 9, c_max^2).
//
// The covariance is never formed in R^d: with D_i = [sqrt(P_ij)(x_j - m_i)]_j
// (d x k) we have Gamma_i = D_i D_i^T, and a Householder QR D_i = Q R
// reduces the eigenproblem to R R^T in the span of the neighbour differences,
// which is at most min(d, k)-dimensional.

#include "cdcflow/core/blob.hpp"
#include "cdcflow/core/error.hpp"
#include "cdcflow/core/linalg.hpp"
#include "cdcflow/core/parallel.hpp"
#include "cdcflow/core/types.hpp"
#include "cdcflow/knn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace cdcflow {

struct GammaConfig {
  /// Neighbours per point in the kernel.
  Index k = 3;
  /// Bandwidth eps_i is the distance to the k_bw-th nearest neighbour. May
  /// exceed k; it is clamped to N-1 when the cloud is too small.
  Index k_bw = 8;
  /// Retained rank of Gamma.
  Index d_cdc = 1;
  /// Global multiplier gamma.
  double gamma_scale = 1.0;
  /// Optional isotropic floor added off the retained subspace.
  double sigma_min_extra = 0.0;

  void validate(Index n_train, Index dim) const {
    if (k < 1 || k_bw < 1 || d_cdc < 1) throw ConfigError("k, k_bw and d_cdc must be >= 1");
    if (n_train <= k)
      throw ConfigError("need more training points (" + std::to_string(n_train) + ") than neighbours k=" + std::to_string(k));
    if (d_cdc > k) throw ConfigError("d_cdc must not exceed k");
    if (d_cdc > dim) throw ConfigError("d_cdc must not exceed the ambient dimension");
    if (!(gamma_scale >= 0) || !std::isfinite(gamma_scale)) throw ConfigError("gamma_scale must be finite and >= 0");
    if (!(sigma_min_extra >= 0) || !std::isfinite(sigma_min_extra)) throw ConfigError("sigma_min_extra must be finite and >= 0");
  }
};

struct KernelGraph {
  Index n = 0;
  Index k = 0;
  /// neighbours(j, i): j-th nearest neighbour of point i (k x N).
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> neighbours;
  /// Squared distances matching `neighbours`.
  Matrix dist2;
  /// eps_i, the distance to the k_bw-th nearest neighbour.
  Vector bandwidth;
  /// Unnormalised kernel values w(i, neighbours(j, i)).
  Matrix kernel;
  /// Row-stochastic transition weights P_i, laid out like `neighbours`.
  Matrix transition;
  /// Effective bandwidth neighbour index after clamping.
  Index k_bw = 0;

  /// Squared distance to the nearest other training point.
  double nearest_dist2(Index i) const { return dist2(0, i); }
};

/// Per-point low-rank Gamma after estimation (and, once rescaled, after
/// multiplication by gamma * c_i).
struct GammaField {
  Index n = 0;
  Index dim = 0;
  Index rank = 0;  // d_cdc
  /// Local means m_i (d x N).
  Matrix means;
  /// Eigenvalues, descending per column (d_cdc x N).
  Matrix eigenvalues;
  /// Eigenvectors; point i owns columns [i*d_cdc, (i+1)*d_cdc) (d x N*d_cdc).
  Matrix eigenvectors;
  /// Rescale factors c_i (1 until rescale_gamma runs).
  Vector rescale;
  double c_max_sq = 0.0;
  double gamma_scale = 1.0;
  double sigma_floor = 0.0;
  bool rescaled = false;

  auto basis(Index i) const { return eigenvectors.middleCols(i * rank, rank); }
  auto basis(Index i) { return eigenvectors.middleCols(i * rank, rank); }

  void check_index(Index i) const {
    if (i < 0 || i >= n) throw ConfigError("gamma index " + std::to_string(i) + " out of range [0, " + std::to_string(n) + ")");
  }

  /// Dense Gamma_i, including the isotropic floor when set.
  Matrix dense(Index i) const {
    check_index(i);
    const auto q = basis(i);
    Matrix g = q * eigenvalues.col(i).asDiagonal() * q.transpose();
    if (sigma_floor > 0) g += sigma_floor * sigma_floor * (Matrix::Identity(dim, dim) - q * q.transpose());
    return g;
  }

  /// Dense Gamma_i^{1/2}.
  Matrix dense_sqrt(Index i) const {
    check_index(i);
    const auto q = basis(i);
    Matrix g = q * eigenvalues.col(i).cwiseMax(0.0).cwiseSqrt().asDiagonal() * q.transpose();
    if (sigma_floor > 0) g += sigma_floor * (Matrix::Identity(dim, dim) - q * q.transpose());
    return g;
  }
};

/// Gamma_i^{1/2} v = Q diag(sqrt(lambda)) Q^T v, plus sigma_floor (v - Q Q^T v)
/// when the floor is enabled.
inline Vector gamma_sqrt_apply(const GammaField& field, Index i, const Eigen::Ref<const Vector>& v) {
  field.check_index(i);
  if (v.size() != field.dim) throw ConfigError("vector dimension does not match gamma field");
  const auto q = field.basis(i);
  const Vector coeff = q.transpose() * v;
  Vector out = q * (field.eigenvalues.col(i).cwiseMax(0.0).cwiseSqrt().cwiseProduct(coeff));
  if (field.sigma_floor > 0) out += field.sigma_floor * (v - q * coeff);
  return out;
}

inline Vector gamma_apply(const GammaField& field, Index i, const Eigen::Ref<const Vector>& v) {
  return gamma_sqrt_apply(field, i, gamma_sqrt_apply(field, i, v));
}

/// An all-zero field (CDC-FM with gamma = 0 reduces to FM).
inline GammaField zero_gamma(Index n, Index dim, Index rank) {
  GammaField f;
  f.n = n;
  f.dim = dim;
  f.rank = rank;
  f.means = Matrix::Zero(dim, n);
  f.eigenvalues = Matrix::Zero(rank, n);
  f.eigenvectors.resize(dim, n * rank);
  for (Index i = 0; i < n; ++i) f.basis(i) = Matrix::Identity(dim, rank);
  f.rescale = Vector::Zero(n);
  f.gamma_scale = 0.0;
  f.rescaled = true;
  return f;
}

inline KernelGraph build_kernel(const Matrix& train, const GammaConfig& cfg, Warnings* warnings = nullptr) {
  const Index n = train.cols();
  cfg.validate(n, train.rows());
  if (!train.allFinite()) throw ConfigError("training points must be finite");

  KernelGraph g;
  g.n = n;
  g.k = cfg.k;
  g.k_bw = std::min(cfg.k_bw, n - 1);
  if (g.k_bw < cfg.k_bw)
    warn(warnings, "k_bw=" + std::to_string(cfg.k_bw) + " exceeds the " + std::to_string(n - 1) +
                       " available neighbours; using k_bw=" + std::to_string(g.k_bw));
  const Index query_k = std::max(cfg.k, g.k_bw);

  g.neighbours.resize(cfg.k, n);
  g.dist2.resize(cfg.k, n);
  g.bandwidth.resize(n);
  const KnnIndex index(train);
  for (Index i = 0; i < n; ++i) {
    const auto nb = index.query(train.col(i), query_k, i);
    for (Index j = 0; j < cfg.k; ++j) {
      g.neighbours(j, i) = nb[static_cast<std::size_t>(j)].index;
      g.dist2(j, i) = nb[static_cast<std::size_t>(j)].dist2;
    }
    g.bandwidth(i) = std::sqrt(nb[static_cast<std::size_t>(g.k_bw - 1)].dist2);
  }

  std::string offenders;
  for (Index i = 0; i < n; ++i) {
    if (g.bandwidth(i) > 0) continue;
    if (offenders.size() > 200) {
      offenders += " ...";
      break;
    }
    offenders += (offenders.empty() ? "" : "; ") + std::to_string(i) + " coincides with";
    for (Index j = 0; j < cfg.k && g.dist2(j, i) == 0; ++j) offenders += " " + std::to_string(g.neighbours(j, i));
  }
  if (!offenders.empty())
    throw ConfigError("duplicate points give a zero kernel bandwidth: " + offenders);

  g.kernel.resize(cfg.k, n);
  g.transition.resize(cfg.k, n);
  for (Index i = 0; i < n; ++i) {
    Vector expo(cfg.k);
    for (Index j = 0; j < cfg.k; ++j) expo(j) = -g.dist2(j, i) / (g.bandwidth(i) * g.bandwidth(g.neighbours(j, i)));
    g.kernel.col(i) = expo.array().exp().matrix();
    // Normalise in log space so rows stay stochastic when every weight underflows.
    const double top = expo.maxCoeff();
    const Vector shifted = (expo.array() - top).exp().matrix();
    g.transition.col(i) = shifted / shifted.sum();
  }
  return g;
}

/// Local means and top-d_cdc eigenpairs of the kernel covariance.
inline GammaField estimate_gamma(const KernelGraph& graph, const Matrix& train, const GammaConfig& cfg,
                                 Warnings* warnings = nullptr, unsigned threads = 1) {
  const Index n = train.cols(), d = train.rows(), k = graph.k;
  if (graph.n != n) throw ConfigError("kernel graph does not match the training cloud");
  cfg.validate(n, d);
  if (k < cfg.d_cdc) throw ConfigError("kernel graph has fewer neighbours than d_cdc");

  GammaField f;
  f.n = n;
  f.dim = d;
  f.rank = cfg.d_cdc;
  f.means.resize(d, n);
  f.eigenvalues.resize(cfg.d_cdc, n);
  f.eigenvectors.resize(d, n * cfg.d_cdc);
  f.rescale = Vector::Ones(n);
  f.gamma_scale = cfg.gamma_scale;
  f.sigma_floor = cfg.sigma_min_extra;

  const Index r = std::min(d, k);
  std::vector<char> deficient(static_cast<std::size_t>(n), 0);

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t ui) {
    const Index i = static_cast<Index>(ui);
    Vector mean = Vector::Zero(d);
    for (Index j = 0; j < k; ++j) mean += graph.transition(j, i) * train.col(graph.neighbours(j, i));
    Matrix diffs(d, k);
    for (Index j = 0; j < k; ++j)
      diffs.col(j) = std::sqrt(graph.transition(j, i)) * (train.col(graph.neighbours(j, i)) - mean);

    const Eigen::HouseholderQR<Matrix> qr(diffs);
    const Matrix upper = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    const Matrix q_thin = qr.householderQ() * Matrix::Identity(d, r);
    const auto eig = linalg::symmetric_eigen(upper * upper.transpose());

    const double top = std::max(eig.values(0), 0.0);
    Index positive = 0;
    for (Index j = 0; j < cfg.d_cdc; ++j) {
      double lambda = eig.values(j);
      if (!(lambda > 1e-12 * top) || top == 0.0) lambda = 0.0;
      positive += lambda > 0 ? 1 : 0;
      f.eigenvalues(j, i) = lambda;
    }
    f.basis(i) = q_thin * eig.vectors.leftCols(cfg.d_cdc);
    f.means.col(i) = mean;
    deficient[ui] = positive < cfg.d_cdc ? 1 : 0;
  });

  const auto n_deficient = std::count(deficient.begin(), deficient.end(), 1);
  if (n_deficient > 0)
    warn(warnings, std::to_string(n_deficient) + " of " + std::to_string(n) + " points have numerical rank below d_cdc=" +
                       std::to_string(cfg.d_cdc) + "; their trailing eigenvalues are zero");
  return f;
}

/// Linear-interpolation percentile (q in [0, 100]) over a copy of values.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// Scales Gamma_i by gamma * c_i with
///   c_i = min(|x_i - pi(x_i)|^2 / 9, c_max^2) / lambda_1^i   (0 when lambda_1^i = 0),
/// pi(x_i) the nearest training neighbour and c_max^2 the 90th percentile of
/// the local constraints |x_i - pi(x_i)|^2 / 9.
inline GammaField rescale_gamma(GammaField field, const KernelGraph& graph, const GammaConfig& cfg) {
  if (field.rescaled) throw ConfigError("gamma field is already rescaled");
  if (graph.n != field.n) throw ConfigError("kernel graph does not match the gamma field");
  std::vector<double> local(static_cast<std::size_t>(field.n));
  for (Index i = 0; i < field.n; ++i) local[static_cast<std::size_t>(i)] = graph.nearest_dist2(i) / 9.0;
  field.c_max_sq = percentile(local, 90.0);
  field.gamma_scale = cfg.gamma_scale;
  for (Index i = 0; i < field.n; ++i) {
    const double lambda1 = field.eigenvalues(0, i);
    const double target = std::min(local[static_cast<std::size_t>(i)], field.c_max_sq);
    field.rescale(i) = lambda1 > 0 ? target / lambda1 : 0.0;
    field.eigenvalues.col(i) *= cfg.gamma_scale * field.rescale(i);
  }
  field.rescaled = true;
  return field;
}

struct GammaFit {
  KernelGraph graph;
  GammaField field;
};

/// build_kernel -> estimate_gamma -> rescale_gamma.
inline GammaFit fit_gamma(const Matrix& train, const GammaConfig& cfg, Warnings* warnings = nullptr, unsigned threads = 1) {
  GammaFit fit;
  fit.graph = build_kernel(train, cfg, warnings);
  fit.field = rescale_gamma(estimate_gamma(fit.graph, train, cfg, warnings, threads), fit.graph, cfg);
  return fit;
}

// ---------------------------------------------------------------------------
// Gamma store

inline constexpr int kGammaStoreVersion = 1;

inline blob::Container to_container(const GammaField& f) {
  blob::Container c;
  c.header = {{"format", "cdcflow.gamma"},
              {"version", kGammaStoreVersion},
              {"N", f.n},
              {"d", f.dim},
              {"d_cdc", f.rank},
              {"gamma", f.gamma_scale},
              {"c_max_sq", f.c_max_sq},
              {"sigma_floor", f.sigma_floor},
              {"rescaled", f.rescaled}};
  auto flat = [](const Matrix& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
  c.blocks.push_back({"means", flat(f.means)});
  c.blocks.push_back({"eigenvalues", flat(f.eigenvalues)});
  c.blocks.push_back({"eigenvectors", flat(f.eigenvectors)});
  c.blocks.push_back({"rescale", std::vector<double>(f.rescale.data(), f.rescale.data() + f.rescale.size())});
  return c;
}

inline void save_gamma(const GammaField& f, const std::string& path) { blob::write_file(to_container(f), path); }

inline GammaField gamma_from_container(const blob::Container& c) {
  blob::expect_format(c, "cdcflow.gamma", kGammaStoreVersion);
  GammaField f;
  try {
    f.n = c.header.at("N").get<Index>();
    f.dim = c.header.at("d").get<Index>();
    f.rank = c.header.at("d_cdc").get<Index>();
    f.gamma_scale = c.header.at("gamma").get<double>();
    f.c_max_sq = c.header.at("c_max_sq").get<double>();
    f.sigma_floor = c.header.at("sigma_floor").get<double>();
    f.rescaled = c.header.at("rescaled").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed gamma header: ") + e.what());
  }
  if (f.n < 1 || f.dim < 1 || f.rank < 1) throw FormatError("gamma header has non-positive sizes");
  auto take = [&](const char* name, Index rows, Index cols) {
    const auto& b = c.block(name);
    if (static_cast<Index>(b.values.size()) != rows * cols)
      throw FormatError(std::string("header/blob size mismatch in block '") + name + "'");
    return Matrix(Eigen::Map<const Matrix>(b.values.data(), rows, cols));
  };
  f.means = take("means", f.dim, f.n);
  f.eigenvalues = take("eigenvalues", f.rank, f.n);
  f.eigenvectors = take("eigenvectors", f.dim, f.n * f.rank);
  f.rescale = take("rescale", f.n, 1);
  return f;
}

inline GammaField load_gamma(const std::string& path) { return gamma_from_container(blob::read_file(path)); }

}  // namespace cdcflow
