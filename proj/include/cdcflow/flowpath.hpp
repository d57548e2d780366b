#pragma once

// Conditional Gaussian probability paths and their target velocities.
//
//   fm         x_t = t x1 + ((1-t) + t s) n               v = x1 - (1-s) n
//   cdc        x_t = t x1 + ((1-t) I + t G^{1/2}) n       v = x1 + (G^{1/2} - I) n
//   two_sided  x_t = (1-t) x0 + t x1 + A_t e,  e = G0^{1/2} n,   A_t = (1-t) I + t B
//              v   = x1 - x0 + (B - I) e
//   augmented  z = x1 + G^{1/2} a,  x_t = t z + (1-t) n   v = z - n
//
// with n, a ~ N(0, I), s = sigma_min, G = Gamma(x1), G0 = Gamma(x0) and
// B = G0^{-1/2} (G0^{1/2} G1 G0^{1/2})^{1/2} G0^{-1/2}, the Bures-Wasserstein
// transport map between N(0, G0) and N(0, G1).

#include "cdcflow/assignment.hpp"
#include "cdcflow/core/error.hpp"
#include "cdcflow/core/linalg.hpp"
#include "cdcflow/core/types.hpp"
#include "cdcflow/geometry.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace cdcflow {

enum class FlowKind { fm, cdc, two_sided, augmented };
enum class Pairing { independent, ot_minibatch };

inline std::string_view to_string(FlowKind k) {
  switch (k) {
    case FlowKind::fm: return "fm";
    case FlowKind::cdc: return "cdc";
    case FlowKind::two_sided: return "two_sided";
    case FlowKind::augmented: return "augmented";
  }
  return "?";
}

inline FlowKind flow_kind_from_string(std::string_view s) {
  for (auto k : {FlowKind::fm, FlowKind::cdc, FlowKind::two_sided, FlowKind::augmented})
    if (to_string(k) == s) return k;
  throw ConfigError("unsupported flow kind '" + std::string(s) + "'");
}

inline std::string_view to_string(Pairing p) { return p == Pairing::independent ? "independent" : "ot_minibatch"; }

inline Pairing pairing_from_string(std::string_view s) {
  if (s == "independent") return Pairing::independent;
  if (s == "ot_minibatch") return Pairing::ot_minibatch;
  throw ConfigError("unsupported pairing '" + std::string(s) + "'");
}

struct FlowConfig {
  FlowKind kind = FlowKind::fm;
  double sigma_min = 0.0;
  Pairing pairing = Pairing::independent;

  bool needs_gamma() const { return kind != FlowKind::fm; }
  bool needs_source() const { return kind == FlowKind::two_sided; }

  void validate() const {
    if (!(sigma_min >= 0.0 && sigma_min < 1.0)) throw ConfigError("sigma_min must lie in [0, 1)");
  }
};

/// Gamma at one conditioning point as a low-rank factor Q diag(lambda) Q^T
/// plus an optional isotropic floor on the orthogonal complement.
struct LocalGamma {
  Matrix basis;
  Vector eigenvalues;
  double floor = 0.0;

  static LocalGamma from_field(const GammaField& field, Index i) {
    field.check_index(i);
    return {field.basis(i), field.eigenvalues.col(i), field.sigma_floor};
  }

  /// Full-rank factorisation of a dense symmetric PSD matrix.
  static LocalGamma from_dense(const Matrix& gamma) {
    auto eig = linalg::symmetric_eigen(gamma);
    for (Index j = 0; j < eig.values.size(); ++j) {
      if (eig.values(j) < -linalg::kNegativeEigenTolerance) throw ConfigError("gamma is not positive semidefinite");
      eig.values(j) = std::max(eig.values(j), 0.0);
    }
    return {eig.vectors, eig.values, 0.0};
  }

  Index dim() const { return basis.rows(); }

  Vector sqrt_apply(const Eigen::Ref<const Vector>& v) const {
    const Vector coeff = basis.transpose() * v;
    Vector out = basis * eigenvalues.cwiseMax(0.0).cwiseSqrt().cwiseProduct(coeff);
    if (floor > 0) out += floor * (v - basis * coeff);
    return out;
  }

  Matrix dense() const {
    Matrix g = basis * eigenvalues.asDiagonal() * basis.transpose();
    if (floor > 0) g += floor * floor * (Matrix::Identity(dim(), dim()) - basis * basis.transpose());
    return g;
  }

  Matrix dense_sqrt() const {
    Matrix g = basis * eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal() * basis.transpose();
    if (floor > 0) g += floor * (Matrix::Identity(dim(), dim()) - basis * basis.transpose());
    return g;
  }
};

/// Mean, transport factor and covariance of a Gaussian path at time t.
struct GaussianPathCoefficients {
  double t = 0.0;
  Vector mu_t;
  /// Sigma_t = A_t Sigma_0 A_t^T.
  Matrix A_t;
  /// Endpoint map, A_1 = B.
  Matrix B;
  /// Source covariance Sigma_0 actually used (after any regularisation).
  Matrix sigma_0;
  Matrix sigma_t;
  /// d Sigma_t / dt.
  Matrix sigma_dot_t;
};

inline void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("t=" + std::to_string(t) + " lies outside [0, 1]");
}

/// Isotropic floor applied to a rank-deficient source covariance before the
/// inverse square root: eps = 1e-6 * trace / d.
inline Matrix regularize_source(const Matrix& gamma0) {
  const auto eig = linalg::symmetric_eigen(gamma0);
  const Index d = gamma0.rows();
  if (eig.values(d - 1) < -linalg::kNegativeEigenTolerance) throw ConfigError("gamma0 is not positive semidefinite");
  const double top = std::max(eig.values(0), 0.0);
  if (eig.values(d - 1) > 1e-12 * top && top > 0) return linalg::symmetrize(gamma0);
  const double eps = 1e-6 * gamma0.trace() / static_cast<double>(d);
  return linalg::symmetrize(gamma0) + eps * Matrix::Identity(d, d);
}

/// Displacement interpolant between N(x0, gamma0) and N(x1, gamma1).
inline GaussianPathCoefficients ot_interpolant_coeffs(const Matrix& gamma0, const Matrix& gamma1, double t,
                                                      const Vector& x0 = Vector(), const Vector& x1 = Vector()) {
  check_time(t);
  const Index d = gamma0.rows();
  if (gamma0.cols() != d || gamma1.rows() != d || gamma1.cols() != d) throw ConfigError("gamma0/gamma1 shape mismatch");
  // Validates PSD-ness of gamma1 as a side effect.
  (void)linalg::psd_sqrt(gamma1);

  GaussianPathCoefficients c;
  c.t = t;
  const Matrix I = Matrix::Identity(d, d);
  if (gamma0.trace() <= 0.0) {
    // A zero source covariance carries no randomness; any B gives Sigma_t = 0.
    if (gamma0.cwiseAbs().maxCoeff() > 0) throw ConfigError("gamma0 is not positive semidefinite");
    c.sigma_0 = Matrix::Zero(d, d);
    c.B = I;
  } else {
    c.sigma_0 = regularize_source(gamma0);
    const Matrix root0 = linalg::psd_sqrt(c.sigma_0);
    const Matrix inv_root0 = linalg::spd_inv_sqrt(c.sigma_0);
    const Matrix middle = linalg::psd_sqrt(linalg::symmetrize(root0 * gamma1 * root0));
    c.B = linalg::symmetrize(inv_root0 * middle * inv_root0);
  }
  c.A_t = (1.0 - t) * I + t * c.B;
  c.sigma_t = c.A_t * c.sigma_0 * c.A_t.transpose();
  const Matrix a_dot = c.B - I;
  c.sigma_dot_t = a_dot * c.sigma_0 * c.A_t.transpose() + c.A_t * c.sigma_0 * a_dot.transpose();
  if (x0.size() == d && x1.size() == d) c.mu_t = (1.0 - t) * x0 + t * x1;
  else c.mu_t = Vector::Zero(d);
  return c;
}

/// CDC path from N(0, I): Sigma_t = [(1-t) I + t G^{1/2}]^2,
/// dSigma_t/dt = 2 [(1-t) I + t G^{1/2}] (G^{1/2} - I).
inline GaussianPathCoefficients cdc_path_coeffs(const LocalGamma& gamma, double t, const Vector& x1 = Vector()) {
  check_time(t);
  const Index d = gamma.dim();
  const Matrix I = Matrix::Identity(d, d);
  GaussianPathCoefficients c;
  c.t = t;
  c.B = gamma.dense_sqrt();
  c.sigma_0 = I;
  c.A_t = (1.0 - t) * I + t * c.B;
  c.sigma_t = c.A_t * c.A_t;
  c.sigma_dot_t = 2.0 * c.A_t * (c.B - I);
  c.mu_t = x1.size() == d ? Vector(t * x1) : Vector(Vector::Zero(d));
  return c;
}

/// Covariance of the path induced by FM on augmented targets z ~ N(x1, Gamma):
/// (1-t)^2 I + t^2 Gamma.
inline Matrix augmented_path_covariance(const Matrix& gamma1, double t) {
  check_time(t);
  const Index d = gamma1.rows();
  return (1.0 - t) * (1.0 - t) * Matrix::Identity(d, d) + t * t * gamma1;
}

struct PathInputs {
  Vector x1;
  /// X_0 ~ N(0, I).
  Vector noise;
  /// Gamma(x1): required for cdc, two_sided and augmented.
  std::optional<LocalGamma> gamma1;
  /// Source endpoint and Gamma(x0): two_sided only.
  std::optional<Vector> x0;
  std::optional<LocalGamma> gamma0;
  /// Second standard normal draw perturbing the target: augmented only.
  std::optional<Vector> aux_noise;
};

struct PathSample {
  Vector x_t;
  Vector velocity;
};

inline PathSample sample_path_point(const FlowConfig& cfg, const PathInputs& in, double t) {
  check_time(t);
  const Index d = in.x1.size();
  if (in.noise.size() != d) throw ConfigError("noise dimension does not match x1");
  auto require_gamma = [&](const std::optional<LocalGamma>& g, const char* which) -> const LocalGamma& {
    if (!g) throw ConfigError(std::string("flow kind '") + std::string(to_string(cfg.kind)) + "' needs " + which);
    if (g->dim() != d) throw ConfigError(std::string(which) + " dimension does not match x1");
    return *g;
  };

  PathSample s;
  switch (cfg.kind) {
    case FlowKind::fm: {
      const double sigma_t = (1.0 - t) + t * cfg.sigma_min;
      s.x_t = t * in.x1 + sigma_t * in.noise;
      s.velocity = in.x1 - (1.0 - cfg.sigma_min) * in.noise;
      break;
    }
    case FlowKind::cdc: {
      const Vector g = require_gamma(in.gamma1, "gamma(x1)").sqrt_apply(in.noise);
      s.x_t = t * in.x1 + ((1.0 - t) * in.noise + t * g);
      s.velocity = in.x1 + (g - in.noise);
      break;
    }
    case FlowKind::two_sided: {
      if (!in.x0 || in.x0->size() != d) throw ConfigError("flow kind 'two_sided' needs a source point x0");
      const auto& g0 = require_gamma(in.gamma0, "gamma(x0)");
      const auto& g1 = require_gamma(in.gamma1, "gamma(x1)");
      const auto c = ot_interpolant_coeffs(g0.dense(), g1.dense(), t);
      const Vector e = linalg::psd_sqrt(c.sigma_0) * in.noise;
      s.x_t = (1.0 - t) * *in.x0 + t * in.x1 + c.A_t * e;
      s.velocity = in.x1 - *in.x0 + (c.B * e - e);
      break;
    }
    case FlowKind::augmented: {
      if (!in.aux_noise || in.aux_noise->size() != d) throw ConfigError("flow kind 'augmented' needs aux_noise");
      const Vector z = in.x1 + require_gamma(in.gamma1, "gamma(x1)").sqrt_apply(*in.aux_noise);
      s.x_t = t * z + (1.0 - t) * in.noise;
      s.velocity = z - in.noise;
      break;
    }
  }
  return s;
}

/// Minibatch OT coupling: perm[i] is the x1 column paired with x0 column i,
/// minimising sum_i |x0_i - x1_perm[i]|^2.
inline std::vector<Index> pair_minibatch(const Matrix& x0, const Matrix& x1) {
  if (x0.cols() != x1.cols() || x0.rows() != x1.rows()) throw ConfigError("minibatches must have equal sizes");
  const Index n = x0.cols();
  Matrix cost(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) cost(i, j) = (x0.col(i) - x1.col(j)).squaredNorm();
  return solve_assignment(cost);
}

}  // namespace cdcflow
