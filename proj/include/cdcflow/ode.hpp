#pragma once

// ODE integration of velocity fields over batches (d x B, one sample per
// column): fixed-step Euler/RK4 and adaptive Dormand-Prince 5(4) with a
// shared step size, plus exact log-likelihood through the divergence ODE.

#include "cdcflow/core/error.hpp"
#include "cdcflow/core/random.hpp"
#include "cdcflow/core/types.hpp"
#include "cdcflow/dataio.hpp"
#include "cdcflow/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>

namespace cdcflow {

enum class SolverMethod { euler, rk4, dopri5 };

inline std::string_view to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::euler: return "euler";
    case SolverMethod::rk4: return "rk4";
    case SolverMethod::dopri5: return "dopri5";
  }
  return "?";
}

inline SolverMethod solver_method_from_string(std::string_view s) {
  if (s == "euler") return SolverMethod::euler;
  if (s == "rk4") return SolverMethod::rk4;
  if (s == "dopri5") return SolverMethod::dopri5;
  throw ConfigError("unknown solver method '" + std::string(s) + "'");
}

struct SolverConfig {
  SolverMethod method = SolverMethod::dopri5;
  double atol = 1e-5;
  double rtol = 1e-5;
  std::int64_t max_steps = 100000;
  /// Step count for the fixed-step methods.
  std::int64_t steps = 100;

  void validate() const {
    if (!(atol > 0) || !(rtol > 0)) throw ConfigError("solver tolerances must be > 0");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (steps < 1) throw ConfigError("fixed step count must be >= 1");
  }
};

struct TrajectoryStats {
  std::int64_t nfe = 0;
  std::int64_t accepted = 0;
  std::int64_t rejected = 0;
  double final_time = 0.0;
};

/// f(x, t) -> dx/dt, batch in, batch out.
using Field = std::function<Matrix(const Matrix&, double)>;

struct IntegrationResult {
  Matrix state;
  TrajectoryStats stats;
};

namespace detail {

inline double rms(const Matrix& m) {
  return m.size() == 0 ? 0.0 : std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
}

inline void check_state(const Matrix& x, double t) {
  if (!x.allFinite()) throw NumericalError("non-finite ODE state at t=" + std::to_string(t));
}

class CountingField {
 public:
  CountingField(const Field& f, TrajectoryStats& stats) : f_(f), stats_(stats) {}
  Matrix operator()(const Matrix& x, double t) const {
    ++stats_.nfe;
    Matrix out = f_(x, t);
    if (out.rows() != x.rows() || out.cols() != x.cols()) throw ConfigError("field returned a batch of the wrong shape");
    return out;
  }

 private:
  const Field& f_;
  TrajectoryStats& stats_;
};

inline IntegrationResult integrate_fixed(const Field& field, Matrix x, double t0, double t1, const SolverConfig& cfg) {
  IntegrationResult out;
  CountingField f(field, out.stats);
  const double h = (t1 - t0) / static_cast<double>(cfg.steps);
  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    const double t = t0 + static_cast<double>(s) * h;
    if (cfg.method == SolverMethod::euler) {
      x += h * f(x, t);
    } else {
      const Matrix k1 = f(x, t);
      const Matrix k2 = f(x + 0.5 * h * k1, t + 0.5 * h);
      const Matrix k3 = f(x + 0.5 * h * k2, t + 0.5 * h);
      const Matrix k4 = f(x + h * k3, t + h);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    check_state(x, t + h);
    ++out.stats.accepted;
  }
  out.stats.final_time = t1;
  out.state = std::move(x);
  return out;
}

// Dormand-Prince 5(4) coefficients.
namespace dp {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
inline constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                        a76 = 11.0 / 84;
// 5th minus embedded 4th order weights.
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                        e6 = 22.0 / 525, e7 = -1.0 / 40;
}  // namespace dp

inline Matrix error_scale(const Matrix& a, const Matrix& b, const SolverConfig& cfg) {
  return (cfg.atol + cfg.rtol * a.cwiseAbs().cwiseMax(b.cwiseAbs()).array()).matrix();
}

inline IntegrationResult integrate_dopri5(const Field& field, Matrix x, double t0, double t1, const SolverConfig& cfg) {
  using namespace dp;
  IntegrationResult out;
  CountingField f(field, out.stats);
  const double span = t1 - t0;
  const double dir = span >= 0 ? 1.0 : -1.0;
  const double hmax = std::abs(span);
  constexpr double safe = 0.9, beta = 0.04, facc1 = 5.0, facc2 = 0.1;
  const double expo1 = 0.2 - beta * 0.75;

  Matrix k1 = f(x, t0);

  // Starting step (Hairer, Norsett & Wanner).
  double h;
  {
    const Matrix sk = (cfg.atol + cfg.rtol * x.cwiseAbs().array()).matrix();
    const double d0 = rms(x.cwiseQuotient(sk));
    const double d1 = rms(k1.cwiseQuotient(sk));
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, hmax);
    const Matrix probe = f(x + dir * h0 * k1, t0 + dir * h0);
    const double d2 = rms((probe - k1).cwiseQuotient(sk)) / h0;
    const double dm = std::max(d1, d2);
    // A vanishing field has nothing to resolve: take the whole span at once.
    h = dm <= 1e-15 ? hmax : std::min({100.0 * h0, std::pow(0.01 / dm, 1.0 / 5.0), hmax});
  }

  double t = t0;
  double facold = 1e-4;
  bool last_rejected = false;
  std::int64_t attempts = 0;
  while (dir * (t1 - t) > 0) {
    if (++attempts > cfg.max_steps) throw NumericalError("dopri5 exceeded max_steps=" + std::to_string(cfg.max_steps));
    bool final_step = false;
    if (h >= std::abs(t1 - t) * (1.0 - 1e-12)) {
      h = std::abs(t1 - t);
      final_step = true;
    }
    if (t + dir * h == t) throw NumericalError("dopri5 step size underflow at t=" + std::to_string(t));
    const double s = dir * h;
    const Matrix k2 = f(x + s * (a21 * k1), t + c2 * s);
    const Matrix k3 = f(x + s * (a31 * k1 + a32 * k2), t + c3 * s);
    const Matrix k4 = f(x + s * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * s);
    const Matrix k5 = f(x + s * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * s);
    const Matrix k6 = f(x + s * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t + s);
    Matrix xn = x + s * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    const double tn = final_step ? t1 : t + s;
    const Matrix k7 = f(xn, tn);
    const Matrix err = s * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double en = rms(err.cwiseQuotient(error_scale(x, xn, cfg)));
    if (!std::isfinite(en)) throw NumericalError("non-finite ODE state at t=" + std::to_string(t));

    const double fac11 = std::pow(en, expo1);
    if (en <= 1.0) {
      double fac = fac11 / std::pow(facold, beta);
      fac = std::max(facc2, std::min(facc1, fac / safe));
      double hnew = h / fac;
      facold = std::max(en, 1e-4);
      ++out.stats.accepted;
      x = std::move(xn);
      check_state(x, tn);
      k1 = k7;  // first same as last
      t = tn;
      if (last_rejected) hnew = std::min(hnew, h);
      last_rejected = false;
      h = std::min(hnew, hmax);
    } else {
      ++out.stats.rejected;
      last_rejected = true;
      h = h / std::min(facc1, fac11 / safe);
    }
  }
  out.stats.final_time = t;
  out.state = std::move(x);
  return out;
}

}  // namespace detail

/// Integrates dx/dt = field(x, t) from t0 to t1 (either direction).
inline IntegrationResult integrate(const Field& field, const Matrix& x0, double t0, double t1, const SolverConfig& cfg) {
  cfg.validate();
  if (t0 < 0.0 || t0 > 1.0 || t1 < 0.0 || t1 > 1.0) throw ConfigError("time span must lie in [0,1]");
  detail::check_state(x0, t0);
  if (t0 == t1) return {x0, TrajectoryStats{0, 0, 0, t1}};
  if (cfg.method == SolverMethod::dopri5) return detail::integrate_dopri5(field, x0, t0, t1, cfg);
  return detail::integrate_fixed(field, x0, t0, t1, cfg);
}

inline Field velocity_field(const VelocityModel& model) {
  return [&model](const Matrix& x, double t) { return model.forward(x, t); };
}

/// Velocity plus exact divergence per column.
using DivergenceField = std::function<std::pair<Matrix, Vector>(const Matrix&, double)>;

inline DivergenceField divergence_field(const VelocityModel& model) {
  return [&model](const Matrix& x, double t) {
    auto vd = model.velocity_divergence(x, t);
    return std::make_pair(std::move(vd.velocity), std::move(vd.divergence));
  };
}

/// u(x, t) = a x, divergence a d.
inline DivergenceField linear_field(double a = 1.0) {
  return [a](const Matrix& x, double) {
    return std::make_pair(Matrix(a * x), Vector::Constant(x.cols(), a * static_cast<double>(x.rows())));
  };
}

inline DivergenceField zero_field() {
  return [](const Matrix& x, double) { return std::make_pair(Matrix::Zero(x.rows(), x.cols()).eval(), Vector::Zero(x.cols()).eval()); };
}

inline Field drop_divergence(DivergenceField f) {
  return [f = std::move(f)](const Matrix& x, double t) { return f(x, t).first; };
}

/// Column-wise log density of the base distribution at t = 0.
using LogDensity = std::function<Vector(const Matrix&)>;

inline Vector standard_normal_logpdf(const Matrix& x) {
  const double c = 0.5 * static_cast<double>(x.rows()) * std::log(2.0 * std::numbers::pi);
  return (-0.5 * x.colwise().squaredNorm().array() - c).matrix().transpose();
}

struct LikelihoodResult {
  Vector nll;  // per point
  Matrix base_points;
  TrajectoryStats stats;
};

/// Exact negative log-likelihood of y under the flow, by integrating the
/// state augmented with l(t), dl/dt = div u, from t=1 (l=0) back to t=0;
/// log p1(y) = log mu(x0) + l(0).
inline LikelihoodResult log_likelihood(const DivergenceField& field, const Matrix& y, const SolverConfig& cfg,
                                       const LogDensity& base = standard_normal_logpdf) {
  const Index d = y.rows();
  if (y.cols() == 0) throw ConfigError("log_likelihood needs at least one point");
  Matrix z(d + 1, y.cols());
  z.topRows(d) = y;
  z.row(d).setZero();
  const Field augmented = [&field, d](const Matrix& s, double t) {
    auto [v, div] = field(s.topRows(d), t);
    Matrix out(d + 1, s.cols());
    out.topRows(d) = v;
    out.row(d) = div.transpose();
    return out;
  };
  auto res = integrate(augmented, z, 1.0, 0.0, cfg);
  LikelihoodResult out;
  out.base_points = res.state.topRows(d);
  out.nll = -(base(out.base_points) + res.state.row(d).transpose());
  out.stats = res.stats;
  return out;
}

inline LikelihoodResult log_likelihood(const VelocityModel& model, const Matrix& y, const SolverConfig& cfg,
                                       const LogDensity& base = standard_normal_logpdf) {
  return log_likelihood(divergence_field(model), y, cfg, base);
}

struct SampleResult {
  PointCloud cloud;
  Matrix base_points;
  TrajectoryStats stats;
};

/// Draws x0 ~ N(0, I) from the seeded sample stream and integrates to t=1.
inline SampleResult sample(const Field& field, Index dim, Index n, const SolverConfig& cfg, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  if (dim < 1) throw ConfigError("sample dimension must be >= 1");
  auto rng = make_stream(seed, {stream_tag::sample});
  Matrix x0 = standard_normal(rng, dim, n);
  auto res = integrate(field, x0, 0.0, 1.0, cfg);
  SampleResult out{make_cloud(res.state), std::move(x0), res.stats};
  out.cloud.seed = seed;
  out.cloud.name = "samples";
  return out;
}

inline SampleResult sample(const VelocityModel& model, Index n, const SolverConfig& cfg, std::uint64_t seed) {
  return sample(velocity_field(model), model.dim(), n, cfg, seed);
}

}  // namespace cdcflow
