#include "cdcflow/core/random.hpp"
#include "cdcflow/dataio.hpp"
#include "cdcflow/geometry.hpp"
#include "cdcflow/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace cdcflow;

namespace {
Matrix row(std::initializer_list<double> xs) {
  Matrix m(1, static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) m(0, i++) = x;
  return m;
}
Matrix pt2(double a, double b) {
  Matrix m(2, 1);
  m << a, b;
  return m;
}
}  // namespace

TEST(Memorisation, RatioExamples) {
  const Matrix train = row({0, 1});
  const auto a = memorisation(row({0.1}), train, 0.2);
  EXPECT_NEAR(a.ratios(0), 1.0 / 9.0, 1e-15);
  EXPECT_DOUBLE_EQ(a.memorised_pct, 100.0);
  const auto b = memorisation(row({0.4}), train, 0.2);
  EXPECT_NEAR(b.ratios(0), 0.4 / 0.6, 1e-15);
  EXPECT_DOUBLE_EQ(b.memorised_pct, 0.0);
  const auto c = memorisation(train, train, 0.2);
  EXPECT_DOUBLE_EQ(c.memorised_pct, 100.0);
}

TEST(Memorisation, PerPointAggregationSkipsEmptyPoints) {
  // Point 0 gets two samples (one memorised), point 2 one memorised, point 1 none.
  const Matrix train = row({0, 10, 20});
  const auto r = memorisation(row({0.1, 4.0, 19.9}), train, 0.2);
  EXPECT_EQ(r.per_point[0].assigned, 2);
  EXPECT_EQ(r.per_point[1].assigned, 0);
  EXPECT_DOUBLE_EQ(r.memorised_pct, (50.0 + 100.0) / 2.0);
  EXPECT_DOUBLE_EQ(r.pct_over({0}), 50.0);
}

TEST(Memorisation, ScaleInvariant) {
  auto rng = make_stream(1);
  const Matrix train = standard_normal(rng, 2, 20), samples = standard_normal(rng, 2, 300);
  const auto a = memorisation(samples, train, 0.6);
  const auto b = memorisation(7.5 * samples, 7.5 * train, 0.6);
  EXPECT_DOUBLE_EQ(a.memorised_pct, b.memorised_pct);
  EXPECT_LT((a.ratios - b.ratios).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Memorisation, Errors) {
  EXPECT_THROW(memorisation(row({0.1}), row({0}), 0.2), ConfigError);
  EXPECT_THROW(memorisation(Matrix(1, 0), row({0, 1}), 0.2), ConfigError);
}

TEST(Dtm, Examples) {
  EXPECT_DOUBLE_EQ(distance_to_manifold(pt2(2, 0), Manifold::circle(1)).mean, 1.0);
  Matrix t(4, 1);
  t << 1, 0, 0, 1;
  EXPECT_DOUBLE_EQ(distance_to_manifold(t, Manifold::torus(2)).mean, 0.0);
  const Matrix train = row({0, 1, 3});
  EXPECT_DOUBLE_EQ(distance_to_manifold(row({1}), Manifold::cloud(train)).mean, 0.0);
  EXPECT_THROW(distance_to_manifold(t, Manifold::circle(1)), ConfigError);
  EXPECT_DOUBLE_EQ(distance_to_manifold(pt2(0, 2.5), Manifold::circles({1, 3})).mean, 0.5);
}

TEST(Dtm, ZeroExactlyOnCircle) {
  DatasetSpec s;
  s.n_train = 64;
  const auto c = generate(s);
  EXPECT_LE(distance_to_manifold(c.points, Manifold::circle(1)).values.maxCoeff(), 1e-12);
  EXPECT_GT(distance_to_manifold(1.001 * c.points, Manifold::circle(1)).values.minCoeff(), 1e-12);
}

TEST(Coverage, Examples) {
  DatasetSpec s;
  s.n_train = 8;
  const Matrix circle = generate(s).points;
  EXPECT_DOUBLE_EQ(coverage(circle, circle), 0.0);
  EXPECT_NEAR(coverage(pt2(0, 0), circle), 1.0, 1e-15);
  EXPECT_THROW(coverage(Matrix(2, 0), circle), ConfigError);
}

TEST(Coverage, MatchesDoubleLoopAndIsMonotone) {
  auto rng = make_stream(2);
  const Matrix samples = standard_normal(rng, 3, 200), test = standard_normal(rng, 3, 50);
  double want = 0;
  for (Index j = 0; j < test.cols(); ++j) {
    double best = 1e300;
    for (Index i = 0; i < samples.cols(); ++i) best = std::min(best, (samples.col(i) - test.col(j)).norm());
    want += best;
  }
  EXPECT_NEAR(coverage(samples, test), want / 50.0, 1e-12);
  double prev = 1e300;
  for (Index n : {10, 50, 100, 200}) {
    const double c = coverage(samples.leftCols(n), test);
    EXPECT_LE(c, prev);
    prev = c;
  }
}

TEST(Gmm, StandardNormalComponent) {
  const double p = std::exp(gmm_logdensity_isotropic(Matrix::Zero(2, 1), Matrix::Zero(2, 1), 1.0)(0));
  EXPECT_NEAR(p, 1.0 / (2 * std::numbers::pi), 1e-15);
}

TEST(Gmm, TwoSymmetricComponents) {
  const double p = std::exp(gmm_logdensity_isotropic(row({0}), row({-1, 1}), 1.0)(0));
  EXPECT_NEAR(p, std::exp(-0.5) / std::sqrt(2 * std::numbers::pi), 1e-15);
}

TEST(Gmm, LowRankMatchesDenseCovariance) {
  auto rng = make_stream(3);
  const Matrix x = standard_normal(rng, 4, 12);
  GammaConfig cfg;
  cfg.k = 5;
  cfg.k_bw = 3;
  cfg.d_cdc = 2;
  cfg.sigma_min_extra = 0.03;
  const auto f = fit_gamma(x, cfg).field;
  const double floor2 = 0.01;
  const Matrix y = standard_normal(rng, 4, 6);
  const Vector got = gmm_logdensity(y, x, f, floor2);
  for (Index j = 0; j < y.cols(); ++j) {
    double total = 0;
    for (Index i = 0; i < x.cols(); ++i) {
      const Matrix cov = f.dense(i) + floor2 * Matrix::Identity(4, 4);
      const Vector r = y.col(j) - x.col(i);
      const Eigen::LLT<Matrix> llt(cov);
      const double logdet = 2 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      total += std::exp(-0.5 * (r.dot(llt.solve(r)) + logdet + 4 * std::log(2 * std::numbers::pi)));
    }
    EXPECT_NEAR(got(j), std::log(total / 12.0), 1e-10);
  }
}

TEST(Gmm, AboveBestComponentBound) {
  auto rng = make_stream(4);
  const Matrix centers = standard_normal(rng, 2, 9), y = 3 * standard_normal(rng, 2, 40);
  const Vector lp = gmm_logdensity_isotropic(y, centers, 0.3);
  for (Index j = 0; j < y.cols(); ++j) {
    double best = -1e300;
    for (Index i = 0; i < 9; ++i)
      best = std::max(best, gmm_logdensity_isotropic(y.col(j), centers.col(i), 0.3)(0));
    EXPECT_GE(lp(j), best - std::log(9.0) - 1e-12);
  }
}

TEST(Gmm, RankDeficientNeedsFloor) {
  const auto f = zero_gamma(3, 2, 1);
  EXPECT_THROW(gmm_logdensity(Matrix::Zero(2, 1), Matrix::Zero(2, 3), f, 0.0), ConfigError);
  EXPECT_GT(default_gmm_floor(row({0, 1, 3})), 0.0);
  EXPECT_NEAR(default_gmm_floor(row({0, 1, 3})), 1e-3 * (1 + 1 + 2) / 3.0, 1e-15);
}

TEST(Report, JsonRoundTrip) {
  MetricsReport r;
  r.epoch = 400;
  r.memorised_pct = 12.5;
  r.nll_mean = 1.25;
  r.dtm_mean = 0.01;
  r.dtm_median = 0.005;
  r.nfe = 86;
  r.n_samples = 1000;
  const auto j = r.to_json();
  const auto back = MetricsReport::from_json(nlohmann::ordered_json::parse(j.dump()));
  EXPECT_TRUE(back == r);
  EXPECT_EQ(back.to_json().dump(), j.dump());
  EXPECT_FALSE(back.coverage.has_value());
}

TEST(Evaluate, UntrainedModelOnCircle) {
  DatasetSpec s;
  s.n_train = 8;
  s.n_test = 50;
  const auto c = generate(s);
  const auto m = VelocityModel::create({2, 1, 8}, 0);
  EvalConfig ec;
  ec.seed = 5;
  const auto ev = evaluate(m, c.train_points(), c.test_points(), Manifold::circle(1), SolverConfig{}, ec);
  EXPECT_EQ(ev.report.n_samples, 1000);
  EXPECT_LT(ev.report.memorised_pct, 5.0);
  // NLL of the test set equals the Gaussian cross-entropy.
  const double want = -standard_normal_logpdf(c.test_points()).mean();
  ASSERT_TRUE(ev.report.nll_mean);
  EXPECT_NEAR(*ev.report.nll_mean, want, 1e-9);
  EXPECT_TRUE(ev.report.dtm_median.has_value());
}

TEST(Evaluate, SeedsAgreeWithinMonteCarloBand) {
  DatasetSpec s;
  s.n_train = 8;
  const auto c = generate(s);
  // A field that contracts samples toward the data so memorisation is non-trivial.
  auto m = VelocityModel::create({2, 0, 0}, 0, false);
  m.layers()[0].weight << -2.0, 0.0, 0.0, 0.0, -2.0, 0.0;
  m.layers()[0].bias << 0, 0;
  EvalConfig a, b;
  a.n_samples = b.n_samples = 10000;
  a.seed = 1;
  b.seed = 2;
  a.compute_nll = b.compute_nll = false;
  const auto ea = evaluate(m, c.train_points(), Matrix(2, 0), Manifold{}, SolverConfig{}, a);
  const auto eb = evaluate(m, c.train_points(), Matrix(2, 0), Manifold{}, SolverConfig{}, b);
  EXPECT_NEAR(ea.report.memorised_pct, eb.report.memorised_pct, 2.0);
}
