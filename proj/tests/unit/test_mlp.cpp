#include "cdcflow/core/random.hpp"
#include "cdcflow/mlp.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace cdcflow;

namespace {

VelocityModel random_net(Index d, Index layers, Index width, std::uint64_t seed) {
  return VelocityModel::create({d, layers, width}, seed, /*zero_output=*/false);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Central-difference gradient oracle, h = 1e-4.
void check_gradient(VelocityModel m, const Matrix& x, const Vector& t, const Matrix& target) {
  ParamVector g;
  m.loss_and_gradient(x, t, target, &g);
  const ParamVector p0 = m.parameters();
  const double h = 1e-4;
  double worst = 0;
  for (Index k = 0; k < p0.size(); ++k) {
    ParamVector p = p0;
    p(k) += h;
    m.set_parameters(p);
    const double up = m.loss_and_gradient(x, t, target, nullptr);
    p(k) -= 2 * h;
    m.set_parameters(p);
    const double down = m.loss_and_gradient(x, t, target, nullptr);
    const double fd = (up - down) / (2 * h);
    // Absolute floor for entries whose true gradient is ~0.
    const double err = std::abs(fd - g(k)) <= 1e-9 ? 0.0 : rel_err(fd, g(k));
    worst = std::max(worst, err);
  }
  m.set_parameters(p0);
  EXPECT_LE(worst, 1e-5);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("cdcflow_mlp_" + name)).string();
}

}  // namespace

TEST(Mlp, ZeroOutputLayerGivesZeroField) {
  const auto m = VelocityModel::create({3, 2, 16}, 1);
  auto rng = make_stream(2);
  const Matrix x = standard_normal(rng, 3, 10);
  EXPECT_EQ(m.forward(x, 0.3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, DefaultArchitectureShape) {
  const auto m = VelocityModel::create({2, 4, 512}, 0);
  EXPECT_EQ(m.layers().size(), 5u);
  EXPECT_EQ(m.layers()[0].weight.cols(), 3);
  EXPECT_EQ(m.layers()[4].weight.rows(), 2);
  EXPECT_EQ(m.parameter_count(), 3 * 512 + 512 + 3 * (512 * 512 + 512) + 512 * 2 + 2);
}

TEST(Mlp, DeterministicInSeed) {
  const auto a = random_net(2, 2, 8, 5), b = random_net(2, 2, 8, 5), c = random_net(2, 2, 8, 6);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  Matrix x(2, 1);
  x << 0.2, -0.4;
  EXPECT_EQ(a.forward(x, 0.5), b.forward(x, 0.5));
}

TEST(Mlp, DimensionMismatchThrows) {
  const auto m = random_net(2, 1, 4, 0);
  EXPECT_THROW(m.forward(Matrix(Matrix::Zero(3, 2)), 0.1), ConfigError);
  EXPECT_THROW(m.forward(Matrix::Zero(2, 2), Vector::Zero(3)), ConfigError);
}

TEST(Mlp, SwishHiddenLayer) {
  // One hidden unit: u = w2 * swish(w1 . [x; t] + b1) + b2.
  auto m = VelocityModel::create({1, 1, 1}, 0, false);
  auto& l = m.layers();
  l[0].weight << 0.5, -1.0;
  l[0].bias << 0.25;
  l[1].weight << 2.0;
  l[1].bias << -0.1;
  const double z = 0.5 * 0.8 - 1.0 * 0.3 + 0.25;
  const double want = 2.0 * z / (1.0 + std::exp(-z)) - 0.1;
  EXPECT_NEAR(m.forward(Vector(Vector::Constant(1, 0.8)), 0.3)(0), want, 1e-15);
}

TEST(Mlp, JvpMatchesFiniteDifference) {
  const auto m = random_net(3, 3, 16, 7);
  auto rng = make_stream(8);
  const Matrix x = standard_normal(rng, 3, 5);
  const Matrix dx = standard_normal(rng, 3, 5);
  const Vector t = Vector::Constant(5, 0.4);
  const double h = 1e-5;
  const Matrix fd = (m.forward(x + h * dx, t) - m.forward(x - h * dx, t)) / (2 * h);
  const Matrix jvp = m.jvp(x, t, dx);
  EXPECT_LE((fd - jvp).norm() / jvp.norm(), 1e-5);
}

TEST(Mlp, DivergenceIsJacobianTrace) {
  const auto m = random_net(4, 2, 12, 9);
  auto rng = make_stream(10);
  const Matrix x = standard_normal(rng, 4, 6);
  const Vector t = Vector::LinSpaced(6, 0.0, 1.0);
  const auto vd = m.velocity_divergence(x, t);
  EXPECT_LT((vd.velocity - m.forward(x, t)).norm(), 1e-14);
  for (Index b = 0; b < 6; ++b) {
    double trace = 0;
    for (Index k = 0; k < 4; ++k) {
      Matrix e = Matrix::Zero(4, 1);
      e(k, 0) = 1;
      trace += m.jvp(x.col(b), Vector::Constant(1, t(b)), e)(k, 0);
    }
    EXPECT_NEAR(vd.divergence(b), trace, 1e-12);
  }
}

TEST(Loss, ZeroNetworkFmPair) {
  const auto m = VelocityModel::create({2, 1, 4}, 0);
  Matrix x(2, 1), target(2, 1);
  x << 1.5, 0.5;
  target << 1, -1;
  ParamVector g;
  EXPECT_DOUBLE_EQ(m.loss_and_gradient(x, Vector::Constant(1, 0.5), target, &g), 2.0);
}

TEST(Loss, PerfectFitHasZeroLossAndGradient) {
  const auto m = random_net(2, 2, 8, 3);
  auto rng = make_stream(4);
  const Matrix x = standard_normal(rng, 2, 7);
  const Vector t = Vector::Constant(7, 0.2);
  ParamVector g;
  EXPECT_EQ(m.loss_and_gradient(x, t, m.forward(x, t), &g), 0.0);
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Loss, EmptyBatchThrows) {
  const auto m = random_net(2, 1, 4, 0);
  EXPECT_THROW(m.loss_and_gradient(Matrix(2, 0), Vector(0), Matrix(2, 0), nullptr), ConfigError);
}

TEST(Gradient, ThreeParameterToyNet) {
  const auto m = random_net(1, 0, 0, 11);
  ASSERT_EQ(m.parameter_count(), 3);
  auto rng = make_stream(12);
  check_gradient(m, standard_normal(rng, 1, 5), Vector::LinSpaced(5, 0.1, 0.9), standard_normal(rng, 1, 5));
}

TEST(Gradient, RandomSmallNets) {
  auto rng = make_stream(13);
  for (auto [d, layers, width] : {std::tuple<Index, Index, Index>{1, 1, 5}, {2, 2, 6}, {3, 3, 4}, {2, 4, 3}}) {
    const auto m = random_net(d, layers, width, static_cast<std::uint64_t>(d * 10 + layers));
    check_gradient(m, standard_normal(rng, d, 4), Vector::LinSpaced(4, 0.0, 1.0), standard_normal(rng, d, 4));
  }
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  const auto m = random_net(2, 2, 8, 21);
  const auto path = temp_path("ck.bin");
  save_checkpoint(m, path, 17);
  const auto ck = load_checkpoint(path);
  std::remove(path.c_str());
  EXPECT_EQ(ck.epoch, 17);
  auto rng = make_stream(22);
  const Matrix x = standard_normal(rng, 2, 9);
  EXPECT_LE((ck.model.forward(x, 0.7) - m.forward(x, 0.7)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(ck.model == m);
}

TEST(Checkpoint, TruncatedFileRejected) {
  const auto m = random_net(1, 1, 3, 0);
  const auto path = temp_path("trunc.bin");
  save_checkpoint(m, path, 1);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::remove(path.c_str());
}
