#include "cdcflow/dataio.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace cdcflow;

namespace {
std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("cdcflow_dataio_" + name)).string();
}
}  // namespace

TEST(Generate, CircleIsEquidistantFromAngleZero) {
  DatasetSpec s;
  s.kind = DatasetKind::circle;
  s.n_train = 8;
  const auto c = generate(s);
  ASSERT_EQ(c.size(), 8);
  EXPECT_NEAR(c.points(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(c.points(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(c.points(0, 1), 0.70711, 1e-5);
  EXPECT_NEAR(c.points(1, 1), 0.70711, 1e-5);
  for (Index i = 0; i < c.size(); ++i) EXPECT_LE(std::abs(c.points.col(i).norm() - 1.0), 1e-12);
}

TEST(Generate, CircleTestPointsLieOnTheCircle) {
  DatasetSpec s;
  s.n_train = 8;
  s.n_test = 20;
  s.radii = {2.5};
  const auto c = generate(s);
  EXPECT_EQ(c.indices(Split::test).size(), 20u);
  for (Index i = 0; i < c.size(); ++i) EXPECT_LE(std::abs(c.points.col(i).norm() - 2.5), 1e-12);
}

TEST(Generate, TwoCirclesSplitsEvenlyAndEquidistant) {
  DatasetSpec s;
  s.kind = DatasetKind::two_circles;
  s.n_train = 16;
  s.radii = {1.0, 3.0};
  const auto c = generate(s);
  int small = 0, large = 0;
  for (Index i = 0; i < c.size(); ++i) {
    const double r = c.points.col(i).norm();
    if (std::abs(r - 1.0) < 1e-12) ++small;
    if (std::abs(r - 3.0) < 1e-12) ++large;
  }
  EXPECT_EQ(small, 8);
  EXPECT_EQ(large, 8);
  // Neighbouring train points on each circle are 45 degrees apart.
  EXPECT_NEAR((c.points.col(0) - c.points.col(1)).norm(), 2 * std::sin(std::numbers::pi / 8), 1e-12);
  EXPECT_NEAR((c.points.col(8) - c.points.col(9)).norm(), 6 * std::sin(std::numbers::pi / 8), 1e-12);
}

TEST(Generate, TorusPairsHaveUnitNorm) {
  DatasetSpec s;
  s.kind = DatasetKind::torus;
  s.dim = 3;
  s.n_train = 50;
  const auto c = generate(s);
  ASSERT_EQ(c.dim(), 6);
  for (Index i = 0; i < c.size(); ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(c.points.col(i).segment(2 * j, 2).norm(), 1.0, 1e-12);
}

TEST(Generate, DeterministicAndSeedSensitive) {
  DatasetSpec s;
  s.kind = DatasetKind::torus;
  s.dim = 2;
  s.n_train = 10;
  s.noise_sigma = 0.02;
  EXPECT_EQ(generate(s).points, generate(s).points);
  auto t = s;
  t.seed = 1;
  EXPECT_NE(generate(s).points, generate(t).points);
}

TEST(Generate, NoisePerturbsRadius) {
  DatasetSpec s;
  s.n_train = 100;
  s.noise_sigma = 0.02;
  const auto c = generate(s);
  double dev = 0;
  for (Index i = 0; i < c.size(); ++i) dev += std::pow(c.points.col(i).norm() - 1.0, 2);
  EXPECT_NEAR(std::sqrt(dev / 100), 0.02, 0.01);
}

TEST(Generate, RejectsBadSpecs) {
  DatasetSpec s;
  s.radii = {-1.0};
  EXPECT_THROW(generate(s), ConfigError);
  EXPECT_THROW(dataset_kind_from_string("sphere"), ConfigError);
}

TEST(Csv, RoundTripWithinTolerance) {
  DatasetSpec s;
  s.n_train = 8;
  s.n_test = 3;
  const auto c = generate(s);
  const auto path = temp_path("roundtrip.csv");
  save_csv(c, path);
  const auto d = load_csv(path);
  std::remove(path.c_str());
  ASSERT_EQ(d.size(), c.size());
  EXPECT_LE((d.points - c.points).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(d.split, c.split);
}

TEST(Csv, SplitColumnHonoured) {
  std::istringstream in("x,y,split\n1,2,train\n3,4,test\n");
  const auto c = parse_csv(in);
  EXPECT_EQ(c.dim(), 2);
  EXPECT_EQ(c.size(), 2);
  EXPECT_EQ(c.split[1], Split::test);
  EXPECT_DOUBLE_EQ(c.points(1, 1), 4.0);
}

TEST(Csv, RaggedRowNamesLine) {
  std::istringstream in("x,y\n1,2\n3\n");
  try {
    parse_csv(in);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Csv, NonNumericAndEmptyRejected) {
  std::istringstream bad("x\nabc\n");
  EXPECT_THROW(parse_csv(bad), ParseError);
  std::istringstream empty("");
  EXPECT_THROW(parse_csv(empty), ParseError);
}

TEST(Split, CountsAndDeterminism) {
  DatasetSpec s;
  s.kind = DatasetKind::gaussian;
  s.dim = 2;
  s.n_train = 10;
  const auto c = generate(s);
  const auto a = split(c, 4, 9);
  EXPECT_EQ(a.indices(Split::train).size(), 4u);
  EXPECT_EQ(a.indices(Split::test).size(), 6u);
  EXPECT_EQ(a.split, split(c, 4, 9).split);
  EXPECT_THROW(split(c, 11, 9), ConfigError);
}

TEST(Split, FullTrainWarns) {
  DatasetSpec s;
  s.kind = DatasetKind::gaussian;
  s.n_train = 5;
  Warnings w;
  const auto a = split(generate(s), 5, 0, &w);
  EXPECT_EQ(a.indices(Split::test).size(), 0u);
  ASSERT_EQ(w.size(), 1u);
}
