#include "cdcflow/core/random.hpp"
#include "cdcflow/knn.hpp"

#include <gtest/gtest.h>

using namespace cdcflow;

class KnnAgainstBruteForce : public ::testing::TestWithParam<Index> {};

TEST_P(KnnAgainstBruteForce, MatchesOracle) {
  const Index d = GetParam();
  auto rng = make_stream(100 + static_cast<std::uint64_t>(d));
  const Matrix pts = standard_normal(rng, d, 400);
  const KnnIndex index(pts);
  const Matrix queries = standard_normal(rng, d, 30);
  for (Index q = 0; q < queries.cols(); ++q) {
    const auto got = index.query(queries.col(q), 7);
    const auto want = brute_force_knn(pts, queries.col(q), 7);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t j = 0; j < got.size(); ++j) {
      EXPECT_EQ(got[j].index, want[j].index);
      EXPECT_DOUBLE_EQ(got[j].dist2, want[j].dist2);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Dims, KnnAgainstBruteForce, ::testing::Values(1, 2, 3, 6, 20));

TEST(Knn, ExcludesSelfAndBreaksTiesByIndex) {
  Matrix pts(1, 4);
  pts << 0, 1, -1, 2;
  const KnnIndex index(pts);
  const auto nb = index.query(pts.col(0), 2, Index{0});
  ASSERT_EQ(nb.size(), 2u);
  EXPECT_EQ(nb[0].index, 1);
  EXPECT_EQ(nb[1].index, 2);
}

TEST(Knn, ClampsKToAvailablePoints) {
  Matrix pts(2, 3);
  pts.setRandom();
  const KnnIndex index(pts);
  EXPECT_EQ(index.query(pts.col(0), 10, Index{0}).size(), 2u);
}
