#pragma once

#include "cdcflow/core/error.hpp"
#include "cdcflow/core/types.hpp"

#include <limits>
#include <vector>

namespace cdcflow {

/// Exact minimum-cost perfect matching on a square cost matrix (Hungarian
/// method with potentials, O(n^3)). Returns assignment[row] = column.
inline std::vector<Index> solve_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw ConfigError("assignment needs a square cost matrix");
  if (n == 0) return {};
  if (!cost.allFinite()) throw ConfigError("assignment costs must be finite");
  constexpr double inf = std::numeric_limits<double>::infinity();

  // 1-based arrays; column 0 is a virtual start column.
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index row = 1; row <= n; ++row) {
    match[0] = row;
    Index col0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(col0)] = 1;
      const Index row0 = match[static_cast<std::size_t>(col0)];
      double delta = inf;
      Index col1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) continue;
        const double cur = cost(row0 - 1, j - 1) - u[static_cast<std::size_t>(row0)] - v[sj];
        if (cur < minv[sj]) {
          minv[sj] = cur;
          way[sj] = col0;
        }
        if (minv[sj] < delta) {
          delta = minv[sj];
          col1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) {
          u[static_cast<std::size_t>(match[sj])] += delta;
          v[sj] -= delta;
        } else {
          minv[sj] -= delta;
        }
      }
      col0 = col1;
    } while (match[static_cast<std::size_t>(col0)] != 0);
    do {
      const Index col1 = way[static_cast<std::size_t>(col0)];
      match[static_cast<std::size_t>(col0)] = match[static_cast<std::size_t>(col1)];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<Index> assignment(static_cast<std::size_t>(n));
  for (Index j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assignment;
}

}  // namespace cdcflow
