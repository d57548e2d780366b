#pragma once

// Exact k-nearest-neighbour search: a k-d tree for low dimensions and a
// brute-force scan above kMaxTreeDim. Ties in distance are broken by the
// lower point index, so results are fully deterministic.

#include "cdcflow/core/error.hpp"
#include "cdcflow/core/types.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <vector>

namespace cdcflow {

struct Neighbor {
  Index index = -1;
  double dist2 = 0.0;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

class KnnIndex {
 public:
  static constexpr Index kMaxTreeDim = 16;
  static constexpr Index kLeafSize = 12;

  explicit KnnIndex(Matrix points) : points_(std::move(points)) {
    order_.resize(static_cast<std::size_t>(points_.cols()));
    std::iota(order_.begin(), order_.end(), Index{0});
    if (use_tree() && points_.cols() > 0) build(0, points_.cols());
  }

  Index size() const { return points_.cols(); }
  Index dim() const { return points_.rows(); }
  const Matrix& points() const { return points_; }
  bool use_tree() const { return points_.rows() <= kMaxTreeDim; }

  /// The k nearest points to q, ascending by (distance, index). `exclude`
  /// removes one point (typically the query itself) from consideration.
  std::vector<Neighbor> query(const Eigen::Ref<const Vector>& q, Index k, std::optional<Index> exclude = {}) const {
    if (q.size() != dim()) throw ConfigError("query dimension does not match index dimension");
    const Index available = size() - (exclude && *exclude >= 0 && *exclude < size() ? 1 : 0);
    k = std::min(k, available);
    if (k <= 0) return {};
    Heap heap;
    if (use_tree()) {
      search(0, q, k, exclude, heap);
    } else {
      for (Index i = 0; i < size(); ++i) offer(i, q, k, exclude, heap);
    }
    std::vector<Neighbor> out(heap.size());
    for (auto it = out.rbegin(); it != out.rend(); ++it) {
      *it = heap.top();
      heap.pop();
    }
    return out;
  }

  Neighbor nearest(const Eigen::Ref<const Vector>& q, std::optional<Index> exclude = {}) const {
    auto r = query(q, 1, exclude);
    if (r.empty()) throw ConfigError("nearest-neighbour query on an empty index");
    return r.front();
  }

 private:
  using Heap = std::priority_queue<Neighbor>;  // max-heap: worst candidate on top

  struct Node {
    Index begin = 0, end = 0;  // range in order_
    Index split_dim = -1;      // -1 for leaves
    double split_value = 0.0;
    Index left = -1, right = -1;
  };

  Index build(Index begin, Index end) {
    const Index id = static_cast<Index>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    Vector lo = Vector::Constant(dim(), std::numeric_limits<double>::infinity());
    Vector hi = -lo;
    for (Index i = begin; i < end; ++i) {
      const auto p = points_.col(order_[static_cast<std::size_t>(i)]);
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    Index axis = 0;
    const double spread = (hi - lo).maxCoeff(&axis);
    if (!(spread > 0)) return id;  // all points coincide

    const Index mid = begin + (end - begin) / 2;
    auto first = order_.begin() + begin, nth = order_.begin() + mid, last = order_.begin() + end;
    std::nth_element(first, nth, last, [&](Index a, Index b) {
      const double pa = points_(axis, a), pb = points_(axis, b);
      return pa < pb || (pa == pb && a < b);
    });
    const double value = points_(axis, *nth);
    nodes_[static_cast<std::size_t>(id)].split_dim = axis;
    nodes_[static_cast<std::size_t>(id)].split_value = value;
    const Index left = build(begin, mid);
    const Index right = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  void offer(Index i, const Eigen::Ref<const Vector>& q, Index k, std::optional<Index> exclude, Heap& heap) const {
    if (exclude && *exclude == i) return;
    const Neighbor cand{i, (points_.col(i) - q).squaredNorm()};
    if (static_cast<Index>(heap.size()) < k) {
      heap.push(cand);
    } else if (cand < heap.top()) {
      heap.pop();
      heap.push(cand);
    }
  }

  void search(Index node_id, const Eigen::Ref<const Vector>& q, Index k, std::optional<Index> exclude, Heap& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.split_dim < 0) {
      for (Index i = node.begin; i < node.end; ++i) offer(order_[static_cast<std::size_t>(i)], q, k, exclude, heap);
      return;
    }
    // Left holds coordinates <= split, right holds >= split.
    const double diff = q(node.split_dim) - node.split_value;
    const Index near = diff <= 0 ? node.left : node.right;
    const Index far = diff <= 0 ? node.right : node.left;
    search(near, q, k, exclude, heap);
    // Skip the far side only when it is strictly farther than the current
    // worst; equal-distance candidates with lower indices must stay reachable.
    if (static_cast<Index>(heap.size()) < k || diff * diff <= heap.top().dist2) search(far, q, k, exclude, heap);
  }

  Matrix points_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
};

/// Brute-force reference used by tests and as a fallback.
inline std::vector<Neighbor> brute_force_knn(const Matrix& points, const Eigen::Ref<const Vector>& q, Index k,
                                             std::optional<Index> exclude = {}) {
  std::vector<Neighbor> all;
  for (Index i = 0; i < points.cols(); ++i)
    if (!exclude || *exclude != i) all.push_back({i, (points.col(i) - q).squaredNorm()});
  std::sort(all.begin(), all.end());
  all.resize(static_cast<std::size_t>(std::min<Index>(k, static_cast<Index>(all.size()))));
  return all;
}

}  // namespace cdcflow
