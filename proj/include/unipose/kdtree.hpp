#pragma once

// Minimal static kd-tree for exact nearest-neighbour queries in 2D/3D.
// Equal distances resolve to the lowest point index, so results do not
// depend on tree layout.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Core>

namespace unipose {

template <int Dim>
class KdTree {
 public:
  using Point = Eigen::Matrix<double, Dim, 1>;

  struct Hit {
    std::size_t index = 0;
    double sq_dist = std::numeric_limits<double>::infinity();
  };

  KdTree() = default;
  explicit KdTree(std::vector<Point> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / kLeaf + 2);
    if (!points_.empty()) build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Point& point(std::size_t i) const { return points_[i]; }

  Hit nearest(const Point& q) const {
    Hit best;
    if (!nodes_.empty()) search(0, q, best);
    return best;
  }

 private:
  static constexpr std::size_t kLeaf = 8;

  struct Node {
    std::size_t begin, end;  // range in order_
    int axis = -1;           // -1 = leaf
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeaf) return id;
    Point lo = points_[order_[begin]];
    Point hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                       const double va = points_[a][axis], vb = points_[b][axis];
                       return va < vb || (va == vb && a < b);
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(int id, const Point& q, Hit& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const double d = (points_[idx] - q).squaredNorm();
        if (d < best.sq_dist || (d == best.sq_dist && idx < best.index)) best = {idx, d};
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int first = diff < 0.0 ? n.left : n.right;
    const int second = diff < 0.0 ? n.right : n.left;
    search(first, q, best);
    // <= keeps equal-distance candidates on the far side reachable for the index tie-break.
    if (diff * diff <= best.sq_dist) search(second, q, best);
  }

  std::vector<Point> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

using KdTree2 = KdTree<2>;
using KdTree3 = KdTree<3>;

}  // namespace unipose
