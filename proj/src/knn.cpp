#include "meshsplat/knn.hpp"

#include "meshsplat/error.hpp"

#include <algorithm>
#include <queue>

namespace meshsplat {

namespace {

constexpr std::uint32_t kLeafSize = 8;

struct Candidate {
  double dist2;
  std::uint32_t index;
  bool operator<(const Candidate& o) const {
    return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
  }
};

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) build(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

std::vector<std::uint32_t> KdTree::nearest(const Vec3& query, std::size_t k, std::uint32_t exclude) const {
  std::priority_queue<Candidate> heap;  // worst candidate on top
  if (k == 0 || nodes_.empty()) return {};

  auto visit = [&](auto&& self, std::int32_t id) -> void {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t p = order_[i];
        if (p == exclude) continue;
        const Candidate c{(points_[p] - query).squaredNorm(), p};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double delta = query[n.axis] - n.split;
    const std::int32_t near = delta < 0.0 ? n.left : n.right;
    const std::int32_t far = delta < 0.0 ? n.right : n.left;
    self(self, near);
    // <= keeps equal-distance candidates with lower indices reachable
    if (heap.size() < k || delta * delta <= heap.top().dist2) self(self, far);
  };
  visit(visit, 0);

  std::vector<std::uint32_t> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top().index;
    heap.pop();
  }
  return out;
}

std::vector<std::vector<std::uint32_t>> knn_neighbors(std::span<const Vec3> points, std::size_t k) {
  if (points.size() < k + 1) {
    throw Error(ErrorCode::InvalidArgument, "need at least k+1 points for k nearest neighbors");
  }
  const KdTree tree(points);
  std::vector<std::vector<std::uint32_t>> out(points.size());
#pragma omp parallel for schedule(static) if (points.size() > 2048)
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[i] = tree.nearest(points[i], k, static_cast<std::uint32_t>(i));
  }
  return out;
}

}  // namespace meshsplat
