#pragma once

#include "meshsplat/geometry.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace meshsplat {

/// Static 3D k-d tree. Ties in distance are broken by the lower index, so
/// queries are deterministic.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  /// The k nearest points to `query`, closest first. `exclude` (when within
  /// range) is skipped, which is how self-matches are dropped.
  std::vector<std::uint32_t> nearest(const Vec3& query, std::size_t k,
                                     std::uint32_t exclude = UINT32_MAX) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    int axis = -1;  // -1 for a leaf
    double split = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// For every point, the indices of its k nearest other points.
std::vector<std::vector<std::uint32_t>> knn_neighbors(std::span<const Vec3> points, std::size_t k);

}  // namespace meshsplat
