#pragma once

#include "meshsplat/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace meshsplat {

struct InitOptions {
  double scale_fraction = 0.5;  // of the triangle's mean edge length
  int per_polygon = 1;          // > 1 jitters extra splats inside the triangle
  double opacity = 0.5;
  Vec3 color = Vec3::Constant(0.5);
  std::uint64_t seed = 0;
};

/// Places splats at the triangle centers of the canonical mesh. With
/// per_polygon > 1 the extra splats are sampled uniformly inside each
/// triangle and their scale shrinks by 1/sqrt(per_polygon).
std::vector<Splat> init_splats(const SkinnedMesh& mesh, const InitOptions& opts = {});

/// A splat carried into world space.
struct WorldGaussian {
  Vec3 center = Vec3::Zero();
  Quat rotation = Quat::Identity();
  Vec3 scale = Vec3::Ones();
  Vec3 color = Vec3::Constant(0.5);
  double opacity = 0.5;
  bool degenerate = false;
};

/// mu' = k R mu + T, r' = R r, s' = k s.
WorldGaussian deform_splat(const Splat& splat, const PolygonFrame& frame);

/// Deforms every splat by its polygon frame. Splats on frames flagged
/// degenerate copy `previous[i]` when it is supplied and are flagged.
std::vector<WorldGaussian> deform_splats(std::span<const Splat> splats, std::span<const PolygonFrame> frames,
                                         std::span<const WorldGaussian> previous = {});

/// Identity frames at the canonical centroids.
std::vector<PolygonFrame> canonical_frames(const SkinnedMesh& mesh);

}  // namespace meshsplat
