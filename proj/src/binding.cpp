#include "meshsplat/binding.hpp"

#include "meshsplat/error.hpp"

#include <cmath>
#include <random>

namespace meshsplat {

std::vector<Splat> init_splats(const SkinnedMesh& mesh, const InitOptions& opts) {
  if (opts.per_polygon < 1) throw Error(ErrorCode::InvalidArgument, "per_polygon must be at least 1");
  if (!(opts.scale_fraction > 0.0)) throw Error(ErrorCode::InvalidArgument, "scale_fraction must be positive");
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double shrink = 1.0 / std::sqrt(static_cast<double>(opts.per_polygon));

  std::vector<Splat> splats;
  splats.reserve(mesh.triangle_count() * static_cast<std::size_t>(opts.per_polygon));
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    const Triangle& tri = mesh.triangles[t];
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    const Vec3 centroid = (a + b + c) / 3.0;
    const double mean_edge = ((b - a).norm() + (c - b).norm() + (a - c).norm()) / 3.0;
    const double scale = opts.scale_fraction * mean_edge * shrink;

    for (int s = 0; s < opts.per_polygon; ++s) {
      Splat sp;
      if (s > 0) {
        double u = unit(rng);
        double v = unit(rng);
        if (u + v > 1.0) {
          u = 1.0 - u;
          v = 1.0 - v;
        }
        sp.mu_local = a + u * (b - a) + v * (c - a) - centroid;
      }
      sp.log_scale = Vec3::Constant(std::log(scale));
      sp.color = opts.color;
      sp.opacity = opts.opacity;
      sp.polygon_id = static_cast<std::uint32_t>(t);
      splats.push_back(sp);
    }
  }
  return splats;
}

WorldGaussian deform_splat(const Splat& splat, const PolygonFrame& frame) {
  WorldGaussian g;
  g.center = frame.k * (frame.rotation * splat.mu_local) + frame.translation;
  g.rotation = canonical(frame.rotation * splat.rot_local);
  g.scale = frame.k * splat.scale();
  g.color = splat.color;
  g.opacity = splat.opacity;
  g.degenerate = frame.degenerate;
  return g;
}

std::vector<WorldGaussian> deform_splats(std::span<const Splat> splats, std::span<const PolygonFrame> frames,
                                         std::span<const WorldGaussian> previous) {
  if (!previous.empty() && previous.size() != splats.size()) {
    throw Error(ErrorCode::DimensionMismatch, "previous world state must match the splat count");
  }
  std::vector<WorldGaussian> out(splats.size());
  const std::int64_t count = static_cast<std::int64_t>(splats.size());
  for (std::int64_t i = 0; i < count; ++i) {
    const Splat& s = splats[static_cast<std::size_t>(i)];
    if (s.polygon_id >= frames.size()) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "splat " + std::to_string(i) + " references polygon " + std::to_string(s.polygon_id));
    }
  }
#pragma omp parallel for schedule(static) if (count > 8192)
  for (std::int64_t i = 0; i < count; ++i) {
    const std::size_t idx = static_cast<std::size_t>(i);
    const Splat& s = splats[idx];
    const PolygonFrame& f = frames[s.polygon_id];
    if (f.degenerate && !previous.empty()) {
      out[idx] = previous[idx];
      out[idx].degenerate = true;
    } else {
      out[idx] = deform_splat(s, f);
    }
  }
  return out;
}

std::vector<PolygonFrame> canonical_frames(const SkinnedMesh& mesh) {
  std::vector<PolygonFrame> frames(mesh.triangle_count());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const Triangle& tri = mesh.triangles[t];
    frames[t].translation = (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
  }
  return frames;
}

}  // namespace meshsplat
