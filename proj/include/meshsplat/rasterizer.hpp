#pragma once

// Depth-sorted, tile-parallel alpha compositing of projected Gaussians.
//
// Per pixel (center at x + 0.5, y + 0.5) the splats are composited front to
// back with
//     alpha_i = min(0.99, opacity_i * exp(-0.5 d^T cov_i^-1 d)),
//     C += T alpha_i c_i,  T *= 1 - alpha_i,
// stopping once T < 1e-4; the final color is C + T * background. Weights
// below RasterOptions::min_alpha are treated as zero, which is what lets a
// splat be confined to the bounding box of its min_alpha ellipse. Tiling
// is purely a work partition: every pixel sees the same splats in the same
// order regardless of tile size, so outputs are bit-identical across tile
// sizes and thread counts.

#include "meshsplat/binding.hpp"
#include "meshsplat/image.hpp"
#include "meshsplat/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace meshsplat {

inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinTransmittance = 1e-4;

struct Projected2D {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Identity();
  double depth = 1.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

struct ProjectOptions {
  double near_plane = 0.01;
  double blur = 0.3;           // px^2 added to both cov2d eigenvalues
  double cull_sigmas = 3.0;    // viewport culling extent
};

/// EWA projection: cov2d = J W Sigma W^T J^T + blur * I with J the pinhole
/// Jacobian at the center. Returns nullopt when culled.
std::optional<Projected2D> project_gaussian(const WorldGaussian& g, const Camera& cam,
                                            const ProjectOptions& opts = {});

/// Gradients of a scalar loss with respect to one world Gaussian, given its
/// gradients with respect to the projected mean and covariance entries.
/// `rotation` is with respect to the (w, x, y, z) components of the unit
/// rotation quaternion.
struct WorldGaussianGrad {
  Vec3 center = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  Vec3 scale = Vec3::Zero();
};

WorldGaussianGrad project_gaussian_backward(const WorldGaussian& g, const Camera& cam, const Vec2& d_mean,
                                            const Vec3& d_cov);

struct RenderTarget {
  int width = 0;
  int height = 0;
  Vec3 background = Vec3::Zero();
  std::optional<Image> background_image;
  Image color;
  std::vector<double> alpha;

  RenderTarget() = default;
  RenderTarget(int w, int h, const Vec3& bg = Vec3::Zero());

  Vec3 background_at(int x, int y) const {
    return background_image ? background_image->pixel(x, y) : background;
  }
};

struct RasterOptions {
  int tile_size = 16;
  double min_alpha = 1e-7;
  bool parallel = true;
};

/// Forward bookkeeping retained for the backward pass.
struct RasterState {
  int width = 0;
  int height = 0;
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  double min_alpha = 0.0;
  std::size_t splat_count = 0;
  std::vector<std::uint32_t> tile_offsets;  // tiles_x * tiles_y + 1 entries
  std::vector<std::uint32_t> tile_splats;   // splat indices, front to back
  std::vector<double> final_transmittance;  // per pixel
  std::vector<std::uint32_t> contributors;  // per pixel: tile-list entries processed
  std::size_t skipped_singular = 0;
};

RasterState rasterize(std::span<const Projected2D> splats, RenderTarget& target, const RasterOptions& opts = {});

/// Gradients with respect to each projected splat. `cov` holds the
/// derivatives for (xx, xy, yy), where xy fills both off-diagonal entries.
struct Raster2DGrad {
  std::vector<Vec3> color;
  std::vector<double> opacity;
  std::vector<Vec2> mean;
  std::vector<Vec3> cov;
};

Raster2DGrad rasterize_backward(std::span<const Projected2D> splats, const RenderTarget& target,
                                const RasterState& state, const Image& d_image, const RasterOptions& opts = {});

}  // namespace meshsplat
