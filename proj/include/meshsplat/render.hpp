#pragma once

#include "meshsplat/binding.hpp"
#include "meshsplat/rasterizer.hpp"
#include "meshsplat/types.hpp"

#include <span>
#include <vector>

namespace meshsplat {

struct RenderSettings {
  ProjectOptions project;
  RasterOptions raster;
};

/// Projection + rasterization of world-space Gaussians. `source[i]` is the
/// world index of `projected[i]`; culled Gaussians are absent.
struct GaussianRender {
  std::vector<Projected2D> projected;
  std::vector<std::uint32_t> source;
  RenderTarget target;
  RasterState state;
};

GaussianRender render_gaussians(std::span<const WorldGaussian> world, const Camera& cam, const Vec3& background,
                                const RenderSettings& settings = {}, const Image* background_image = nullptr);

/// Every intermediate of skin -> polygon frames -> deform -> project ->
/// rasterize, kept for the backward pass.
struct AvatarRender {
  std::vector<Vec3> rest_vertices;
  std::vector<Vec3> posed_vertices;
  std::vector<PolygonFrame> frames;
  std::vector<WorldGaussian> world;
  GaussianRender render;

  const Image& image() const { return render.target.color; }
};

AvatarRender render_avatar_full(const SkinnedMesh& mesh, const PoseParams& pose, std::span<const Splat> splats,
                                const Camera& cam, const Vec3& background, const RenderSettings& settings = {},
                                const Image* background_image = nullptr);

Image render_avatar(const SkinnedMesh& mesh, const PoseParams& pose, std::span<const Splat> splats,
                    const Camera& cam, const Vec3& background, const RenderSettings& settings = {});

/// Gradient with respect to one splat's stored parameters. `rot_local` is
/// with respect to the (w, x, y, z) components of the unit local rotation.
struct SplatGrad {
  Vec3 mu_local = Vec3::Zero();
  Vec4 rot_local = Vec4::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

/// Gradient with respect to one polygon frame (k, rotation as w, x, y, z,
/// translation).
struct FrameGrad {
  double k = 0.0;
  Vec4 rotation = Vec4::Zero();
  Vec3 translation = Vec3::Zero();
};

/// Chains d(loss)/d(world Gaussian) back through mu' = k R mu + T,
/// r' = R r, s' = k s. Frame gradients are accumulated when requested.
SplatGrad deform_backward(const Splat& splat, const PolygonFrame& frame, const WorldGaussianGrad& d_world,
                          const Vec3& d_color, double d_opacity, FrameGrad* d_frame = nullptr);

/// Full backward from an image gradient to per-splat parameter gradients.
std::vector<SplatGrad> render_avatar_backward(const AvatarRender& fwd, std::span<const Splat> splats,
                                              const Camera& cam, const Image& d_image,
                                              const RenderSettings& settings = {},
                                              std::vector<FrameGrad>* frame_grads = nullptr);

}  // namespace meshsplat
