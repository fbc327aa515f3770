#include "meshsplat/render.hpp"

#include "meshsplat/body_model.hpp"
#include "meshsplat/error.hpp"

namespace meshsplat {

GaussianRender render_gaussians(std::span<const WorldGaussian> world, const Camera& cam, const Vec3& background,
                                const RenderSettings& settings, const Image* background_image) {
  GaussianRender out;
  out.projected.reserve(world.size());
  out.source.reserve(world.size());
  for (std::size_t i = 0; i < world.size(); ++i) {
    if (auto p = project_gaussian(world[i], cam, settings.project)) {
      out.projected.push_back(*p);
      out.source.push_back(static_cast<std::uint32_t>(i));
    }
  }
  out.target = RenderTarget(cam.width, cam.height, background);
  if (background_image) out.target.background_image = *background_image;
  out.state = rasterize(out.projected, out.target, settings.raster);
  return out;
}

AvatarRender render_avatar_full(const SkinnedMesh& mesh, const PoseParams& pose, std::span<const Splat> splats,
                                const Camera& cam, const Vec3& background, const RenderSettings& settings,
                                const Image* background_image) {
  AvatarRender out;
  const JointTransforms joints = forward_kinematics(mesh, pose);
  out.rest_vertices = shaped_vertices(mesh, pose);
  out.posed_vertices = skin_vertices(mesh, out.rest_vertices, joints);
  out.frames = polygon_frames(mesh, mesh.vertices, out.posed_vertices);
  out.world = deform_splats(splats, out.frames);
  out.render = render_gaussians(out.world, cam, background, settings, background_image);
  return out;
}

Image render_avatar(const SkinnedMesh& mesh, const PoseParams& pose, std::span<const Splat> splats,
                    const Camera& cam, const Vec3& background, const RenderSettings& settings) {
  return render_avatar_full(mesh, pose, splats, cam, background, settings).render.target.color;
}

SplatGrad deform_backward(const Splat& splat, const PolygonFrame& frame, const WorldGaussianGrad& d_world,
                          const Vec3& d_color, double d_opacity, FrameGrad* d_frame) {
  SplatGrad g;
  const Mat3 r = frame.rotation.toRotationMatrix();

  // mu' = k R mu + T
  g.mu_local = frame.k * (r.transpose() * d_world.center);

  // r' = canonical(R * r); canonical() may flip the sign
  const Quat product = frame.rotation * splat.rot_local;
  const Quat emitted = canonical(product);
  const double sign = emitted.coeffs().dot(product.coeffs()) >= 0.0 ? 1.0 : -1.0;
  const Vec4 d_product = sign * d_world.rotation;
  g.rot_local = left_product_matrix(frame.rotation).transpose() * d_product;

  // s' = k exp(log_s)
  const Vec3 base_scale = splat.scale();
  const Vec3 world_scale = frame.k * base_scale;
  g.log_scale = d_world.scale.cwiseProduct(world_scale);

  g.color = d_color;
  g.opacity = d_opacity;

  if (d_frame) {
    d_frame->translation += d_world.center;
    d_frame->k += d_world.center.dot(r * splat.mu_local) + d_world.scale.dot(base_scale);
    const auto dr = rotation_derivatives_wxyz(to_wxyz(frame.rotation));
    for (int c = 0; c < 4; ++c) {
      d_frame->rotation[c] += frame.k * d_world.center.dot(dr[static_cast<std::size_t>(c)] * splat.mu_local);
    }
    d_frame->rotation += right_product_matrix(splat.rot_local).transpose() * d_product;
  }
  return g;
}

std::vector<SplatGrad> render_avatar_backward(const AvatarRender& fwd, std::span<const Splat> splats,
                                              const Camera& cam, const Image& d_image,
                                              const RenderSettings& settings, std::vector<FrameGrad>* frame_grads) {
  if (fwd.world.size() != splats.size()) {
    throw Error(ErrorCode::ContractViolation, "forward render does not match the splat list");
  }
  const GaussianRender& r = fwd.render;
  const Raster2DGrad g2d = rasterize_backward(r.projected, r.target, r.state, d_image, settings.raster);
  if (frame_grads) frame_grads->assign(fwd.frames.size(), FrameGrad{});

  std::vector<SplatGrad> grads(splats.size());
  for (std::size_t p = 0; p < r.projected.size(); ++p) {
    const std::uint32_t i = r.source[p];
    const WorldGaussianGrad dw = project_gaussian_backward(fwd.world[i], cam, g2d.mean[p], g2d.cov[p]);
    const Splat& s = splats[i];
    FrameGrad* fg = frame_grads ? &(*frame_grads)[s.polygon_id] : nullptr;
    grads[i] = deform_backward(s, fwd.frames[s.polygon_id], dw, g2d.color[p], g2d.opacity[p], fg);
  }
  return grads;
}

}  // namespace meshsplat
