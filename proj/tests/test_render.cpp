#include "meshsplat/binding.hpp"
#include "meshsplat/error.hpp"
#include "meshsplat/body_model.hpp"
#include "meshsplat/fitting.hpp"
#include "meshsplat/image.hpp"
#include "meshsplat/render.hpp"
#include "meshsplat/synthetic.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace meshsplat;
using namespace meshsplat::testing;

namespace {

struct SmallScene {
  SkinnedMesh mesh = two_triangle_mesh();
  PoseParams pose;
  Camera cam = init_camera(8, 8);
  std::vector<Splat> splats;
  Vec3 bg{0.3, 0.2, 0.1};
};

SmallScene small_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SmallScene s;
  s.pose = PoseParams::neutral(s.mesh);
  s.pose.joint_rotations[0] = random_vec3(rng) * 0.5;
  s.pose.root_translation = Vec3(-0.5, -0.5, 4.5);
  InitOptions o;
  o.per_polygon = 5;
  o.seed = seed;
  s.splats = init_splats(s.mesh, o);
  for (Splat& sp : s.splats) {
    sp.mu_local += random_vec3(rng) * 0.05;
    sp.rot_local = canonical(random_quat(rng));
    sp.log_scale += random_vec3(rng) * 0.3;
    sp.color = random_vec3(rng, 0.1, 0.9);
    sp.opacity = uniform(rng, 0.15, 0.6);
  }
  return s;
}

double objective(const SmallScene& s, const std::vector<Splat>& splats, const Image& w, const RenderSettings& rs) {
  const Image img = render_avatar(s.mesh, s.pose, splats, s.cam, s.bg, rs);
  double v = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) v += img.data[i] * w.data[i];
  return v;
}

}  // namespace

TEST(RenderAvatar, SilhouetteOverlapsMeshBox) {
  const SkinnedMesh m = humanoid();
  const PoseParams p = facing_pose(m, 6.0);
  const Camera c = init_camera(64, 64);
  const Image img = render_avatar(m, p, init_splats(m), c, Vec3::Ones());
  const auto posed = skin_vertices(m, p);
  Vec2 lo(1e9, 1e9), hi(-1e9, -1e9);
  for (const Vec3& v : posed) {
    const Vec2 q = project_point(c, v).pixel;
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  int covered = 0, outside = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (img.pixel(x, y).minCoeff() < 0.9) {
        ++covered;
        if (x + 0.5 < lo.x() - 4 || x + 0.5 > hi.x() + 4 || y + 0.5 < lo.y() - 4 || y + 0.5 > hi.y() + 4) ++outside;
      }
    }
  }
  EXPECT_GT(covered, 50);
  EXPECT_EQ(outside, 0);
}

TEST(RenderAvatar, Deterministic) {
  const SkinnedMesh m = humanoid();
  const auto s = init_splats(m);
  const Image a = render_avatar(m, facing_pose(m), s, init_camera(48, 48), Vec3::Zero());
  const Image b = render_avatar(m, facing_pose(m), s, init_camera(48, 48), Vec3::Zero());
  EXPECT_EQ(a.data, b.data);
}

TEST(RenderAvatar, MirroredPoseFlipsImage) {
  HumanoidOptions ho;
  ho.shape_count = 0;
  ho.expression_count = 0;
  const SkinnedMesh m = humanoid(ho);
  const auto s = init_splats(m);
  const Camera c = init_camera(64, 64);
  PoseParams left = facing_pose(m, 5.0);
  PoseParams right = left;
  const std::size_t ls = *m.joint_index("left_shoulder"), rs = *m.joint_index("right_shoulder");
  const std::size_t le = *m.joint_index("left_elbow"), re = *m.joint_index("right_elbow");
  left.joint_rotations[ls] = {0.1, 0.3, 0.7};
  left.joint_rotations[le] = {0.0, -0.4, 0.2};
  // reflecting x -> -x maps the axis-angle (x, y, z) to (x, -y, -z)
  const auto mirrored = [](const Vec3& w) { return Vec3(w.x(), -w.y(), -w.z()); };
  right.joint_rotations[rs] = mirrored(left.joint_rotations[ls]);
  right.joint_rotations[re] = mirrored(left.joint_rotations[le]);
  const Image a = render_avatar(m, left, s, c, Vec3::Ones());
  const Image b = flip_horizontal(render_avatar(m, right, s, c, Vec3::Ones()));
  double total = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) total += std::abs(a.data[i] - b.data[i]);
  EXPECT_LT(total / static_cast<double>(a.data.size()), 2e-3);
  double moved = 0.0;
  const Image rest = render_avatar(m, facing_pose(m, 5.0), s, c, Vec3::Ones());
  for (std::size_t i = 0; i < a.data.size(); ++i) moved += std::abs(a.data[i] - rest.data[i]);
  EXPECT_GT(moved / static_cast<double>(a.data.size()), 5e-3);
}

TEST(RenderAvatarBackward, AllSplatParametersMatchFiniteDifference) {
  double worst = 0.0;
  RenderSettings rs;
  rs.raster.min_alpha = 1e-12;
  rs.project.cull_sigmas = 1e9;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SmallScene s = small_scene(seed);
    std::mt19937_64 rng(seed + 100);
    Image w(8, 8);
    for (double& v : w.data) v = uniform(rng, -1.0, 1.0);
    const AvatarRender fwd = render_avatar_full(s.mesh, s.pose, s.splats, s.cam, s.bg, rs);
    const auto g = render_avatar_backward(fwd, s.splats, s.cam, w, rs);
    const double eps = 1e-4;
    const auto check = [&](double analytic, auto&& perturb) {
      auto a = s.splats, b = s.splats;
      perturb(a, eps);
      perturb(b, -eps);
      const double numeric = (objective(s, a, w, rs) - objective(s, b, w, rs)) / (2 * eps);
      worst = std::max(worst, relative_error(analytic, numeric, 1e-4));
    };
    for (std::size_t i = 0; i < s.splats.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        check(g[i].mu_local[c], [&](auto& v, double e) { v[i].mu_local[c] += e; });
        check(g[i].log_scale[c], [&](auto& v, double e) { v[i].log_scale[c] += e; });
        check(g[i].color[c], [&](auto& v, double e) { v[i].color[c] += e; });
      }
      check(g[i].opacity, [&](auto& v, double e) { v[i].opacity += e; });
      const Vec4 q = to_wxyz(s.splats[i].rot_local);
      for (int c = 0; c < 4; ++c) {
        const Vec4 t = Vec4::Unit(c) - q * q[c];
        check(g[i].rot_local.dot(t), [&](auto& v, double e) { v[i].rot_local = from_wxyz(q + e * t); });
      }
    }
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(DeformBackward, FrameGradientsMatchFiniteDifference) {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 50; ++trial) {
    Splat s;
    s.mu_local = random_vec3(rng) * 0.3;
    s.rot_local = canonical(random_quat(rng));
    s.log_scale = random_vec3(rng, -3, -1);
    PolygonFrame f;
    f.k = uniform(rng, 0.5, 2.0);
    f.rotation = canonical(random_quat(rng));
    f.translation = random_vec3(rng);
    WorldGaussianGrad dw;
    dw.center = random_vec3(rng);
    dw.rotation = Vec4::Random();
    dw.scale = random_vec3(rng);
    const auto value = [&](const Splat& sp, const PolygonFrame& fr) {
      const WorldGaussian g = deform_splat(sp, fr);
      return dw.center.dot(g.center) + dw.rotation.dot(to_wxyz(g.rotation)) + dw.scale.dot(g.scale);
    };
    FrameGrad fg;
    const SplatGrad sg = deform_backward(s, f, dw, Vec3::Zero(), 0.0, &fg);
    const double eps = 1e-6;
    for (int c = 0; c < 3; ++c) {
      PolygonFrame a = f, b = f;
      a.translation[c] += eps;
      b.translation[c] -= eps;
      EXPECT_LT(relative_error(fg.translation[c], (value(s, a) - value(s, b)) / (2 * eps), 1e-4), 1e-5);
      Splat sa = s, sb = s;
      sa.mu_local[c] += eps;
      sb.mu_local[c] -= eps;
      EXPECT_LT(relative_error(sg.mu_local[c], (value(sa, f) - value(sb, f)) / (2 * eps), 1e-4), 1e-5);
    }
    PolygonFrame a = f, b = f;
    a.k += eps;
    b.k -= eps;
    EXPECT_LT(relative_error(fg.k, (value(s, a) - value(s, b)) / (2 * eps), 1e-4), 1e-5);
    const Vec4 q = to_wxyz(f.rotation);
    for (int c = 0; c < 4; ++c) {
      const Vec4 t = Vec4::Unit(c) - q * q[c];
      PolygonFrame fa = f, fb = f;
      fa.rotation = from_wxyz(q + eps * t);
      fb.rotation = from_wxyz(q - eps * t);
      EXPECT_LT(relative_error(fg.rotation.dot(t), (value(s, fa) - value(s, fb)) / (2 * eps), 1e-4), 1e-5);
    }
  }
}

TEST(RenderAvatarBackward, MismatchedForwardThrows) {
  const SmallScene s = small_scene(3);
  const AvatarRender fwd = render_avatar_full(s.mesh, s.pose, s.splats, s.cam, s.bg);
  const std::vector<Splat> fewer(s.splats.begin(), s.splats.begin() + 3);
  EXPECT_THROW(render_avatar_backward(fwd, fewer, s.cam, Image(8, 8)), Error);
}
