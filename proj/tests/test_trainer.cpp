#include "meshsplat/body_model.hpp"
#include "meshsplat/error.hpp"
#include "meshsplat/io.hpp"
#include "meshsplat/losses.hpp"
#include "meshsplat/synthetic.hpp"
#include "meshsplat/trainer.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

using namespace meshsplat;
using namespace meshsplat::testing;

namespace {

TrainFrame frame_of(const ToyScene& s) { return TrainFrame{s.pose, s.camera, s.target, s.mask}; }

TrainFrame self_target(const ToyScene& s, std::span<const Splat> splats) {
  const AvatarRender r = render_avatar_full(s.mesh, s.pose, splats, s.camera, Vec3::Zero());
  return TrainFrame{s.pose, s.camera, r.image(), r.render.target.alpha};
}

double max_drift(std::span<const Splat> a, std::span<const Splat> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d = std::max(d, (a[i].mu_local - b[i].mu_local).cwiseAbs().maxCoeff());
    d = std::max(d, quat_gap(a[i].rot_local, b[i].rot_local));
    d = std::max(d, (a[i].log_scale - b[i].log_scale).cwiseAbs().maxCoeff());
    d = std::max(d, (a[i].color - b[i].color).cwiseAbs().maxCoeff());
    d = std::max(d, std::abs(a[i].opacity - b[i].opacity));
  }
  return d;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("meshsplat_trainer_" + name);
}

}  // namespace

TEST(SceneExtent, UnitSquare) {
  EXPECT_NEAR(scene_extent(two_triangle_mesh()), std::sqrt(0.5), 1e-15);
}

TEST(Train, FixedPointWithoutRegularizer) {
  const ToyScene s = toy_scene(32, 32, 100);
  const TrainFrame f = self_target(s, s.initial);
  TrainOptions o;
  o.iterations = 150;
  o.weights.w_knn = 0.0;
  o.prune = false;
  const TrainResult r = train(s.mesh, s.initial, std::span(&f, 1), o);
  ASSERT_FALSE(r.halted);
  EXPECT_LT(max_drift(r.splats, s.initial), 1e-3);
  for (const auto& e : r.log) EXPECT_LT(e.breakdown.total, 1e-12);
}

TEST(Train, ReducesLossOnToyScene) {
  const ToyScene s = toy_scene(32, 32, 100);
  const TrainFrame f = frame_of(s);
  TrainOptions o;
  o.iterations = 300;
  const TrainResult r = train(s.mesh, s.initial, std::span(&f, 1), o);
  ASSERT_EQ(r.log.size(), 300u);
  EXPECT_LT(r.log.back().breakdown.total, 0.5 * r.log.front().breakdown.total);
  const double before = psnr(render_avatar(s.mesh, s.pose, s.initial, s.camera, Vec3::Zero()), s.target);
  const double after = psnr(render_avatar(s.mesh, s.pose, r.splats, s.camera, Vec3::Zero()), s.target);
  EXPECT_GT(after, before + 5.0);
}

TEST(Train, ConvergedForegroundIgnoresBackground) {
  const ToyScene s = toy_scene(32, 32, 100);
  const TrainFrame f = frame_of(s);
  TrainOptions o;
  o.iterations = 1500;
  const TrainResult r = train(s.mesh, s.initial, std::span(&f, 1), o);
  const Image black = render_avatar(s.mesh, s.pose, r.splats, s.camera, Vec3::Zero());
  const Image white = render_avatar(s.mesh, s.pose, r.splats, s.camera, Vec3::Ones());
  std::vector<double> change;
  for (std::size_t p = 0; p < s.mask.size(); ++p) {
    if (s.mask[p] < 0.9999) continue;
    double worst = 0.0;
    for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(white.data[3 * p + c] - black.data[3 * p + c]));
    change.push_back(worst);
  }
  ASSERT_GT(change.size(), 20u);
  std::sort(change.begin(), change.end());
  EXPECT_LT(change[change.size() * 9 / 10], 1e-3);
  EXPECT_LT(change.back(), 2e-2);
}

TEST(Train, SeededRunsAreIdentical) {
  const ToyScene s = toy_scene(24, 24, 60);
  const TrainFrame f = frame_of(s);
  TrainOptions o;
  o.iterations = 40;
  o.seed = 17;
  const TrainResult a = train(s.mesh, s.initial, std::span(&f, 1), o);
  const TrainResult b = train(s.mesh, s.initial, std::span(&f, 1), o);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].breakdown.total, b.log[i].breakdown.total);
    EXPECT_EQ(a.log[i].background, b.log[i].background);
  }
  EXPECT_EQ(encode_splats(a.splats), encode_splats(b.splats));
  o.seed = 18;
  const TrainResult c = train(s.mesh, s.initial, std::span(&f, 1), o);
  EXPECT_NE(a.log[0].background, c.log[0].background);
}

TEST(Train, FramesSampledWithoutReplacement) {
  const ToyScene s = toy_scene(16, 16, 40);
  std::vector<TrainFrame> frames(3, frame_of(s));
  TrainOptions o;
  o.iterations = 9;
  const TrainResult r = train(s.mesh, s.initial, frames, o);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<int> seen(3, 0);
    for (int i = 0; i < 3; ++i) ++seen[r.log[static_cast<std::size_t>(3 * epoch + i)].frame];
    EXPECT_EQ(seen, std::vector<int>({1, 1, 1}));
  }
}

TEST(Train, FixedBackgroundWithoutMask) {
  const ToyScene s = toy_scene(16, 16, 40);
  TrainFrame f = frame_of(s);
  f.mask.clear();
  TrainOptions o;
  o.iterations = 5;
  o.background = Vec3(0.2, 0.3, 0.4);
  const TrainResult r = train(s.mesh, s.initial, std::span(&f, 1), o);
  for (const auto& e : r.log) EXPECT_EQ(e.background, o.background);
}

TEST(Train, ZeroLearningRatesFreezeSplats) {
  const ToyScene s = toy_scene(16, 16, 40);
  const TrainFrame f = frame_of(s);
  TrainOptions o;
  o.iterations = 10;
  o.lr = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  o.prune = false;
  const TrainResult r = train(s.mesh, s.initial, std::span(&f, 1), o);
  EXPECT_EQ(encode_splats(r.splats), encode_splats(s.initial));
}

TEST(Train, PrunesTransparentSplats) {
  const ToyScene s = toy_scene(16, 16, 40);
  std::vector<Splat> init = s.initial;
  init[3].opacity = 0.001;
  init[7].opacity = 0.002;
  const TrainFrame f = frame_of(s);
  TrainOptions o;
  o.iterations = 2;
  o.lr.opacity = 0.0;
  const TrainResult r = train(s.mesh, init, std::span(&f, 1), o);
  EXPECT_EQ(r.pruned, 2u);
  EXPECT_EQ(r.splats.size(), init.size() - 2);
  for (const Splat& sp : r.splats) EXPECT_GE(sp.opacity, o.prune_opacity);
}

TEST(Train, NonFiniteLossHaltsWithCheckpoint) {
  const ToyScene s = toy_scene(16, 16, 40);
  TrainFrame f = frame_of(s);
  f.image.data[5] = std::numeric_limits<double>::quiet_NaN();
  const auto path = temp_path("halt.ckpt");
  std::filesystem::remove(path);
  TrainOptions o;
  o.iterations = 20;
  o.checkpoint_path = path;
  const TrainResult r = train(s.mesh, s.initial, std::span(&f, 1), o);
  EXPECT_TRUE(r.halted);
  EXPECT_NE(r.halt_reason.find("non-finite"), std::string::npos);
  EXPECT_EQ(r.log.size(), 1u);
  ASSERT_TRUE(std::filesystem::exists(path));
  const Container c = decode_container(read_file_bytes(path), kCheckpointMagic, kFormatVersion);
  EXPECT_EQ(c.meta.at("iteration"), 0);
  EXPECT_EQ(splats_from_container(c).size(), s.initial.size());
  std::filesystem::remove(path);
}

TEST(Train, PeriodicCheckpointCarriesOptimizerState) {
  const ToyScene s = toy_scene(16, 16, 40);
  const TrainFrame f = frame_of(s);
  const auto path = temp_path("periodic.ckpt");
  std::filesystem::remove(path);
  TrainOptions o;
  o.iterations = 10;
  o.checkpoint_every = 4;
  o.checkpoint_path = path;
  o.prune = false;
  const TrainResult r = train(s.mesh, s.initial, std::span(&f, 1), o);
  ASSERT_TRUE(std::filesystem::exists(path));
  const Container c = decode_container(read_file_bytes(path), kCheckpointMagic, kFormatVersion);
  EXPECT_GT(c.arrays.size(), 6u);
  EXPECT_EQ(splats_from_container(c).size(), r.splats.size());
  std::filesystem::remove(path);
}

TEST(Train, HoldoutEvaluation) {
  const ToyScene s = toy_scene(16, 16, 40);
  const TrainFrame f = frame_of(s);
  TrainOptions o;
  o.iterations = 10;
  o.eval_every = 5;
  const TrainResult r = train(s.mesh, s.initial, std::span(&f, 1), o, std::span(&f, 1));
  int evals = 0;
  for (const auto& e : r.log) {
    if (e.eval_psnr) {
      ++evals;
      EXPECT_TRUE(e.eval_ssim.has_value());
    }
  }
  EXPECT_EQ(evals, 2);
}

TEST(Train, PoseRefinementMovesPose) {
  const ToyScene s = toy_scene(24, 24, 80);
  TrainFrame f = frame_of(s);
  f.pose.root_translation.x() += 0.03;
  TrainOptions o;
  o.iterations = 30;
  o.optimize_pose = true;
  const TrainResult r = train(s.mesh, s.target_splats, std::span(&f, 1), o);
  ASSERT_EQ(r.poses.size(), 1u);
  EXPECT_LT(std::abs(r.poses[0].root_translation.x() - s.pose.root_translation.x()), 0.03);

  o.optimize_pose = false;
  const TrainResult frozen = train(s.mesh, s.target_splats, std::span(&f, 1), o);
  EXPECT_EQ(frozen.poses[0].to_vector(), f.pose.to_vector());
}

TEST(Train, RandomBackgroundSuppressesOffSilhouetteSplats) {
  // black-clad subject covering only part of the body
  const ToyScene s = toy_scene(32, 32, 120);
  std::vector<Splat> clothing;
  for (const Splat& init : s.initial) {
    const Triangle& t = s.mesh.triangles[init.polygon_id];
    if ((s.mesh.vertices[t[0]] + s.mesh.vertices[t[1]] + s.mesh.vertices[t[2]]).y() / 3.0 < 1.0) continue;
    Splat sp = init;
    sp.color = Vec3::Constant(0.02);
    sp.opacity = 0.9;
    clothing.push_back(sp);
  }
  const TrainFrame f = self_target(s, clothing);
  const auto off_silhouette_opacity = [&](const std::vector<Splat>& splats) {
    const AvatarRender r = render_avatar_full(s.mesh, s.pose, splats, s.camera, Vec3::Zero());
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < splats.size(); ++i) {
      const ProjectedPoint p = project_point(s.camera, r.world[i].center);
      const int x = static_cast<int>(p.pixel.x()), y = static_cast<int>(p.pixel.y());
      if (!p.valid || x < 0 || y < 0 || x >= 32 || y >= 32) continue;
      if (f.mask[static_cast<std::size_t>(y * 32 + x)] > 0.05) continue;
      sum += splats[i].opacity;
      ++count;
    }
    return count ? sum / count : 0.0;
  };
  std::vector<Splat> dark = s.initial;
  for (Splat& sp : dark) sp.color = Vec3::Constant(0.02);
  TrainOptions o;
  o.iterations = 400;
  o.prune = false;
  o.weights.w_knn = 0.0;
  const TrainResult random_bg = train(s.mesh, dark, std::span(&f, 1), o);
  o.random_background = false;
  const TrainResult fixed_bg = train(s.mesh, dark, std::span(&f, 1), o);
  const double with_random = off_silhouette_opacity(random_bg.splats);
  const double with_fixed = off_silhouette_opacity(fixed_bg.splats);
  EXPECT_GT(with_fixed, 0.2);
  EXPECT_LT(with_random, with_fixed);
  EXPECT_LT(with_random, 0.1);
}

TEST(Train, Errors) {
  const ToyScene s = toy_scene(16, 16, 40);
  EXPECT_THROW(train(s.mesh, s.initial, {}), Error);
  TrainFrame f = frame_of(s);
  f.mask.pop_back();
  EXPECT_THROW(train(s.mesh, s.initial, std::span(&f, 1)), Error);
  f = frame_of(s);
  f.camera.width = 17;
  EXPECT_THROW(train(s.mesh, s.initial, std::span(&f, 1)), Error);
  std::vector<Splat> bad = s.initial;
  bad[0].polygon_id = 100000;
  f = frame_of(s);
  EXPECT_THROW(train(s.mesh, bad, std::span(&f, 1)), Error);
}

TEST(Evaluate, PerfectReconstruction) {
  const ToyScene s = toy_scene(24, 24, 60);
  const std::vector<PoseParams> poses = {s.pose, s.pose};
  const std::vector<Camera> cams = {s.camera};
  const Image truth = render_avatar(s.mesh, s.pose, s.target_splats, s.camera, Vec3::Zero());
  const std::vector<Image> images = {truth, truth};
  const EvalReport r = evaluate(s.mesh, s.target_splats, poses, cams, images);
  ASSERT_EQ(r.frames.size(), 2u);
  EXPECT_EQ(r.mean_psnr, 100.0);
  EXPECT_DOUBLE_EQ(r.mean_ssim, 1.0);
  EXPECT_EQ(r.splat_count, s.target_splats.size());
}

TEST(Evaluate, MatchesLossFunctions) {
  const ToyScene s = toy_scene(24, 24, 60);
  const std::vector<PoseParams> poses = {s.pose};
  const std::vector<Camera> cams = {s.camera};
  const std::vector<Image> truth = {s.target};
  const Vec3 bg(0.1, 0.2, 0.3);
  const EvalReport r = evaluate(s.mesh, s.initial, poses, cams, truth, bg);
  const Image img = render_avatar(s.mesh, s.pose, s.initial, s.camera, bg);
  EXPECT_EQ(r.frames[0].psnr, psnr(img, s.target));
  EXPECT_EQ(r.frames[0].ssim, ssim(img, s.target));
  EXPECT_EQ(r.splat_count, s.initial.size());
  EXPECT_FALSE(to_json(r, false).dump().find("ms") != std::string::npos);
  EXPECT_TRUE(to_json(r, true).dump().find("ms") != std::string::npos);
}

TEST(Evaluate, Errors) {
  const ToyScene s = toy_scene(16, 16, 40);
  const std::vector<PoseParams> poses = {s.pose, s.pose};
  const std::vector<Camera> cams = {s.camera};
  const std::vector<Image> one = {s.target};
  EXPECT_THROW(evaluate(s.mesh, s.initial, poses, cams, one), Error);
}
