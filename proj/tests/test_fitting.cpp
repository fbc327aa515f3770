#include "meshsplat/error.hpp"
#include "meshsplat/fitting.hpp"
#include "meshsplat/geometry.hpp"
#include "meshsplat/body_model.hpp"
#include "meshsplat/synthetic.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace meshsplat;
using namespace meshsplat::testing;

namespace {

double rotation_gap(const Vec3& a, const Vec3& b) {
  return quat_to_axis_angle(axis_angle_to_quat(a).conjugate() * axis_angle_to_quat(b)).norm();
}

bool is_leaf(const SkinnedMesh& m, std::uint32_t j) {
  for (std::uint32_t p : m.joint_parents) {
    if (p == j) return false;
  }
  return true;
}

// Facing pose turned by `yaw` about the vertical axis through the pelvis.
PoseParams turned(const SkinnedMesh& m, double yaw, double distance = 3.0) {
  PoseParams p = facing_pose(m, distance);
  const Quat root = Eigen::AngleAxisd(yaw, Vec3::UnitY()) * axis_angle_to_quat(p.joint_rotations[0]);
  p.joint_rotations[0] = quat_to_axis_angle(root);
  return p;
}

std::vector<Vec3> face_of(const SkinnedMesh& m, const PoseParams& p) {
  const auto posed = skin_vertices(m, p);
  std::vector<Vec3> out;
  for (std::uint32_t v : m.face_vertex_ids) out.push_back(posed[v]);
  return out;
}

double face_contribution(const FittingLoss& l) {
  return l.breakdown.contribution("vertex") + l.breakdown.contribution("lap") + l.breakdown.contribution("edge");
}

struct Fixture {
  SkinnedMesh mesh = humanoid();
  std::vector<std::string> layout = humanoid_keypoint_layout(mesh);
  Camera cam = init_camera(256, 256);
};

}  // namespace

TEST(InitCamera, SquareFrame) {
  const Camera c = init_camera(1080, 1080);
  EXPECT_DOUBLE_EQ(c.cx, 540.0);
  EXPECT_DOUBLE_EQ(c.cy, 540.0);
  EXPECT_DOUBLE_EQ(c.fx, 1296.0);
  EXPECT_DOUBLE_EQ(c.fy, 1296.0);
  EXPECT_TRUE(c.rotation.coeffs().isApprox(Quat::Identity().coeffs()));
  EXPECT_TRUE(c.translation.isZero(0.0));
}

TEST(InitCamera, SmallSquare) {
  const Camera c = init_camera(512, 512);
  EXPECT_DOUBLE_EQ(c.cx, 256.0);
  EXPECT_DOUBLE_EQ(c.cy, 256.0);
}

TEST(InitCamera, Widescreen) {
  const Camera c = init_camera(1920, 1080);
  EXPECT_DOUBLE_EQ(c.fx, 2304.0);
  EXPECT_DOUBLE_EQ(c.fy, 2304.0);
  EXPECT_DOUBLE_EQ(c.cx, 960.0);
  EXPECT_DOUBLE_EQ(c.cy, 540.0);
}

TEST(InitCamera, FocalFactorIsAFlag) {
  EXPECT_DOUBLE_EQ(init_camera(100, 50, 2.0).fx, 200.0);
}

TEST(BindKeypoints, ByNameAndByMap) {
  SkinnedMesh m = humanoid();
  m.keypoint_joints["hand"] = "left_palm";
  const std::vector<std::string> layout = {"pelvis", "hand", "tail"};
  const auto b = bind_keypoints(m, layout);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0], m.joint_index("pelvis"));
  EXPECT_EQ(b[1], m.joint_index("left_palm"));
  EXPECT_FALSE(b[2].has_value());
}

TEST(FittingLoss, ZeroAtProjectedInit) {
  Fixture f;
  const PoseParams p = facing_pose(f.mesh);
  const auto kp = project_keypoints(f.mesh, p, f.layout, f.cam);
  const auto face = face_of(f.mesh, p);
  const FittingLoss l = fitting_loss(f.mesh, p, f.layout, kp, p, &face, f.cam);
  EXPECT_TRUE(l.face_applied);
  EXPECT_NEAR(l.total(), 0.0, 1e-20);
}

TEST(FittingLoss, KeypointTermMatchesReprojectionOracle) {
  Fixture f;
  std::mt19937_64 rng(3);
  const PoseParams truth = facing_pose(f.mesh);
  auto kp = project_keypoints(f.mesh, truth, f.layout, f.cam);
  for (auto& k : kp) k.confidence = uniform(rng, 0.2, 1.0);
  kp[3].synthetic = true;
  LossWeights w;
  w.w_sym = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    PoseParams p = truth;
    std::uint32_t j = 0;
    while (is_leaf(f.mesh, j)) j = static_cast<std::uint32_t>(rng() % f.mesh.joint_count());
    p.joint_rotations[j] += random_vec3(rng, -0.2, 0.2);
    const auto fk = forward_kinematics(f.mesh, p);
    double oracle = 0.0;
    for (std::size_t i = 0; i < f.layout.size(); ++i) {
      const Vec3 c = f.cam.to_camera(fk.translation[*f.mesh.joint_index(f.layout[i])]);
      const double u = f.cam.fx * c.x() / c.z() + f.cam.cx, v = f.cam.fy * c.y() / c.z() + f.cam.cy;
      const double cw = kp[i].confidence * (kp[i].synthetic ? 0.5 : 1.0);
      oracle += cw * (std::abs(u - kp[i].x) + std::abs(v - kp[i].y));
    }
    oracle /= static_cast<double>(f.layout.size());
    const FittingLoss l = fitting_loss(f.mesh, p, f.layout, kp, p, nullptr, f.cam, w);
    EXPECT_NEAR(l.breakdown.find("kpt")->raw, oracle, 1e-9);
    EXPECT_GT(oracle, 0.0);
  }
}

TEST(FittingLoss, FaceTermZeroWhenTurnedAway) {
  Fixture f;
  const PoseParams p = turned(f.mesh, std::numbers::pi);
  auto face = face_of(f.mesh, p);
  for (auto& v : face) v += Vec3(0.05, -0.02, 0.03);
  const FittingLoss l = fitting_loss(f.mesh, p, f.layout, project_keypoints(f.mesh, p, f.layout, f.cam), p, &face, f.cam);
  EXPECT_FALSE(l.face_visible);
  EXPECT_EQ(face_contribution(l), 0.0);
}

TEST(FittingLoss, FaceGateSweep) {
  Fixture f;
  int visible = 0, hidden = 0;
  for (int step = -180; step <= 180; ++step) {
    const double yaw = step * std::numbers::pi / 360.0;
    const PoseParams p = turned(f.mesh, yaw);
    const auto posed = skin_vertices(f.mesh, p);
    const double angle = face_view_angle_deg(posed, f.mesh.face_center_ids, f.mesh.eye_ids, f.cam);
    auto face = face_of(f.mesh, p);
    for (auto& v : face) v.x() += 0.02;
    const auto kp = project_keypoints(f.mesh, p, f.layout, f.cam);
    const FittingLoss l = fitting_loss(f.mesh, p, f.layout, kp, p, &face, f.cam);
    if (angle <= kFaceVisibleAngleDeg) {
      EXPECT_EQ(face_contribution(l), 0.0) << "angle " << angle;
      ++hidden;
    } else if (angle > kFaceVisibleAngleDeg + 1e-6) {
      EXPECT_GT(face_contribution(l), 0.0) << "angle " << angle;
      ++visible;
    }
  }
  EXPECT_GT(visible, 20);
  EXPECT_GT(hidden, 20);
}

TEST(FittingLoss, FaceGateAtThresholdYaw) {
  Fixture f;
  // bisect the yaw at which the view angle crosses the threshold
  double lo = 0.0, hi = std::numbers::pi / 2;
  const auto angle_at = [&](double yaw) {
    return face_view_angle_deg(skin_vertices(f.mesh, turned(f.mesh, yaw)), f.mesh.face_center_ids, f.mesh.eye_ids,
                               f.cam);
  };
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (angle_at(mid) > kFaceVisibleAngleDeg ? lo : hi) = mid;
  }
  const PoseParams p = turned(f.mesh, hi);
  EXPECT_NEAR(angle_at(hi), kFaceVisibleAngleDeg, 1e-9);
  auto face = face_of(f.mesh, p);
  for (auto& v : face) v.x() += 0.02;
  const FittingLoss l = fitting_loss(f.mesh, p, f.layout, project_keypoints(f.mesh, p, f.layout, f.cam), p, &face, f.cam);
  EXPECT_FALSE(l.face_applied);
  EXPECT_EQ(face_contribution(l), 0.0);
}

namespace {

// A frame where every fitting term is nonzero.
struct Busy {
  Fixture f;
  PoseParams init, pose;
  std::vector<Keypoint> kp;
  std::vector<Vec3> face;

  Busy() {
    std::mt19937_64 rng(11);
    init = facing_pose(f.mesh);
    pose = init;
    for (auto& r : pose.joint_rotations) r += random_vec3(rng, -0.05, 0.05);
    pose.shape = Eigen::VectorXd::Constant(pose.shape.size(), 0.3);
    for (auto& o : pose.joint_offsets) o = random_vec3(rng, -0.01, 0.01);
    kp = project_keypoints(f.mesh, init, f.layout, f.cam);
    face = face_of(f.mesh, init);
    for (auto& v : face) v += random_vec3(rng, -0.01, 0.01);
  }

  FittingLoss eval(const LossWeights& w) const { return fitting_loss(f.mesh, pose, f.layout, kp, init, &face, f.cam, w); }
};

}  // namespace

TEST(FittingLoss, DefaultCoefficients) {
  const Busy b;
  const FittingLoss l = b.eval({});
  ASSERT_TRUE(l.face_applied);
  const std::vector<std::pair<std::string, double>> expected = {
      {"kpt", 1.0}, {"init", 0.1}, {"vertex", 10.0}, {"lap", 10000.0}, {"edge", 1.0},
      {"shape", 0.01}, {"jo", 100.0}, {"sym", 1.0}};
  double sum = 0.0;
  for (const auto& [name, weight] : expected) {
    const LossTerm* t = l.breakdown.find(name);
    ASSERT_NE(t, nullptr) << name;
    EXPECT_GT(t->raw, 0.0) << name;
    EXPECT_EQ(t->weight, weight) << name;
    EXPECT_NEAR(t->weighted, weight * t->raw, 1e-12 * std::abs(t->weighted)) << name;
    sum += t->weighted;
  }
  EXPECT_NEAR(l.total(), sum, 1e-12 * sum);
}

TEST(FittingLoss, WeightIsolationAndLinearity) {
  const Busy b;
  const FittingLoss base = b.eval({});
  const std::vector<std::pair<std::string, double LossWeights::*>> fields = {
      {"kpt", &LossWeights::w_kpt},    {"init", &LossWeights::w_init},   {"vertex", &LossWeights::w_vertex},
      {"lap", &LossWeights::w_lap},    {"edge", &LossWeights::w_edge},   {"shape", &LossWeights::w_shape},
      {"jo", &LossWeights::w_jo},      {"sym", &LossWeights::w_sym}};
  for (const auto& [name, field] : fields) {
    LossWeights only{};
    for (const auto& [other, of] : fields) {
      if (of != field) only.*of = 0.0;
    }
    const FittingLoss iso = b.eval(only);
    EXPECT_NEAR(iso.total(), base.breakdown.contribution(name), 1e-12 * std::abs(iso.total()) + 1e-300) << name;

    LossWeights doubled{};
    doubled.*field *= 2.0;
    const FittingLoss d = b.eval(doubled);
    EXPECT_NEAR(d.breakdown.contribution(name), 2.0 * base.breakdown.contribution(name),
                1e-12 * base.breakdown.contribution(name))
        << name;
    EXPECT_NEAR(d.total() - base.total(), base.breakdown.contribution(name), 1e-9 * base.total()) << name;
  }
}

TEST(FittingLoss, FaceWeightScalesAllFaceTerms) {
  const Busy b;
  LossWeights w;
  w.w_face = 0.0;
  const FittingLoss off = b.eval(w);
  EXPECT_EQ(face_contribution(off), 0.0);
  w.w_face = 3.0;
  const FittingLoss on = b.eval(w);
  EXPECT_NEAR(face_contribution(on), 3.0 * face_contribution(b.eval({})), 1e-9 * face_contribution(on));
}

TEST(FittingLoss, Errors) {
  Fixture f;
  const PoseParams p = facing_pose(f.mesh);
  const auto kp = project_keypoints(f.mesh, p, f.layout, f.cam);
  SkinnedMesh bare = f.mesh;
  bare.joint_mirror.clear();
  try {
    fitting_loss(bare, p, f.layout, kp, p, nullptr, f.cam);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Configuration);
  }
  LossWeights w;
  w.w_sym = 0.0;
  EXPECT_NO_THROW(fitting_loss(bare, p, f.layout, kp, p, nullptr, f.cam, w));

  const std::vector<Keypoint> short_kp(kp.begin(), kp.end() - 1);
  EXPECT_THROW(fitting_loss(f.mesh, p, f.layout, short_kp, p, nullptr, f.cam), Error);
  const std::vector<Vec3> small_face(3, Vec3::Zero());
  EXPECT_THROW(fitting_loss(f.mesh, p, f.layout, kp, p, &small_face, f.cam), Error);
}

TEST(FittingLoss, NonNegativeAndFiniteOnRandomPoses) {
  Fixture f;
  std::mt19937_64 rng(5);
  const PoseParams init = facing_pose(f.mesh);
  const auto kp = project_keypoints(f.mesh, init, f.layout, f.cam);
  for (int i = 0; i < 20; ++i) {
    PoseParams p = init;
    for (auto& r : p.joint_rotations) r += random_vec3(rng, -0.3, 0.3);
    const FittingLoss l = fitting_loss(f.mesh, p, f.layout, kp, init, nullptr, f.cam);
    EXPECT_TRUE(std::isfinite(l.total()));
    EXPECT_GE(l.total(), 0.0);
  }
}

TEST(Jacobians, JointPositionMatchesFiniteDifference) {
  Fixture f;
  std::mt19937_64 rng(8);
  PoseParams p = facing_pose(f.mesh);
  for (auto& r : p.joint_rotations) r += random_vec3(rng, -0.4, 0.4);
  for (auto& o : p.joint_offsets) o = random_vec3(rng, -0.05, 0.05);
  const Eigen::VectorXd x = p.to_vector();
  for (std::uint32_t j : {0u, 4u, 9u, 15u, 26u}) {
    const Eigen::MatrixXd J = joint_position_jacobian(f.mesh, p, j);
    ASSERT_EQ(J.cols(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double eps = 1e-6;
      PoseParams a = p, b = p;
      Eigen::VectorXd xa = x, xb = x;
      xa[i] += eps;
      xb[i] -= eps;
      a.assign_vector(xa);
      b.assign_vector(xb);
      const Vec3 fd = (forward_kinematics(f.mesh, a).translation[j] - forward_kinematics(f.mesh, b).translation[j]) /
                      (2 * eps);
      EXPECT_LT((J.col(i) - fd).norm(), 1e-7) << "joint " << j << " param " << i;
    }
  }
}

TEST(Jacobians, VertexPositionMatchesFiniteDifference) {
  Fixture f;
  std::mt19937_64 rng(9);
  PoseParams p = facing_pose(f.mesh);
  for (auto& r : p.joint_rotations) r += random_vec3(rng, -0.4, 0.4);
  p.shape = Eigen::VectorXd::Constant(p.shape.size(), 0.2);
  p.expression = Eigen::VectorXd::Constant(p.expression.size(), 0.5);
  const Eigen::VectorXd x = p.to_vector();
  for (int trial = 0; trial < 6; ++trial) {
    const auto v = static_cast<std::uint32_t>(rng() % f.mesh.vertex_count());
    const Eigen::MatrixXd J = vertex_position_jacobian(f.mesh, p, v);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double eps = 1e-6;
      PoseParams a = p, b = p;
      Eigen::VectorXd xa = x, xb = x;
      xa[i] += eps;
      xb[i] -= eps;
      a.assign_vector(xa);
      b.assign_vector(xb);
      const Vec3 fd = (skin_vertices(f.mesh, a)[v] - skin_vertices(f.mesh, b)[v]) / (2 * eps);
      EXPECT_LT((J.col(i) - fd).norm(), 1e-7) << "vertex " << v << " param " << i;
    }
  }
}

TEST(Jacobians, VertexGradientIsTransposeProduct) {
  Fixture f;
  std::mt19937_64 rng(10);
  const PoseParams p = turned(f.mesh, 0.3);
  std::vector<Vec3> d(f.mesh.vertex_count(), Vec3::Zero());
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(p.to_vector().size());
  for (int i = 0; i < 5; ++i) {
    const auto v = static_cast<std::uint32_t>(rng() % d.size());
    const Vec3 g = random_vec3(rng, -1.0, 1.0);
    d[v] += g;
    expected += vertex_position_jacobian(f.mesh, p, v).transpose() * g;
  }
  EXPECT_LT((pose_gradient_from_vertices(f.mesh, p, d) - expected).norm(), 1e-12);
}

TEST(FitFrame, ZeroResidualFixedPoint) {
  Fixture f;
  const PoseParams p = turned(f.mesh, 0.2);
  const auto kp = project_keypoints(f.mesh, p, f.layout, f.cam);
  const FitResult r = fit_frame(f.mesh, p, f.layout, kp, nullptr, f.cam);
  EXPECT_LT((r.pose.to_vector() - p.to_vector()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_TRUE(r.report.converged);
}

TEST(FitFrame, RecoversPerturbedPose) {
  Fixture f;
  std::mt19937_64 rng(21);
  const PoseParams truth = turned(f.mesh, 0.4);
  const auto kp = project_keypoints(f.mesh, truth, f.layout, f.cam);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    PoseParams init = truth;
    for (std::uint32_t j = 0; j < f.mesh.joint_count(); ++j) {
      if (is_leaf(f.mesh, j)) continue;
      const Quat q = axis_angle_to_quat(init.joint_rotations[j]) *
                     axis_angle_to_quat(random_vec3(rng, -1.0, 1.0).normalized() * uniform(rng, 0.0, 0.1));
      init.joint_rotations[j] = quat_to_axis_angle(q);
    }
    FitOptions o;
    o.optimize_shape = false;
    o.optimize_offsets = false;
    const FitResult r = fit_frame(f.mesh, init, f.layout, kp, nullptr, f.cam, o);
    for (std::uint32_t j = 0; j < f.mesh.joint_count(); ++j) {
      if (!is_leaf(f.mesh, j)) worst = std::max(worst, rotation_gap(r.pose.joint_rotations[j], truth.joint_rotations[j]));
    }
    const auto& h = r.report.loss_history;
    ASSERT_GE(h.size(), 2u);
    for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LT(h[i], h[i - 1]);
  }
  EXPECT_LE(worst, 1e-2);
}

TEST(FitFrame, DefaultOptionsFitKeypoints) {
  Fixture f;
  const PoseParams truth = turned(f.mesh, 0.3);
  const auto kp = project_keypoints(f.mesh, truth, f.layout, f.cam);
  const FitResult r = fit_frame(f.mesh, facing_pose(f.mesh), f.layout, kp, nullptr, f.cam);
  EXPECT_LT(r.report.final_loss.breakdown.find("kpt")->raw, 1e-2);
  EXPECT_LT(r.report.final_loss.total(), 1e-3 * r.report.initial_loss);
}

TEST(FitFrame, FaceTargetPullsExpression) {
  Fixture f;
  PoseParams truth = facing_pose(f.mesh);
  truth.expression = Eigen::VectorXd::Constant(truth.expression.size(), 0.6);
  const auto face = face_of(f.mesh, truth);
  const auto kp = project_keypoints(f.mesh, truth, f.layout, f.cam);
  FitOptions o;
  o.optimize_shape = false;
  o.optimize_offsets = false;
  const FitResult r = fit_frame(f.mesh, facing_pose(f.mesh), f.layout, kp, &face, f.cam, o);
  EXPECT_TRUE(r.report.final_loss.face_applied);
  EXPECT_NEAR(r.pose.expression[0], 0.6, 0.05);
}

TEST(FitFrame, StopsOnIterationCap) {
  Fixture f;
  const PoseParams truth = turned(f.mesh, 0.5);
  const auto kp = project_keypoints(f.mesh, truth, f.layout, f.cam);
  FitOptions o;
  o.max_iterations = 2;
  const FitResult r = fit_frame(f.mesh, facing_pose(f.mesh), f.layout, kp, nullptr, f.cam, o);
  EXPECT_LE(r.report.iterations, 2);
  EXPECT_FALSE(r.report.stop_reason.empty());
}

TEST(FitFrame, FrozenBlocksStayPut) {
  Fixture f;
  const PoseParams truth = turned(f.mesh, 0.3);
  const auto kp = project_keypoints(f.mesh, truth, f.layout, f.cam);
  FitOptions o;
  o.optimize_translation = false;
  o.optimize_shape = false;
  o.optimize_offsets = false;
  const PoseParams init = facing_pose(f.mesh);
  const FitResult r = fit_frame(f.mesh, init, f.layout, kp, nullptr, f.cam, o);
  EXPECT_EQ(r.pose.root_translation, init.root_translation);
  EXPECT_EQ(r.pose.shape, init.shape);
  for (std::size_t j = 0; j < init.joint_offsets.size(); ++j) EXPECT_EQ(r.pose.joint_offsets[j], init.joint_offsets[j]);
}

TEST(FitFrame, NonFiniteInitialLoss) {
  Fixture f;
  const PoseParams p = facing_pose(f.mesh);
  auto kp = project_keypoints(f.mesh, p, f.layout, f.cam);
  kp[0].x = std::numeric_limits<double>::quiet_NaN();
  try {
    fit_frame(f.mesh, p, f.layout, kp, nullptr, f.cam);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
}

TEST(FitFrame, Deterministic) {
  Fixture f;
  const auto kp = project_keypoints(f.mesh, turned(f.mesh, 0.3), f.layout, f.cam);
  const FitResult a = fit_frame(f.mesh, facing_pose(f.mesh), f.layout, kp, nullptr, f.cam);
  const FitResult b = fit_frame(f.mesh, facing_pose(f.mesh), f.layout, kp, nullptr, f.cam);
  EXPECT_EQ(a.pose.to_vector(), b.pose.to_vector());
  EXPECT_EQ(a.report.loss_history, b.report.loss_history);
}

namespace {

KeypointSequence turntable(const Fixture& f, int frames, double step, std::vector<double>* yaws = nullptr) {
  KeypointSequence seq;
  seq.layout = f.layout;
  for (int i = 0; i < frames; ++i) {
    const double yaw = step * i;
    if (yaws) yaws->push_back(yaw);
    seq.frames.push_back(project_keypoints(f.mesh, turned(f.mesh, yaw), f.layout, f.cam));
  }
  return seq;
}

double fitted_yaw(const SkinnedMesh& m, const PoseParams& p) {
  const Quat facing = axis_angle_to_quat(facing_pose(m).joint_rotations[0]);
  return quat_to_axis_angle(axis_angle_to_quat(p.joint_rotations[0]) * facing.conjugate()).y();
}

}  // namespace

TEST(FitSequence, StaticSubject) {
  Fixture f;
  KeypointSequence seq;
  seq.layout = f.layout;
  seq.frames.assign(4, project_keypoints(f.mesh, turned(f.mesh, 0.25), f.layout, f.cam));
  const std::vector<Camera> cams = {f.cam};
  const SequenceFit r = fit_sequence(f.mesh, seq, cams, {}, facing_pose(f.mesh));
  for (std::size_t i = 1; i < r.poses.size(); ++i) {
    EXPECT_LT((r.poses[i].to_vector() - r.poses[0].to_vector()).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(FitSequence, TurntableIsMonotone) {
  Fixture f;
  std::vector<double> yaws;
  const KeypointSequence seq = turntable(f, 8, 0.08, &yaws);
  const std::vector<Camera> cams = {f.cam};
  const SequenceFit r = fit_sequence(f.mesh, seq, cams, {}, facing_pose(f.mesh));
  double prev = -1e9;
  for (std::size_t i = 0; i < r.poses.size(); ++i) {
    const double y = fitted_yaw(f.mesh, r.poses[i]);
    EXPECT_NEAR(y, yaws[i], 5e-2);
    EXPECT_GT(y, prev);
    prev = y;
  }
}

TEST(FitSequence, WarmStartSavesIterations) {
  Fixture f;
  const KeypointSequence seq = turntable(f, 6, 0.08);
  const std::vector<Camera> cams = {f.cam};
  SequenceOptions warm, cold;
  cold.warm_start = false;
  const SequenceFit a = fit_sequence(f.mesh, seq, cams, warm, facing_pose(f.mesh));
  const SequenceFit b = fit_sequence(f.mesh, seq, cams, cold, facing_pose(f.mesh));
  EXPECT_LE(a.total_iterations, b.total_iterations);
}

TEST(FitSequence, FailedFrameIsInterpolated) {
  Fixture f;
  KeypointSequence seq = turntable(f, 5, 0.08);
  seq.frames[2][0].x = std::numeric_limits<double>::quiet_NaN();
  const std::vector<Camera> cams = {f.cam};
  const SequenceFit r = fit_sequence(f.mesh, seq, cams, {}, facing_pose(f.mesh));
  ASSERT_EQ(r.failed.size(), 5u);
  EXPECT_TRUE(r.failed[2]);
  EXPECT_FALSE(r.errors[2].empty());
  for (std::size_t i : {0u, 1u, 3u, 4u}) EXPECT_FALSE(r.failed[i]);
  const Eigen::VectorXd mid = 0.5 * (r.poses[1].to_vector() + r.poses[3].to_vector());
  EXPECT_LT((r.poses[2].to_vector() - mid).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitSequence, Errors) {
  Fixture f;
  const std::vector<Camera> cams = {f.cam};
  KeypointSequence empty;
  empty.layout = f.layout;
  EXPECT_THROW(fit_sequence(f.mesh, empty, cams), Error);
  const KeypointSequence seq = turntable(f, 3, 0.1);
  const std::vector<Camera> two = {f.cam, f.cam};
  EXPECT_THROW(fit_sequence(f.mesh, seq, two), Error);
}
