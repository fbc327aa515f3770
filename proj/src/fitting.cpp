#include "meshsplat/fitting.hpp"

#include "meshsplat/body_model.hpp"
#include "meshsplat/error.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <set>

namespace meshsplat {

namespace {

// IRLS floors on |r| for the L1 terms, in residual units.
constexpr double kKeypointFloor = 1e-3;
constexpr double kInitFloor = 1e-4;
constexpr double kFaceFloor = 1e-6;
constexpr int kMaxHalvings = 30;
constexpr int kMaxDampingRetries = 8;

enum Term { kKpt, kInit, kVertex, kLap, kEdge, kShape, kJo, kSym, kTermCount };
const char* const kTermNames[kTermCount] = {"kpt", "init", "vertex", "lap", "edge", "shape", "jo", "sym"};

double term_weight(Term t, const LossWeights& w) {
  switch (t) {
    case kKpt: return w.w_kpt;
    case kInit: return w.w_init;
    case kVertex: return w.w_face * w.w_vertex;
    case kLap: return w.w_face * w.w_lap;
    case kEdge: return w.w_face * w.w_edge;
    case kShape: return w.w_shape;
    case kJo: return w.w_jo;
    case kSym: return w.w_sym;
    default: return 0.0;
  }
}

struct Layout {
  Eigen::Index rot = 0, trans = 0, shape = 0, offsets = 0, expression = 0, total = 0;
  std::size_t joints = 0, shapes = 0, expressions = 0;

  explicit Layout(const PoseParams& p) {
    joints = p.joint_rotations.size();
    shapes = static_cast<std::size_t>(p.shape.size());
    expressions = static_cast<std::size_t>(p.expression.size());
    rot = 0;
    trans = static_cast<Eigen::Index>(3 * joints);
    shape = trans + 3;
    offsets = shape + static_cast<Eigen::Index>(shapes);
    expression = offsets + static_cast<Eigen::Index>(3 * joints);
    total = expression + static_cast<Eigen::Index>(expressions);
  }
};

using RowJ = Eigen::Matrix<double, 3, Eigen::Dynamic>;

// Posed quantities and what the Jacobians need.
struct Kinematics {
  JointTransforms fk;
  std::vector<Vec3> rest_vertices;
  std::vector<Vec3> posed;
  std::vector<Mat3> rot_axis;    // R_world(k) * Jr(omega_k)
  std::vector<Mat3> parent_rot;  // world rotation of the parent (identity for the root)
  std::vector<std::vector<std::uint32_t>> chain;  // ancestors-or-self, root first
};

Kinematics evaluate_kinematics(const SkinnedMesh& mesh, const PoseParams& pose) {
  Kinematics k;
  k.fk = forward_kinematics(mesh, pose);
  k.rest_vertices = shaped_vertices(mesh, pose);
  k.posed = skin_vertices(mesh, k.rest_vertices, k.fk);
  const std::size_t nj = mesh.joint_count();
  k.rot_axis.resize(nj);
  k.parent_rot.resize(nj);
  k.chain.resize(nj);
  for (std::uint32_t j : mesh.joint_order()) {
    k.rot_axis[j] = k.fk.rotation_matrix[j] * right_jacobian_so3(pose.joint_rotations[j]);
    const std::uint32_t p = mesh.joint_parents[j];
    k.parent_rot[j] = p == kRootParent ? Mat3::Identity() : k.fk.rotation_matrix[p];
    if (p != kRootParent) k.chain[j] = k.chain[p];
    k.chain[j].push_back(j);
  }
  return k;
}

// d(joint position)/d(params), 3 x P.
RowJ joint_jacobian(const Kinematics& k, const Layout& lay, std::uint32_t d) {
  RowJ J = RowJ::Zero(3, lay.total);
  const Vec3& pd = k.fk.translation[d];
  for (std::uint32_t a : k.chain[d]) {
    J.block<3, 3>(0, lay.rot + 3 * a) = -skew(pd - k.fk.translation[a]) * k.rot_axis[a];
    J.block<3, 3>(0, lay.offsets + 3 * a) =
        a == d ? k.parent_rot[a] : Mat3(k.parent_rot[a] - k.fk.rotation_matrix[a]);
  }
  J.block<3, 3>(0, lay.trans) = Mat3::Identity();
  return J;
}

// d(posed vertex)/d(params), 3 x P.
RowJ vertex_jacobian(const SkinnedMesh& mesh, const Kinematics& k, const Layout& lay, std::uint32_t v) {
  RowJ J = RowJ::Zero(3, lay.total);
  const Eigen::Index row = static_cast<Eigen::Index>(v);
  const Vec3& rest = k.rest_vertices[v];
  Mat3 basis_map = Mat3::Zero();
  for (Eigen::Index j = 0; j < mesh.skin_weights.cols(); ++j) {
    const double w = mesh.skin_weights(row, j);
    if (w == 0.0) continue;
    const auto ju = static_cast<std::uint32_t>(j);
    const Vec3 aj = k.fk.skin(ju, rest);
    for (std::uint32_t a : k.chain[ju]) {
      J.block<3, 3>(0, lay.rot + 3 * a) += -w * skew(aj - k.fk.translation[a]) * k.rot_axis[a];
      J.block<3, 3>(0, lay.offsets + 3 * a) += w * (k.parent_rot[a] - k.fk.rotation_matrix[a]);
    }
    basis_map += w * k.fk.rotation_matrix[ju];
  }
  J.block<3, 3>(0, lay.trans) = Mat3::Identity();
  const Eigen::Index r3 = static_cast<Eigen::Index>(3 * v);
  if (lay.shapes > 0 && mesh.shape_basis.cols() > 0) {
    J.block(0, lay.shape, 3, static_cast<Eigen::Index>(lay.shapes)) =
        basis_map * mesh.shape_basis.block(r3, 0, 3, static_cast<Eigen::Index>(lay.shapes));
  }
  if (lay.expressions > 0 && mesh.expression_basis.cols() > 0) {
    J.block(0, lay.expression, 3, static_cast<Eigen::Index>(lay.expressions)) =
        basis_map * mesh.expression_basis.block(r3, 0, 3, static_cast<Eigen::Index>(lay.expressions));
  }
  return J;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& world) {
  const Vec3 c = cam.to_camera(world);
  Eigen::Matrix<double, 2, 3> d;
  d << cam.fx / c.z(), 0.0, -cam.fx * c.x() / (c.z() * c.z()),
       0.0, cam.fy / c.z(), -cam.fy * c.y() / (c.z() * c.z());
  return d * cam.rotation.toRotationMatrix();
}

struct Residuals {
  std::vector<double> r;
  std::vector<double> coef;   // raw per-row coefficient (term weight excluded)
  std::vector<double> floor;  // > 0 marks an L1 row
  std::vector<int> term;
  Eigen::MatrixXd J;          // filled only when requested
  bool face_visible = false;
  bool face_applied = false;

  void add(int t, double value, double c, double fl) {
    r.push_back(value);
    coef.push_back(c);
    floor.push_back(fl);
    term.push_back(t);
  }
};

struct Problem {
  const SkinnedMesh& mesh;
  std::span<const Keypoint> keypoints;
  std::vector<std::optional<std::uint32_t>> binding;
  const PoseParams& init_pose;
  const std::vector<Vec3>* face_target;
  const Camera& cam;
  LossWeights w;
  FacePatch patch;
  std::vector<Vec3> target_lap;
  std::vector<double> target_edge;
};

Problem make_problem(const SkinnedMesh& mesh, std::span<const std::string> layout, std::span<const Keypoint> kps,
                     const PoseParams& init_pose, const std::vector<Vec3>* face_target, const Camera& cam,
                     const LossWeights& w) {
  if (layout.size() != kps.size()) {
    throw Error(ErrorCode::DimensionMismatch, "keypoint count does not match the layout");
  }
  if (w.w_sym > 0.0 && mesh.joint_mirror.size() != mesh.joint_count()) {
    throw Error(ErrorCode::Configuration, "symmetry term needs the mesh's left/right joint correspondence");
  }
  Problem p{mesh, kps, bind_keypoints(mesh, layout), init_pose, face_target, cam, w, {}, {}, {}};
  if (face_target) {
    if (face_target->size() != mesh.face_vertex_ids.size()) {
      throw Error(ErrorCode::DimensionMismatch, "face target has " + std::to_string(face_target->size()) +
                                                    " vertices, the mesh face region has " +
                                                    std::to_string(mesh.face_vertex_ids.size()));
    }
    p.patch = build_face_patch(mesh);
    p.target_lap = uniform_laplacian(p.patch, *face_target);
    for (const auto& e : p.patch.edges) p.target_edge.push_back(((*face_target)[e[0]] - (*face_target)[e[1]]).norm());
  }
  return p;
}

Residuals build_residuals(const Problem& pb, const PoseParams& pose, bool jacobian) {
  const SkinnedMesh& mesh = pb.mesh;
  const Layout lay(pose);
  const Kinematics k = evaluate_kinematics(mesh, pose);
  Residuals res;
  std::vector<Eigen::RowVectorXd> jrows;
  auto push_row = [&](const Eigen::RowVectorXd& row) {
    if (jacobian) jrows.push_back(row);
  };

  // keypoints
  {
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < pb.keypoints.size(); ++i) {
      const Keypoint& kp = pb.keypoints[i];
      if (!pb.binding[i] || !(kp.confidence > 0.0)) continue;
      if (!project_point(pb.cam, k.fk.translation[*pb.binding[i]]).valid) continue;
      valid.push_back(i);
    }
    const double n = static_cast<double>(valid.size());
    for (std::size_t i : valid) {
      const Keypoint& kp = pb.keypoints[i];
      const std::uint32_t j = *pb.binding[i];
      const ProjectedPoint pp = project_point(pb.cam, k.fk.translation[j]);
      const double c = kp.confidence * (kp.synthetic ? kSyntheticKeypointWeight : 1.0) / n;
      res.add(kKpt, pp.pixel.x() - kp.x, c, kKeypointFloor);
      res.add(kKpt, pp.pixel.y() - kp.y, c, kKeypointFloor);
      if (jacobian) {
        const Eigen::MatrixXd jp = projection_jacobian(pb.cam, k.fk.translation[j]) * joint_jacobian(k, lay, j);
        push_row(jp.row(0));
        push_row(jp.row(1));
      }
    }
  }

  // init prior
  {
    const Eigen::VectorXd x = pose.to_vector(), x0 = pb.init_pose.to_vector();
    if (x.size() != x0.size()) throw Error(ErrorCode::DimensionMismatch, "init pose dimensions differ from pose");
    const double c = x.size() > 0 ? 1.0 / static_cast<double>(x.size()) : 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      res.add(kInit, x[i] - x0[i], c, kInitFloor);
      if (jacobian) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(lay.total);
        row[i] = 1.0;
        push_row(row);
      }
    }
  }

  // face
  res.face_visible = !mesh.face_center_ids.empty() && !mesh.eye_ids.empty() &&
                     face_visibility(k.posed, mesh.face_center_ids, mesh.eye_ids, pb.cam);
  if (pb.face_target && res.face_visible && !pb.patch.vertices.empty()) {
    res.face_applied = true;
    const FacePatch& patch = pb.patch;
    const std::size_t nv = patch.vertices.size();
    std::vector<Vec3> model(nv);
    for (std::size_t i = 0; i < nv; ++i) model[i] = k.posed[patch.vertices[i]];
    std::vector<RowJ> vj;
    if (jacobian) {
      for (std::uint32_t v : patch.vertices) vj.push_back(vertex_jacobian(mesh, k, lay, v));
    }
    const double cv = 1.0 / static_cast<double>(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      for (int d = 0; d < 3; ++d) {
        res.add(kVertex, model[i][d] - (*pb.face_target)[i][d], cv, kFaceFloor);
        if (jacobian) push_row(vj[i].row(d));
      }
    }
    const std::vector<Vec3> lap = uniform_laplacian(patch, model);
    for (std::size_t i = 0; i < nv; ++i) {
      RowJ lj;
      if (jacobian) {
        lj = vj[i];
        const auto& nb = patch.neighbors[i];
        if (nb.empty()) {
          lj.setZero();
        } else {
          for (std::uint32_t m : nb) lj -= vj[m] / static_cast<double>(nb.size());
        }
      }
      for (int d = 0; d < 3; ++d) {
        res.add(kLap, lap[i][d] - pb.target_lap[i][d], cv, 0.0);
        if (jacobian) push_row(lj.row(d));
      }
    }
    const double ce = patch.edges.empty() ? 0.0 : 1.0 / static_cast<double>(patch.edges.size());
    for (std::size_t e = 0; e < patch.edges.size(); ++e) {
      const auto [a, b] = patch.edges[e];
      const Vec3 delta = model[a] - model[b];
      const double len = delta.norm();
      res.add(kEdge, len - pb.target_edge[e], ce, kFaceFloor);
      if (jacobian) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(lay.total);
        if (len > 0.0) row = (delta / len).transpose() * (vj[a] - vj[b]);
        push_row(row);
      }
    }
  }

  // regularizers
  for (Eigen::Index i = 0; i < pose.shape.size(); ++i) {
    res.add(kShape, pose.shape[i], 1.0, 0.0);
    if (jacobian) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(lay.total);
      row[lay.shape + i] = 1.0;
      push_row(row);
    }
  }
  for (std::size_t j = 0; j < lay.joints; ++j) {
    for (int d = 0; d < 3; ++d) {
      res.add(kJo, pose.joint_offsets[j][d], 1.0, 0.0);
      if (jacobian) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(lay.total);
        row[lay.offsets + static_cast<Eigen::Index>(3 * j) + d] = 1.0;
        push_row(row);
      }
    }
  }
  if (mesh.joint_mirror.size() == lay.joints) {
    for (std::size_t j = 0; j < lay.joints; ++j) {
      const std::uint32_t m = mesh.joint_mirror[j];
      const Vec3 diff = pose.joint_offsets[j] - mirror_offset(pose.joint_offsets[m]);
      for (int d = 0; d < 3; ++d) {
        res.add(kSym, diff[d], 1.0, 0.0);
        if (jacobian) {
          Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(lay.total);
          row[lay.offsets + static_cast<Eigen::Index>(3 * j) + d] += 1.0;
          row[lay.offsets + static_cast<Eigen::Index>(3 * m) + d] -= d == 0 ? -1.0 : 1.0;
          push_row(row);
        }
      }
    }
  }

  if (jacobian) {
    res.J.resize(static_cast<Eigen::Index>(jrows.size()), lay.total);
    for (std::size_t i = 0; i < jrows.size(); ++i) res.J.row(static_cast<Eigen::Index>(i)) = jrows[i];
  }
  return res;
}

FittingLoss summarize(const Residuals& res, const LossWeights& w) {
  std::array<double, kTermCount> raw{};
  for (std::size_t i = 0; i < res.r.size(); ++i) {
    const double v = res.floor[i] > 0.0 ? std::abs(res.r[i]) : res.r[i] * res.r[i];
    raw[static_cast<std::size_t>(res.term[i])] += res.coef[i] * v;
  }
  FittingLoss out;
  out.face_visible = res.face_visible;
  out.face_applied = res.face_applied;
  for (int t = 0; t < kTermCount; ++t) {
    const double weight = term_weight(static_cast<Term>(t), w);
    const double value = raw[static_cast<std::size_t>(t)];
    const double weighted = weight == 0.0 ? 0.0 : weight * value;
    out.breakdown.terms.push_back({kTermNames[t], value, weight, weighted, true});
    out.breakdown.total += weighted;
  }
  return out;
}

std::vector<Eigen::Index> free_parameters(const PoseParams& pose, const FitOptions& opts) {
  const Layout lay(pose);
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < lay.total; ++i) {
    if (i >= lay.trans && i < lay.shape && !opts.optimize_translation) continue;
    if (i >= lay.shape && i < lay.offsets && !opts.optimize_shape) continue;
    if (i >= lay.offsets && i < lay.expression && !opts.optimize_offsets) continue;
    if (i >= lay.expression && !opts.optimize_expression) continue;
    out.push_back(i);
  }
  return out;
}

}  // namespace

Camera init_camera(int width, int height, double focal_factor) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "camera size must be positive");
  Camera c;
  c.width = width;
  c.height = height;
  c.fx = c.fy = focal_factor * static_cast<double>(std::max(width, height));
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  return c;
}

std::vector<std::optional<std::uint32_t>> bind_keypoints(const SkinnedMesh& mesh,
                                                         std::span<const std::string> layout) {
  std::vector<std::optional<std::uint32_t>> out(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto it = mesh.keypoint_joints.find(layout[i]);
    out[i] = mesh.joint_index(it != mesh.keypoint_joints.end() ? it->second : layout[i]);
  }
  return out;
}

FacePatch build_face_patch(const SkinnedMesh& mesh) {
  FacePatch p;
  p.vertices = mesh.face_vertex_ids;
  std::vector<std::int64_t> local(mesh.vertex_count(), -1);
  for (std::size_t i = 0; i < p.vertices.size(); ++i) {
    if (p.vertices[i] >= mesh.vertex_count()) throw Error(ErrorCode::IndexOutOfRange, "face vertex id out of range");
    local[p.vertices[i]] = static_cast<std::int64_t>(i);
  }
  std::set<std::array<std::uint32_t, 2>> edges;
  for (const Triangle& t : mesh.triangles) {
    if (local[t[0]] < 0 || local[t[1]] < 0 || local[t[2]] < 0) continue;
    for (int e = 0; e < 3; ++e) {
      auto a = static_cast<std::uint32_t>(local[t[static_cast<std::size_t>(e)]]);
      auto b = static_cast<std::uint32_t>(local[t[static_cast<std::size_t>((e + 1) % 3)]]);
      if (a > b) std::swap(a, b);
      edges.insert({a, b});
    }
  }
  p.edges.assign(edges.begin(), edges.end());
  p.neighbors.resize(p.vertices.size());
  for (const auto& [a, b] : p.edges) {
    p.neighbors[a].push_back(b);
    p.neighbors[b].push_back(a);
  }
  return p;
}

std::vector<Vec3> uniform_laplacian(const FacePatch& patch, std::span<const Vec3> points) {
  std::vector<Vec3> out(patch.vertices.size(), Vec3::Zero());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& nb = patch.neighbors[i];
    if (nb.empty()) continue;
    Vec3 mean = Vec3::Zero();
    for (std::uint32_t m : nb) mean += points[m];
    out[i] = points[i] - mean / static_cast<double>(nb.size());
  }
  return out;
}

FittingLoss fitting_loss(const SkinnedMesh& mesh, const PoseParams& pose, std::span<const std::string> layout,
                         std::span<const Keypoint> keypoints, const PoseParams& init_pose,
                         const std::vector<Vec3>* face_target, const Camera& cam, const LossWeights& w) {
  const Problem pb = make_problem(mesh, layout, keypoints, init_pose, face_target, cam, w);
  return summarize(build_residuals(pb, pose, false), w);
}

FitResult fit_frame(const SkinnedMesh& mesh, const PoseParams& init_pose, std::span<const std::string> layout,
                    std::span<const Keypoint> keypoints, const std::vector<Vec3>* face_target, const Camera& cam,
                    const FitOptions& opts) {
  require_valid(validate_pose(mesh, init_pose), "initial pose");
  const Problem pb = make_problem(mesh, layout, keypoints, init_pose, face_target, cam, opts.weights);
  if (std::none_of(pb.binding.begin(), pb.binding.end(), [](const auto& b) { return b.has_value(); })) {
    throw Error(ErrorCode::Configuration, "no keypoint in the layout maps to a skeleton joint");
  }
  std::array<double, kTermCount> weights{};
  for (int t = 0; t < kTermCount; ++t) weights[static_cast<std::size_t>(t)] = term_weight(static_cast<Term>(t), opts.weights);

  PoseParams pose = init_pose;
  FitResult result;
  FitReport& rep = result.report;
  FittingLoss current = fitting_loss(mesh, pose, layout, keypoints, init_pose, face_target, cam, opts.weights);
  double loss = current.total();
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::NonFinite, "fitting loss is not finite at the initial pose");
  }
  rep.initial_loss = loss;
  rep.loss_history.push_back(loss);

  const std::vector<Eigen::Index> free = free_parameters(pose, opts);
  const auto nf = static_cast<Eigen::Index>(free.size());
  double damping = opts.initial_damping;
  rep.stop_reason = "max iterations";

  for (int it = 0; it < opts.max_iterations; ++it) {
    if (loss <= 0.0) {
      rep.converged = true;
      rep.stop_reason = "zero loss";
      break;
    }
    const Residuals res = build_residuals(pb, pose, true);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nf, nf);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(nf);
    Eigen::RowVectorXd jr(nf);
    for (std::size_t i = 0; i < res.r.size(); ++i) {
      const double a = weights[static_cast<std::size_t>(res.term[i])] * res.coef[i];
      if (a == 0.0) continue;
      // L1 rows are majorized by a r^2 / (2 max(|r0|, floor)); squared rows have curvature 2a
      const double wgt = res.floor[i] > 0.0 ? a / std::max(std::abs(res.r[i]), res.floor[i]) : 2.0 * a;
      for (Eigen::Index c = 0; c < nf; ++c) jr[c] = res.J(static_cast<Eigen::Index>(i), free[static_cast<std::size_t>(c)]);
      h.noalias() += wgt * jr.transpose() * jr;
      g.noalias() += wgt * res.r[i] * jr.transpose();
    }

    bool accepted = false;
    const Eigen::VectorXd x = pose.to_vector();
    for (int retry = 0; retry < kMaxDampingRetries && !accepted; ++retry) {
      Eigen::MatrixXd a = h;
      for (Eigen::Index c = 0; c < nf; ++c) a(c, c) += damping * (h(c, c) + 1e-9);
      const Eigen::VectorXd step = -a.ldlt().solve(g);
      if (!step.allFinite()) {
        damping *= 10.0;
        continue;
      }
      double t = 1.0;
      for (int half = 0; half < kMaxHalvings; ++half, t *= 0.5) {
        Eigen::VectorXd xn = x;
        for (Eigen::Index c = 0; c < nf; ++c) xn[free[static_cast<std::size_t>(c)]] += t * step[c];
        PoseParams trial = pose;
        trial.assign_vector(xn);
        FittingLoss trial_loss = fitting_loss(mesh, trial, layout, keypoints, init_pose, face_target, cam, opts.weights);
        if (std::isfinite(trial_loss.total()) && trial_loss.total() < loss) {
          pose = trial;
          loss = trial_loss.total();
          current = trial_loss;
          accepted = true;
          break;
        }
      }
      if (accepted) {
        damping = std::max(damping / 3.0, 1e-9);
      } else {
        damping *= 10.0;
      }
    }
    rep.iterations = it + 1;
    if (!accepted) {
      rep.converged = true;
      rep.stop_reason = "no descent step";
      break;
    }
    rep.loss_history.push_back(loss);
    if (loss > 10.0 * rep.initial_loss) throw Error(ErrorCode::Diverged, "fitting loss exceeded ten times its initial value");
    const auto n = rep.loss_history.size();
    if (n > static_cast<std::size_t>(opts.patience)) {
      const double before = rep.loss_history[n - 1 - static_cast<std::size_t>(opts.patience)];
      if (before - loss < opts.relative_tolerance * before) {
        rep.converged = true;
        rep.stop_reason = "relative improvement below tolerance";
        break;
      }
    }
  }
  rep.final_loss = current;
  result.pose = pose;
  return result;
}

SequenceFit fit_sequence(const SkinnedMesh& mesh, const KeypointSequence& seq, std::span<const Camera> cams,
                         const SequenceOptions& opts, const std::optional<PoseParams>& initial,
                         std::span<const std::optional<std::vector<Vec3>>> face_targets) {
  const std::size_t nf = seq.frames.size();
  if (nf == 0) throw Error(ErrorCode::InvalidArgument, "keypoint sequence is empty");
  if (cams.size() != 1 && cams.size() != nf) {
    throw Error(ErrorCode::DimensionMismatch, "need one camera or one per frame");
  }
  if (!face_targets.empty() && face_targets.size() != nf) {
    throw Error(ErrorCode::DimensionMismatch, "need one face target entry per frame");
  }
  const PoseParams start = initial ? *initial : PoseParams::neutral(mesh);
  SequenceFit out;
  out.poses.resize(nf);
  out.reports.resize(nf);
  out.failed.assign(nf, false);
  out.errors.resize(nf);

  std::optional<PoseParams> previous;
  for (std::size_t f = 0; f < nf; ++f) {
    const PoseParams& init = opts.warm_start && previous ? *previous : start;
    const Camera& cam = cams.size() == 1 ? cams[0] : cams[f];
    const std::vector<Vec3>* face = !face_targets.empty() && face_targets[f] ? &*face_targets[f] : nullptr;
    try {
      FitResult r = fit_frame(mesh, init, seq.layout, seq.frames[f], face, cam, opts.fit);
      out.poses[f] = r.pose;
      out.reports[f] = r.report;
      out.total_iterations += r.report.iterations;
      previous = r.pose;
    } catch (const Error& e) {
      out.failed[f] = true;
      out.errors[f] = e.what();
    }
  }

  std::vector<std::size_t> good;
  for (std::size_t f = 0; f < nf; ++f) {
    if (!out.failed[f]) good.push_back(f);
  }
  if (good.empty()) throw Error(ErrorCode::Diverged, "no frame of the sequence could be fitted: " + out.errors[0]);
  for (std::size_t f = 0; f < nf; ++f) {
    if (!out.failed[f]) continue;
    const auto next = std::lower_bound(good.begin(), good.end(), f);
    if (next == good.begin()) {
      out.poses[f] = out.poses[*next];
    } else if (next == good.end()) {
      out.poses[f] = out.poses[*(next - 1)];
    } else {
      const std::size_t a = *(next - 1), b = *next;
      const double t = static_cast<double>(f - a) / static_cast<double>(b - a);
      PoseParams p = out.poses[a];
      p.assign_vector((1.0 - t) * out.poses[a].to_vector() + t * out.poses[b].to_vector());
      out.poses[f] = p;
    }
  }
  return out;
}

Eigen::VectorXd pose_gradient_from_vertices(const SkinnedMesh& mesh, const PoseParams& pose,
                                            std::span<const Vec3> d_vertices) {
  if (d_vertices.size() != mesh.vertex_count()) {
    throw Error(ErrorCode::DimensionMismatch, "vertex gradient must have one entry per vertex");
  }
  const Layout lay(pose);
  const Kinematics k = evaluate_kinematics(mesh, pose);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(lay.total);
  for (std::size_t v = 0; v < d_vertices.size(); ++v) {
    if (d_vertices[v].isZero(0.0)) continue;
    g.noalias() += vertex_jacobian(mesh, k, lay, static_cast<std::uint32_t>(v)).transpose() * d_vertices[v];
  }
  return g;
}

Eigen::MatrixXd joint_position_jacobian(const SkinnedMesh& mesh, const PoseParams& pose, std::uint32_t joint) {
  if (joint >= mesh.joint_count()) throw Error(ErrorCode::IndexOutOfRange, "joint index out of range");
  return joint_jacobian(evaluate_kinematics(mesh, pose), Layout(pose), joint);
}

Eigen::MatrixXd vertex_position_jacobian(const SkinnedMesh& mesh, const PoseParams& pose, std::uint32_t vertex) {
  if (vertex >= mesh.vertex_count()) throw Error(ErrorCode::IndexOutOfRange, "vertex index out of range");
  return vertex_jacobian(mesh, evaluate_kinematics(mesh, pose), Layout(pose), vertex);
}

std::vector<Keypoint> project_keypoints(const SkinnedMesh& mesh, const PoseParams& pose,
                                        std::span<const std::string> layout, const Camera& cam) {
  const JointTransforms fk = forward_kinematics(mesh, pose);
  const auto binding = bind_keypoints(mesh, layout);
  std::vector<Keypoint> out(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (!binding[i]) continue;
    const ProjectedPoint p = project_point(cam, fk.translation[*binding[i]]);
    out[i] = Keypoint{p.pixel.x(), p.pixel.y(), p.valid ? 1.0 : 0.0, false};
  }
  return out;
}

}  // namespace meshsplat
