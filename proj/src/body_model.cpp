#include "meshsplat/body_model.hpp"

#include "meshsplat/error.hpp"

#include <cmath>

namespace meshsplat {

namespace {

constexpr double kMinTriangleArea = 1e-12;
// Guards the strict 135 degree comparison against last-ulp noise in acos/atan2.
constexpr double kAngleSlackDeg = 1e-9;

void require_pose_dims(const SkinnedMesh& mesh, const PoseParams& pose) {
  const std::size_t nj = mesh.joint_count();
  if (pose.joint_rotations.size() != nj || pose.joint_offsets.size() != nj) {
    throw Error(ErrorCode::DimensionMismatch, "pose has " + std::to_string(pose.joint_rotations.size()) +
                                                  " joint rotations, skeleton has " + std::to_string(nj) + " joints");
  }
  if (pose.shape.size() != 0 && static_cast<std::size_t>(pose.shape.size()) != mesh.shape_count()) {
    throw Error(ErrorCode::DimensionMismatch, "shape coefficient count does not match the mesh basis");
  }
  if (pose.expression.size() != 0 && static_cast<std::size_t>(pose.expression.size()) != mesh.expression_count()) {
    throw Error(ErrorCode::DimensionMismatch, "expression coefficient count does not match the mesh basis");
  }
}

Vec3 mean_of(std::span<const Vec3> points, std::span<const std::uint32_t> ids) {
  Vec3 sum = Vec3::Zero();
  for (std::uint32_t i : ids) sum += points[i];
  return sum / static_cast<double>(ids.size());
}

}  // namespace

JointTransforms forward_kinematics(const SkinnedMesh& mesh, const PoseParams& pose) {
  require_pose_dims(mesh, pose);
  const std::size_t nj = mesh.joint_count();
  JointTransforms out;
  out.rotation.resize(nj);
  out.rotation_matrix.resize(nj);
  out.translation.resize(nj);
  out.rest.resize(nj);
  for (std::size_t j = 0; j < nj; ++j) out.rest[j] = mesh.joint_rest[j] + pose.joint_offsets[j];

  for (std::uint32_t j : mesh.joint_order()) {
    const Quat local = axis_angle_to_quat(pose.joint_rotations[j]);
    const std::uint32_t parent = mesh.joint_parents[j];
    if (parent == kRootParent) {
      out.rotation[j] = local;
      out.translation[j] = out.rest[j] + pose.root_translation;
    } else {
      out.rotation[j] = (out.rotation[parent] * local).normalized();
      out.translation[j] = out.translation[parent] + out.rotation_matrix[parent] * (out.rest[j] - out.rest[parent]);
    }
    out.rotation_matrix[j] = out.rotation[j].toRotationMatrix();
  }
  return out;
}

std::vector<Vec3> shaped_vertices(const SkinnedMesh& mesh, const PoseParams& pose) {
  std::vector<Vec3> v = mesh.vertices;
  const auto apply = [&](const Eigen::MatrixXd& basis, const Eigen::VectorXd& coeffs) {
    if (basis.cols() == 0 || coeffs.size() == 0 || coeffs.isZero(0.0)) return;
    const Eigen::VectorXd d = basis * coeffs;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += d.segment<3>(static_cast<Eigen::Index>(3 * i));
  };
  apply(mesh.shape_basis, pose.shape);
  apply(mesh.expression_basis, pose.expression);
  return v;
}

std::vector<Vec3> skin_vertices(const SkinnedMesh& mesh, std::span<const Vec3> rest_vertices,
                                const JointTransforms& transforms) {
  const std::size_t nv = rest_vertices.size();
  const Eigen::Index nj = mesh.skin_weights.cols();
  std::vector<Vec3> out(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    Vec3 acc = Vec3::Zero();
    const Eigen::Index row = static_cast<Eigen::Index>(v);
    for (Eigen::Index j = 0; j < nj; ++j) {
      const double w = mesh.skin_weights(row, j);
      if (w == 0.0) continue;
      acc += w * transforms.skin(static_cast<std::size_t>(j), rest_vertices[v]);
    }
    out[v] = acc;
  }
  return out;
}

std::vector<Vec3> skin_vertices(const SkinnedMesh& mesh, const PoseParams& pose) {
  const JointTransforms t = forward_kinematics(mesh, pose);
  const std::vector<Vec3> rest = shaped_vertices(mesh, pose);
  return skin_vertices(mesh, rest, t);
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * (b - a).cross(c - a).norm(); }

bool triangle_basis(const Vec3& a, const Vec3& b, const Vec3& c, Mat3& basis) {
  const Vec3 e1 = b - a;
  const Vec3 n = e1.cross(c - a);
  const double e1_len = e1.norm();
  const double n_len = n.norm();
  if (!(e1_len > 0.0) || !(0.5 * n_len > kMinTriangleArea)) return false;
  const Vec3 u = e1 / e1_len;
  const Vec3 w = n / n_len;
  basis.col(0) = u;
  basis.col(1) = w.cross(u);
  basis.col(2) = w;
  return true;
}

std::optional<PolygonFrame> triangle_frame(const Vec3& ca, const Vec3& cb, const Vec3& cc, const Vec3& pa,
                                           const Vec3& pb, const Vec3& pc) {
  Mat3 canon_basis;
  Mat3 posed_basis;
  const double canon_area = triangle_area(ca, cb, cc);
  const double posed_area = triangle_area(pa, pb, pc);
  if (!triangle_basis(ca, cb, cc, canon_basis) || !triangle_basis(pa, pb, pc, posed_basis) ||
      !(posed_area > kMinTriangleArea)) {
    return std::nullopt;
  }
  PolygonFrame f;
  f.rotation = canonical(Quat(Mat3(posed_basis * canon_basis.transpose())));
  f.k = std::sqrt(posed_area / canon_area);
  f.translation = (pa + pb + pc) / 3.0;
  return f;
}

std::vector<PolygonFrame> polygon_frames(const SkinnedMesh& mesh, std::span<const Vec3> canonical_vertices,
                                         std::span<const Vec3> posed, std::span<const PolygonFrame> previous) {
  if (canonical_vertices.size() != mesh.vertex_count() || posed.size() != mesh.vertex_count()) {
    throw Error(ErrorCode::DimensionMismatch, "vertex arrays must match the mesh vertex count");
  }
  if (!previous.empty() && previous.size() != mesh.triangle_count()) {
    throw Error(ErrorCode::DimensionMismatch, "previous frames must have one entry per triangle");
  }
  std::vector<PolygonFrame> frames(mesh.triangle_count());
  const std::int64_t count = static_cast<std::int64_t>(frames.size());
#pragma omp parallel for schedule(static) if (count > 4096)
  for (std::int64_t t = 0; t < count; ++t) {
    const Triangle& tri = mesh.triangles[static_cast<std::size_t>(t)];
    const Vec3& ca = canonical_vertices[tri[0]];
    const Vec3& cb = canonical_vertices[tri[1]];
    const Vec3& cc = canonical_vertices[tri[2]];
    const Vec3& pa = posed[tri[0]];
    const Vec3& pb = posed[tri[1]];
    const Vec3& pc = posed[tri[2]];
    PolygonFrame& f = frames[static_cast<std::size_t>(t)];
    if (const auto frame = triangle_frame(ca, cb, cc, pa, pb, pc)) {
      f = *frame;
      continue;
    }
    if (!previous.empty()) {
      f = previous[static_cast<std::size_t>(t)];
    } else {
      f = PolygonFrame{1.0, Quat::Identity(), (pa + pb + pc) / 3.0, false};
    }
    f.degenerate = true;
  }
  return frames;
}

ProjectedPoint project_point(const Camera& cam, const Vec3& world) {
  const Vec3 p = cam.to_camera(world);
  ProjectedPoint out;
  out.depth = p.z();
  if (!(p.z() > 0.0)) return out;
  out.pixel = Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
  out.valid = true;
  return out;
}

std::vector<ProjectedPoint> project_joints(const JointTransforms& transforms, const Camera& cam) {
  std::vector<ProjectedPoint> out;
  out.reserve(transforms.size());
  for (const Vec3& t : transforms.translation) out.push_back(project_point(cam, t));
  return out;
}

double face_view_angle_deg(std::span<const Vec3> posed, std::span<const std::uint32_t> face_center_ids,
                           std::span<const std::uint32_t> eye_ids, const Camera& cam) {
  if (face_center_ids.empty() || eye_ids.empty()) {
    throw Error(ErrorCode::Configuration, "face visibility needs face-center and eye index sets");
  }
  for (std::uint32_t i : face_center_ids) {
    if (i >= posed.size()) throw Error(ErrorCode::IndexOutOfRange, "face center vertex " + std::to_string(i));
  }
  for (std::uint32_t i : eye_ids) {
    if (i >= posed.size()) throw Error(ErrorCode::IndexOutOfRange, "eye vertex " + std::to_string(i));
  }
  const Vec3 center = cam.to_camera(mean_of(posed, face_center_ids));
  const Vec3 eyes = cam.to_camera(mean_of(posed, eye_ids));
  // camera sits at the origin of its own frame
  Vec2 a(eyes.x() - center.x(), eyes.z() - center.z());
  Vec2 b(center.x(), center.z());
  if (a.norm() < 1e-12 || b.norm() < 1e-12) return -1.0;
  a.normalize();
  b.normalize();
  const double cross = a.x() * b.y() - a.y() * b.x();
  const double dot = a.dot(b);
  return std::atan2(std::abs(cross), dot) * 180.0 / kPi;
}

bool face_visibility(std::span<const Vec3> posed, std::span<const std::uint32_t> face_center_ids,
                     std::span<const std::uint32_t> eye_ids, const Camera& cam) {
  const double angle = face_view_angle_deg(posed, face_center_ids, eye_ids, cam);
  if (angle < 0.0) return false;
  return angle > kFaceVisibleAngleDeg + kAngleSlackDeg;
}

}  // namespace meshsplat
