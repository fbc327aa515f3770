#include "meshsplat/types.hpp"

#include "meshsplat/error.hpp"

#include <cmath>
#include <sstream>

namespace meshsplat {

namespace {

constexpr double kUnitTolerance = 1e-6;
constexpr double kWeightTolerance = 1e-6;
constexpr double kMinTriangleArea = 1e-12;

void add(ValidationReport& r, std::string code, const std::string& message) {
  r.issues.push_back({std::move(code), message});
}

bool finite(const Vec3& v) { return v.allFinite(); }

}  // namespace

std::optional<std::uint32_t> SkinnedMesh::joint_index(const std::string& name) const {
  for (std::size_t j = 0; j < joint_names.size(); ++j) {
    if (joint_names[j] == name) return static_cast<std::uint32_t>(j);
  }
  return std::nullopt;
}

std::vector<std::uint32_t> SkinnedMesh::joint_order() const {
  const std::size_t n = joint_parents.size();
  std::vector<std::vector<std::uint32_t>> children(n);
  std::vector<std::uint32_t> roots;
  for (std::size_t j = 0; j < n; ++j) {
    const std::uint32_t p = joint_parents[j];
    if (p == kRootParent) {
      roots.push_back(static_cast<std::uint32_t>(j));
    } else if (p >= n) {
      throw Error(ErrorCode::IndexOutOfRange, "joint " + std::to_string(j) + " has parent " + std::to_string(p));
    } else {
      children[p].push_back(static_cast<std::uint32_t>(j));
    }
  }
  if (roots.size() != 1) {
    throw Error(ErrorCode::InvalidArgument,
                "joint hierarchy must have exactly one root, found " + std::to_string(roots.size()));
  }
  std::vector<std::uint32_t> order;
  order.reserve(n);
  order.push_back(roots.front());
  for (std::size_t head = 0; head < order.size(); ++head) {
    for (std::uint32_t c : children[order[head]]) order.push_back(c);
  }
  if (order.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "joint hierarchy contains a cycle");
  }
  return order;
}

PoseParams PoseParams::neutral(const SkinnedMesh& mesh) {
  PoseParams p;
  p.joint_rotations.assign(mesh.joint_count(), Vec3::Zero());
  p.joint_offsets.assign(mesh.joint_count(), Vec3::Zero());
  p.shape = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.shape_count()));
  p.expression = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.expression_count()));
  return p;
}

std::size_t PoseParams::parameter_count() const {
  return 3 * joint_rotations.size() + 3 + static_cast<std::size_t>(shape.size()) + 3 * joint_offsets.size() +
         static_cast<std::size_t>(expression.size());
}

Eigen::VectorXd PoseParams::to_vector() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index i = 0;
  for (const Vec3& r : joint_rotations) { v.segment<3>(i) = r; i += 3; }
  v.segment<3>(i) = root_translation; i += 3;
  v.segment(i, shape.size()) = shape; i += shape.size();
  for (const Vec3& o : joint_offsets) { v.segment<3>(i) = o; i += 3; }
  v.segment(i, expression.size()) = expression;
  return v;
}

void PoseParams::assign_vector(const Eigen::VectorXd& v) {
  if (static_cast<std::size_t>(v.size()) != parameter_count()) {
    throw Error(ErrorCode::DimensionMismatch, "pose vector has " + std::to_string(v.size()) + " entries, expected " +
                                                  std::to_string(parameter_count()));
  }
  Eigen::Index i = 0;
  for (Vec3& r : joint_rotations) { r = v.segment<3>(i); i += 3; }
  root_translation = v.segment<3>(i); i += 3;
  shape = v.segment(i, shape.size()); i += shape.size();
  for (Vec3& o : joint_offsets) { o = v.segment<3>(i); i += 3; }
  expression = v.segment(i, expression.size());
}

std::optional<std::size_t> KeypointSequence::index_of(const std::string& name) const {
  for (std::size_t k = 0; k < layout.size(); ++k) {
    if (layout[k] == name) return k;
  }
  return std::nullopt;
}

bool ValidationReport::has(const std::string& code) const {
  for (const auto& i : issues) {
    if (i.code == code) return true;
  }
  return false;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < issues.size(); ++i) {
    if (i) os << "; ";
    os << issues[i].code << ": " << issues[i].message;
  }
  return os.str();
}

void require_valid(const ValidationReport& report, const std::string& what) {
  if (!report.ok()) throw Error(ErrorCode::Format, what + " failed validation: " + report.summary());
}

ValidationReport validate_mesh(const SkinnedMesh& mesh) {
  ValidationReport r;
  const std::size_t nv = mesh.vertices.size();
  const std::size_t nj = mesh.joint_parents.size();

  for (std::size_t v = 0; v < nv; ++v) {
    if (!finite(mesh.vertices[v])) add(r, "non-finite", "vertex " + std::to_string(v));
  }
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Triangle& tri = mesh.triangles[t];
    bool in_range = true;
    for (std::uint32_t idx : tri) {
      if (idx >= nv) {
        add(r, "index out of range", "triangle " + std::to_string(t) + " references vertex " + std::to_string(idx));
        in_range = false;
      }
    }
    if (!in_range) continue;
    const Vec3& a = mesh.vertices[tri[0]];
    const double area = 0.5 * (mesh.vertices[tri[1]] - a).cross(mesh.vertices[tri[2]] - a).norm();
    if (!(area > kMinTriangleArea)) add(r, "degenerate triangle", "triangle " + std::to_string(t));
  }

  if (mesh.joint_names.size() != nj) {
    add(r, "dimension mismatch", "joint_names has " + std::to_string(mesh.joint_names.size()) + " entries for " +
                                     std::to_string(nj) + " joints");
  }
  if (mesh.joint_rest.size() != nj) {
    add(r, "dimension mismatch", "joint_rest has " + std::to_string(mesh.joint_rest.size()) + " entries for " +
                                     std::to_string(nj) + " joints");
  }
  try {
    (void)mesh.joint_order();
  } catch (const Error& e) {
    add(r, e.code() == ErrorCode::IndexOutOfRange ? "index out of range" : "joint hierarchy", e.what());
  }

  if (static_cast<std::size_t>(mesh.skin_weights.rows()) != nv ||
      static_cast<std::size_t>(mesh.skin_weights.cols()) != nj) {
    add(r, "dimension mismatch", "skin weights must be vertices x joints");
  } else {
    for (std::size_t v = 0; v < nv; ++v) {
      const auto row = mesh.skin_weights.row(static_cast<Eigen::Index>(v));
      if ((row.array() < 0.0).any() || !row.allFinite()) {
        add(r, "negative weight", "vertex " + std::to_string(v));
        continue;
      }
      const double sum = row.sum();
      if (std::abs(sum - 1.0) > kWeightTolerance) {
        add(r, "weights not normalized", "vertex " + std::to_string(v) + " weights sum to " + std::to_string(sum));
      }
    }
  }

  const auto check_basis = [&](const Eigen::MatrixXd& basis, const char* name) {
    if (basis.cols() > 0 && static_cast<std::size_t>(basis.rows()) != 3 * nv) {
      add(r, "dimension mismatch", std::string(name) + " basis must have 3 * vertex_count rows");
    }
  };
  check_basis(mesh.shape_basis, "shape");
  check_basis(mesh.expression_basis, "expression");

  const auto check_ids = [&](const std::vector<std::uint32_t>& ids, const char* name) {
    for (std::uint32_t id : ids) {
      if (id >= nv) add(r, "index out of range", std::string(name) + " references vertex " + std::to_string(id));
    }
  };
  check_ids(mesh.face_center_ids, "face_center_ids");
  check_ids(mesh.eye_ids, "eye_ids");
  check_ids(mesh.face_vertex_ids, "face_vertex_ids");

  if (!mesh.joint_mirror.empty()) {
    if (mesh.joint_mirror.size() != nj) {
      add(r, "dimension mismatch", "joint_mirror must list one joint per joint");
    } else {
      for (std::size_t j = 0; j < nj; ++j) {
        const std::uint32_t m = mesh.joint_mirror[j];
        if (m >= nj) {
          add(r, "index out of range", "joint_mirror of joint " + std::to_string(j) + " is " + std::to_string(m));
        } else if (mesh.joint_mirror[m] != j) {
          add(r, "mirror not symmetric", "joint " + std::to_string(j));
        }
      }
    }
  }
  for (const auto& [kp, joint] : mesh.keypoint_joints) {
    if (!mesh.joint_index(joint)) add(r, "unknown joint", "keypoint " + kp + " maps to missing joint " + joint);
  }
  return r;
}

ValidationReport validate_splats(std::span<const Splat> splats, std::size_t triangle_count) {
  ValidationReport r;
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const Splat& s = splats[i];
    const std::string id = "splat " + std::to_string(i);
    if (s.polygon_id >= triangle_count) {
      add(r, "index out of range", id + " has polygon_id " + std::to_string(s.polygon_id) + " but mesh has " +
                                       std::to_string(triangle_count) + " triangles");
    }
    if (!finite(s.mu_local) || !finite(s.log_scale) || !finite(s.color) || !std::isfinite(s.opacity) ||
        !s.rot_local.coeffs().allFinite()) {
      add(r, "non-finite", id);
      continue;
    }
    if (std::abs(s.rot_local.norm() - 1.0) > kUnitTolerance) add(r, "rotation not unit", id);
    if (!(s.scale().array() > 0.0).all()) add(r, "nonpositive scale", id);
    if (s.opacity < 0.0 || s.opacity > 1.0) add(r, "opacity out of range", id);
    if ((s.color.array() < 0.0).any() || (s.color.array() > 1.0).any()) add(r, "color out of range", id);
  }
  return r;
}

ValidationReport validate_asset(const SkinnedMesh& mesh, std::span<const Splat> splats) {
  ValidationReport r = validate_mesh(mesh);
  ValidationReport s = validate_splats(splats, mesh.triangle_count());
  r.issues.insert(r.issues.end(), s.issues.begin(), s.issues.end());
  return r;
}

ValidationReport validate_pose(const SkinnedMesh& mesh, const PoseParams& pose) {
  ValidationReport r;
  const std::size_t nj = mesh.joint_count();
  if (pose.joint_rotations.size() != nj) add(r, "dimension mismatch", "joint_rotations length");
  if (pose.joint_offsets.size() != nj) add(r, "dimension mismatch", "joint_offsets length");
  if (static_cast<std::size_t>(pose.shape.size()) != mesh.shape_count()) add(r, "dimension mismatch", "shape length");
  if (static_cast<std::size_t>(pose.expression.size()) != mesh.expression_count()) {
    add(r, "dimension mismatch", "expression length");
  }
  if (!pose.to_vector().allFinite()) add(r, "non-finite", "pose parameters");
  return r;
}

ValidationReport validate_camera(const Camera& c) {
  ValidationReport r;
  if (!(c.fx > 0.0) || !(c.fy > 0.0)) add(r, "invalid focal", "focal lengths must be positive");
  if (c.width <= 0 || c.height <= 0) add(r, "invalid size", "image size must be positive");
  if (!(c.cx >= 0.0 && c.cx < c.width) || !(c.cy >= 0.0 && c.cy < c.height)) {
    add(r, "invalid principal point", "principal point outside image");
  }
  if (std::abs(c.rotation.norm() - 1.0) > kUnitTolerance) add(r, "rotation not unit", "camera rotation");
  if (!c.translation.allFinite()) add(r, "non-finite", "camera translation");
  return r;
}

ValidationReport validate_keypoints(const KeypointSequence& seq) {
  ValidationReport r;
  const std::size_t k = seq.layout.size();
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& frame = seq.frames[f];
    if (frame.size() != k) {
      add(r, "dimension mismatch", "frame " + std::to_string(f) + " has " + std::to_string(frame.size()) +
                                       " keypoints, layout has " + std::to_string(k));
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) {
      const Keypoint& p = frame[j];
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.confidence)) {
        add(r, "non-finite", "frame " + std::to_string(f) + " joint " + seq.layout[j]);
      } else if (p.confidence < 0.0 || p.confidence > 1.0) {
        add(r, "confidence out of range", "frame " + std::to_string(f) + " joint " + seq.layout[j] +
                                              " has confidence " + std::to_string(p.confidence));
      }
    }
  }
  return r;
}

}  // namespace meshsplat
