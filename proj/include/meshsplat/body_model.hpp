#pragma once

#include "meshsplat/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace meshsplat {

/// World transforms of every joint after forward kinematics.
///
/// `rest` holds the offset rest positions. The skinning transform of joint
/// j maps a rest-space point v to rotation[j] * (v - rest[j]) + translation[j].
struct JointTransforms {
  std::vector<Quat> rotation;
  std::vector<Mat3> rotation_matrix;
  std::vector<Vec3> translation;
  std::vector<Vec3> rest;

  std::size_t size() const { return rotation.size(); }
  Vec3 skin(std::size_t joint, const Vec3& rest_point) const {
    return rotation_matrix[joint] * (rest_point - rest[joint]) + translation[joint];
  }
};

JointTransforms forward_kinematics(const SkinnedMesh& mesh, const PoseParams& pose);

/// Canonical vertices displaced by the shape and expression bases, when the
/// mesh carries them.
std::vector<Vec3> shaped_vertices(const SkinnedMesh& mesh, const PoseParams& pose);

std::vector<Vec3> skin_vertices(const SkinnedMesh& mesh, const PoseParams& pose);
std::vector<Vec3> skin_vertices(const SkinnedMesh& mesh, std::span<const Vec3> rest_vertices,
                                const JointTransforms& transforms);

/// Frame of a single triangle: R aligns the canonical tangent basis with the
/// posed one, k = sqrt(posed area / canonical area), T = posed centroid.
/// nullopt when either triangle is degenerate.
std::optional<PolygonFrame> triangle_frame(const Vec3& ca, const Vec3& cb, const Vec3& cc, const Vec3& pa,
                                           const Vec3& pb, const Vec3& pc);

/// Per-triangle frame from the canonical to the posed mesh. A triangle that
/// is degenerate in the posed mesh reuses `previous[t]` when given (or the
/// identity frame at its centroid otherwise) and is flagged.
std::vector<PolygonFrame> polygon_frames(const SkinnedMesh& mesh, std::span<const Vec3> canonical_vertices,
                                         std::span<const Vec3> posed,
                                         std::span<const PolygonFrame> previous = {});

/// Orthonormal tangent frame [e1, e2, n] of a triangle; false when degenerate.
bool triangle_basis(const Vec3& a, const Vec3& b, const Vec3& c, Mat3& basis);
double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);

struct ProjectedPoint {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool valid = false;
};

ProjectedPoint project_point(const Camera& cam, const Vec3& world);
std::vector<ProjectedPoint> project_joints(const JointTransforms& transforms, const Camera& cam);

inline constexpr double kFaceVisibleAngleDeg = 135.0;

/// Angle in degrees between (eye midpoint - face center) and (face center -
/// camera), both taken in camera space and flattened onto its xz-plane.
/// Returns a negative value when either flattened vector vanishes.
double face_view_angle_deg(std::span<const Vec3> posed, std::span<const std::uint32_t> face_center_ids,
                           std::span<const std::uint32_t> eye_ids, const Camera& cam);

/// Visible iff the view angle is strictly greater than 135 degrees.
bool face_visibility(std::span<const Vec3> posed, std::span<const std::uint32_t> face_center_ids,
                     std::span<const std::uint32_t> eye_ids, const Camera& cam);

}  // namespace meshsplat
