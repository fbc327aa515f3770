#pragma once

#include "meshsplat/geometry.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace meshsplat {

/// Parent index of the root joint.
inline constexpr std::uint32_t kRootParent = std::numeric_limits<std::uint32_t>::max();

/// One Gaussian bound to a mesh triangle. Position, rotation and scale are
/// expressed in the polygon frame; the scale is kept in log space so the
/// optimizer never has to enforce positivity.
struct Splat {
  Vec3 mu_local = Vec3::Zero();
  Quat rot_local = Quat::Identity();
  Vec3 log_scale = Vec3::Zero();
  Vec3 color = Vec3::Constant(0.5);
  double opacity = 0.5;
  std::uint32_t polygon_id = 0;

  Vec3 scale() const { return log_scale.array().exp(); }
};

/// Similarity transform carrying a triangle from the canonical to the posed
/// mesh: x -> k * R * x + T.
struct PolygonFrame {
  double k = 1.0;
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
  bool degenerate = false;
};

using Triangle = std::array<std::uint32_t, 3>;

struct SkinnedMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  std::vector<std::string> joint_names;
  std::vector<std::uint32_t> joint_parents;  // kRootParent marks the root
  std::vector<Vec3> joint_rest;
  Eigen::MatrixXd skin_weights;  // vertices x joints, rows sum to one

  // Optional linear bases, 3N rows (x, y, z interleaved per vertex) by one
  // column per coefficient. Empty when the asset has none.
  Eigen::MatrixXd shape_basis;
  Eigen::MatrixXd expression_basis;

  // Named index sets used by the face terms of pose fitting.
  std::vector<std::uint32_t> face_center_ids;
  std::vector<std::uint32_t> eye_ids;
  std::vector<std::uint32_t> face_vertex_ids;

  // Left/right joint correspondence; empty when unknown.
  std::vector<std::uint32_t> joint_mirror;

  // Keypoint layout name -> joint name. Keypoints without an entry bind to
  // a joint of the same name, if one exists.
  std::map<std::string, std::string> keypoint_joints;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t triangle_count() const { return triangles.size(); }
  std::size_t joint_count() const { return joint_parents.size(); }
  std::size_t shape_count() const { return static_cast<std::size_t>(shape_basis.cols()); }
  std::size_t expression_count() const { return static_cast<std::size_t>(expression_basis.cols()); }

  std::optional<std::uint32_t> joint_index(const std::string& name) const;

  /// Joints ordered so every parent precedes its children. Throws on a
  /// cycle or a forest.
  std::vector<std::uint32_t> joint_order() const;
};

/// Articulated pose. Joint rotations are axis-angle vectors in the parent
/// frame; offsets displace the rest joints before chaining.
struct PoseParams {
  std::vector<Vec3> joint_rotations;
  Vec3 root_translation = Vec3::Zero();
  Eigen::VectorXd shape;
  std::vector<Vec3> joint_offsets;
  Eigen::VectorXd expression;

  static PoseParams neutral(const SkinnedMesh& mesh);

  /// Flat parameter vector: [rotations 3J | translation 3 | shape B |
  /// offsets 3J | expression E].
  Eigen::VectorXd to_vector() const;
  void assign_vector(const Eigen::VectorXd& v);
  std::size_t parameter_count() const;
};

/// Pinhole camera. World points map to camera space as R * x + t; the
/// camera looks down +z with image y pointing down.
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
  int width = 1;
  int height = 1;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 position() const { return -(rotation.conjugate() * translation); }
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
  bool synthetic = false;
};

struct KeypointSequence {
  std::vector<std::string> layout;
  std::vector<std::vector<Keypoint>> frames;

  std::optional<std::size_t> index_of(const std::string& name) const;
};

struct LossWeights {
  // pose fitting
  double w_kpt = 1.0;
  double w_init = 0.1;
  double w_face = 1.0;
  double w_vertex = 10.0;
  double w_lap = 10000.0;
  double w_edge = 1.0;
  double w_shape = 0.01;
  double w_jo = 100.0;
  double w_sym = 1.0;
  // splat training
  double w_l2 = 1.0;
  double w_lpips = 0.01;  // slot only; no perceptual network is bundled
  double w_ssim = 0.1;
  double w_sobel = 1.0;
  double w_knn = 0.01;
};

struct ValidationIssue {
  std::string code;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool ok() const { return issues.empty(); }
  bool has(const std::string& code) const;
  std::string summary() const;
};

ValidationReport validate_mesh(const SkinnedMesh& mesh);
ValidationReport validate_splats(std::span<const Splat> splats, std::size_t triangle_count);
ValidationReport validate_asset(const SkinnedMesh& mesh, std::span<const Splat> splats);
ValidationReport validate_pose(const SkinnedMesh& mesh, const PoseParams& pose);
ValidationReport validate_camera(const Camera& camera);
ValidationReport validate_keypoints(const KeypointSequence& seq);

/// Throws Error(Format) carrying the report summary when it is not ok.
void require_valid(const ValidationReport& report, const std::string& what);

}  // namespace meshsplat
