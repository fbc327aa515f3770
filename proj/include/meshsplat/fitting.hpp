#pragma once

// Per-frame articulated pose fitting to 2D keypoints.
//
// The objective is
//     L = w_kpt L_kpt + w_init L_init
//       + w_face (w_vertex L_vertex + w_lap L_lap + w_edge L_edge)
//       + w_shape |beta|^2 + w_jo |offsets|^2 + w_sym L_sym,
// where the face terms are evaluated only while the face is visible and a
// target is supplied. It is minimized by damped Gauss-Newton on
// reweighted residuals (L1 terms become weighted squares) with a
// backtracking line search on the true loss, so every accepted step
// strictly decreases L.

#include "meshsplat/losses.hpp"
#include "meshsplat/types.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace meshsplat {

inline constexpr double kDefaultFocalFactor = 1.2;
inline constexpr double kSyntheticKeypointWeight = 0.5;

/// Identity pose, principal point at the image center,
/// fx = fy = focal_factor * max(width, height).
Camera init_camera(int width, int height, double focal_factor = kDefaultFocalFactor);

/// Skeleton joint for each layout entry: the mesh's keypoint_joints entry,
/// else a joint of the same name, else nullopt.
std::vector<std::optional<std::uint32_t>> bind_keypoints(const SkinnedMesh& mesh,
                                                         std::span<const std::string> layout);

/// Vertices of the face region and the mesh edges between them.
struct FacePatch {
  std::vector<std::uint32_t> vertices;                       // mesh ids
  std::vector<std::array<std::uint32_t, 2>> edges;           // local ids
  std::vector<std::vector<std::uint32_t>> neighbors;         // local ids
};

FacePatch build_face_patch(const SkinnedMesh& mesh);

/// Uniform Laplacian coordinates of the patch: p_i - mean of its neighbors
/// (zero for isolated vertices). `points` is indexed by local id.
std::vector<Vec3> uniform_laplacian(const FacePatch& patch, std::span<const Vec3> points);

/// Mirror of an offset across the sagittal (x = 0) plane.
inline Vec3 mirror_offset(const Vec3& v) { return {-v.x(), v.y(), v.z()}; }

struct FittingLoss {
  LossBreakdown breakdown;
  bool face_visible = false;
  bool face_applied = false;
  double total() const { return breakdown.total; }
};

/// Evaluates the fitting objective for one frame. `face_target` holds one
/// posed position per face_vertex_ids entry, index aligned.
FittingLoss fitting_loss(const SkinnedMesh& mesh, const PoseParams& pose, std::span<const std::string> layout,
                         std::span<const Keypoint> keypoints, const PoseParams& init_pose,
                         const std::vector<Vec3>* face_target, const Camera& cam, const LossWeights& w = {});

struct FitOptions {
  LossWeights weights;
  int max_iterations = 200;
  double relative_tolerance = 1e-6;
  int patience = 10;  // iterations over which the relative improvement is measured
  bool optimize_translation = true;
  bool optimize_shape = true;
  bool optimize_offsets = true;
  bool optimize_expression = true;
  double initial_damping = 1e-3;
};

struct FitReport {
  int iterations = 0;
  bool converged = false;
  std::string stop_reason;
  double initial_loss = 0.0;
  std::vector<double> loss_history;  // initial loss, then one entry per accepted step
  FittingLoss final_loss;
};

struct FitResult {
  PoseParams pose;
  FitReport report;
};

/// Throws Error(NonFinite) when the initial loss is not finite and
/// Error(Diverged) if the loss ever exceeds ten times its initial value.
FitResult fit_frame(const SkinnedMesh& mesh, const PoseParams& init_pose, std::span<const std::string> layout,
                    std::span<const Keypoint> keypoints, const std::vector<Vec3>* face_target, const Camera& cam,
                    const FitOptions& opts = {});

struct SequenceFit {
  std::vector<PoseParams> poses;
  std::vector<FitReport> reports;
  std::vector<bool> failed;  // true where the pose was interpolated from neighbors
  std::vector<std::string> errors;
  int total_iterations = 0;
};

struct SequenceOptions {
  FitOptions fit;
  bool warm_start = true;  // false re-initializes every frame from the initial pose
};

/// Fits every frame in order. `cams` holds either one camera for all frames
/// or one per frame; `face_targets` is empty or one entry per frame.
SequenceFit fit_sequence(const SkinnedMesh& mesh, const KeypointSequence& seq, std::span<const Camera> cams,
                         const SequenceOptions& opts = {}, const std::optional<PoseParams>& initial = std::nullopt,
                         std::span<const std::optional<std::vector<Vec3>>> face_targets = {});

/// Sum over vertices of J_v^T d_vertices[v], where J_v is the Jacobian of
/// posed vertex v with respect to the flat pose vector.
Eigen::VectorXd pose_gradient_from_vertices(const SkinnedMesh& mesh, const PoseParams& pose,
                                            std::span<const Vec3> d_vertices);

/// Jacobian of a posed joint position with respect to the flat pose vector.
Eigen::MatrixXd joint_position_jacobian(const SkinnedMesh& mesh, const PoseParams& pose, std::uint32_t joint);

/// Jacobian of a posed vertex with respect to the flat pose vector.
Eigen::MatrixXd vertex_position_jacobian(const SkinnedMesh& mesh, const PoseParams& pose, std::uint32_t vertex);

/// Keypoints obtained by projecting the pose's bound joints; every entry
/// has confidence 1, unbound layout entries get confidence 0.
std::vector<Keypoint> project_keypoints(const SkinnedMesh& mesh, const PoseParams& pose,
                                        std::span<const std::string> layout, const Camera& cam);

}  // namespace meshsplat
