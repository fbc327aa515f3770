#pragma once

#include "meshsplat/container.hpp"
#include "meshsplat/kinematics.hpp"
#include "meshsplat/types.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace meshsplat {

inline constexpr std::string_view kSplatMagic{"MSSPLAT\0", 8};
inline constexpr std::string_view kMeshMagic{"MSMESH\0\0", 8};
inline constexpr std::string_view kFramesMagic{"MSFRAME\0", 8};
inline constexpr std::string_view kCheckpointMagic{"MSCKPT\0\0", 8};
inline constexpr std::uint32_t kFormatVersion = 1;

// Splat asset: float32 arrays mu [n,3], rot [n,4] (w, x, y, z),
// log_scale [n,3], color [n,3], opacity [n], then polygon_id as u32 [n].
Container splats_to_container(std::span<const Splat> splats,
                              std::optional<std::size_t> triangle_count = std::nullopt);
std::vector<Splat> splats_from_container(const Container& c);
std::vector<std::uint8_t> encode_splats(std::span<const Splat> splats,
                                        std::optional<std::size_t> triangle_count = std::nullopt);
std::vector<Splat> decode_splats(std::span<const std::uint8_t> bytes);
void save_splats(const std::filesystem::path& path, std::span<const Splat> splats,
                 std::optional<std::size_t> triangle_count = std::nullopt);
std::vector<Splat> load_splats(const std::filesystem::path& path);

// Mesh asset: skeleton, names and index sets in the JSON metadata; float64
// vertices, joint_rest, skin_weights and optional bases, u32 triangles.
std::vector<std::uint8_t> encode_mesh(const SkinnedMesh& mesh);
SkinnedMesh decode_mesh(std::span<const std::uint8_t> bytes);
void save_mesh(const std::filesystem::path& path, const SkinnedMesh& mesh);
SkinnedMesh load_mesh(const std::filesystem::path& path);

// Polygon-frame sequences: float32 k [F,M], rot [F,M,4], trans [F,M,3].
std::vector<std::uint8_t> encode_frames(std::span<const std::vector<PolygonFrame>> frames,
                                        const nlohmann::json& meta = nlohmann::json::object());
std::vector<std::vector<PolygonFrame>> decode_frames(std::span<const std::uint8_t> bytes);

nlohmann::json read_json(const std::filesystem::path& path);
/// Two-space indented, trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// Keypoints: {"layout": [...], "frames": [[[x, y, conf] ...] ...]}; a fourth
// element `true` marks a synthesized keypoint.
nlohmann::json keypoints_to_json(const KeypointSequence& seq);
KeypointSequence keypoints_from_json(const nlohmann::json& j);
void save_keypoints(const std::filesystem::path& path, const KeypointSequence& seq);
KeypointSequence load_keypoints(const std::filesystem::path& path);

nlohmann::json gap_report_to_json(const GapReport& report);

nlohmann::json pose_to_json(const PoseParams& pose);
/// Missing fields default to the neutral pose. "joint_rotations" may be an
/// array (one entry per joint) or an object keyed by joint name.
PoseParams pose_from_json(const nlohmann::json& j, const SkinnedMesh& mesh);

struct PoseFile {
  std::vector<PoseParams> poses;
  std::vector<std::size_t> failed;  // frames whose pose was interpolated
  double fps = 30.0;
};

nlohmann::json poses_to_json(const SkinnedMesh& mesh, const PoseFile& file);
PoseFile poses_from_json(const nlohmann::json& j, const SkinnedMesh& mesh);
void save_poses(const std::filesystem::path& path, const SkinnedMesh& mesh, const PoseFile& file);
/// Accepts a pose file or a single bare pose object.
PoseFile load_poses(const std::filesystem::path& path, const SkinnedMesh& mesh);

nlohmann::json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);
/// A single camera object or {"cameras": [...]}.
std::vector<Camera> load_cameras(const std::filesystem::path& path);
void save_cameras(const std::filesystem::path& path, std::span<const Camera> cams);

/// {"frames": [null | [[x, y, z] ...] ...]} or a single vertex list.
std::vector<std::optional<std::vector<Vec3>>> load_face_targets(const std::filesystem::path& path);

}  // namespace meshsplat
