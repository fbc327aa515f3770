#pragma once

// Viewer bundle: a directory holding
//   manifest.json       format descriptor (see docs/viewer_bundle.md)
//   avatar.splats       splat asset
//   avatar.mesh         mesh asset
//   rest.frames         polygon frames of the neutral pose
//   clips/<name>.frames polygon frames of each animation clip

#include "meshsplat/types.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace meshsplat {

inline constexpr const char* kBundleFormat = "meshsplat-viewer-bundle";
inline constexpr int kBundleVersion = 1;

struct AnimationClip {
  std::string name;
  std::vector<PoseParams> poses;
  double fps = 30.0;
};

struct BundleOptions {
  std::optional<Camera> camera;
  Vec3 background = Vec3::Ones();
};

/// Polygon frames of every pose of a clip.
std::vector<std::vector<PolygonFrame>> clip_frames(const SkinnedMesh& mesh, std::span<const PoseParams> poses);

/// Binary frames payload for a single pose, as served by POST /pose.
std::vector<std::uint8_t> pose_frames_payload(const SkinnedMesh& mesh, const PoseParams& pose);

/// Arms-down preset; only the shoulder joints are rotated.
PoseParams a_pose(const SkinnedMesh& mesh);

/// Writes the bundle and returns its manifest. Clip names must be
/// nonempty and consist of letters, digits, '-' or '_'.
nlohmann::json export_viewer_bundle(const std::filesystem::path& dir, const SkinnedMesh& mesh,
                                    std::span<const Splat> splats, std::span<const AnimationClip> clips,
                                    const BundleOptions& opts = {});

/// Reads manifest.json and checks its format and version.
nlohmann::json load_bundle_manifest(const std::filesystem::path& dir);

}  // namespace meshsplat
