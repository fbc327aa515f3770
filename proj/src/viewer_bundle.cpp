#include "meshsplat/viewer_bundle.hpp"

#include "meshsplat/body_model.hpp"
#include "meshsplat/error.hpp"
#include "meshsplat/io.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace meshsplat {

using nlohmann::json;

namespace {

bool valid_clip_name(const std::string& name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_';
  });
}

json rotations_by_name(const SkinnedMesh& mesh, const PoseParams& pose) {
  json out = json::object();
  for (std::size_t j = 0; j < mesh.joint_count(); ++j) {
    const Vec3& r = pose.joint_rotations[j];
    if (!r.isZero(0.0)) out[mesh.joint_names[j]] = {r.x(), r.y(), r.z()};
  }
  return out;
}

}  // namespace

std::vector<std::vector<PolygonFrame>> clip_frames(const SkinnedMesh& mesh, std::span<const PoseParams> poses) {
  std::vector<std::vector<PolygonFrame>> out;
  out.reserve(poses.size());
  for (const PoseParams& p : poses) {
    const std::span<const PolygonFrame> previous = out.empty() ? std::span<const PolygonFrame>{} : out.back();
    out.push_back(polygon_frames(mesh, mesh.vertices, skin_vertices(mesh, p), previous));
  }
  return out;
}

std::vector<std::uint8_t> pose_frames_payload(const SkinnedMesh& mesh, const PoseParams& pose) {
  const PoseParams p[1] = {pose};
  return encode_frames(clip_frames(mesh, p));
}

PoseParams a_pose(const SkinnedMesh& mesh) {
  PoseParams p = PoseParams::neutral(mesh);
  if (const auto l = mesh.joint_index("left_shoulder")) p.joint_rotations[*l] = Vec3(0.0, 0.0, -0.8);
  if (const auto r = mesh.joint_index("right_shoulder")) p.joint_rotations[*r] = Vec3(0.0, 0.0, 0.8);
  return p;
}

json export_viewer_bundle(const std::filesystem::path& dir, const SkinnedMesh& mesh, std::span<const Splat> splats,
                          std::span<const AnimationClip> clips, const BundleOptions& opts) {
  require_valid(validate_asset(mesh, splats), "bundle asset");
  std::set<std::string> names;
  for (const AnimationClip& c : clips) {
    if (!valid_clip_name(c.name)) throw Error(ErrorCode::InvalidArgument, "invalid clip name '" + c.name + "'");
    if (!names.insert(c.name).second) throw Error(ErrorCode::InvalidArgument, "duplicate clip name '" + c.name + "'");
    if (c.poses.empty()) throw Error(ErrorCode::InvalidArgument, "clip '" + c.name + "' has no poses");
  }
  std::filesystem::create_directories(dir / "clips");

  save_splats(dir / "avatar.splats", splats, mesh.triangle_count());
  save_mesh(dir / "avatar.mesh", mesh);
  const PoseParams rest[1] = {PoseParams::neutral(mesh)};
  write_file_bytes(dir / "rest.frames", encode_frames(clip_frames(mesh, rest), {{"clip", "rest"}}));

  json clip_list = json::array();
  for (const AnimationClip& c : clips) {
    const std::string file = "clips/" + c.name + ".frames";
    write_file_bytes(dir / file, encode_frames(clip_frames(mesh, c.poses), {{"clip", c.name}, {"fps", c.fps}}));
    clip_list.push_back({{"name", c.name}, {"file", file}, {"frame_count", c.poses.size()}, {"fps", c.fps}});
  }

  json joints = json::array();
  for (std::size_t j = 0; j < mesh.joint_count(); ++j) {
    const std::uint32_t p = mesh.joint_parents[j];
    joints.push_back({{"name", mesh.joint_names[j]},
                      {"parent", p == kRootParent ? -1 : static_cast<std::int64_t>(p)},
                      {"rest", {mesh.joint_rest[j].x(), mesh.joint_rest[j].y(), mesh.joint_rest[j].z()}}});
  }

  json manifest = {
      {"format", kBundleFormat},
      {"version", kBundleVersion},
      {"splats", {{"file", "avatar.splats"}, {"count", splats.size()}}},
      {"mesh", {{"file", "avatar.mesh"}, {"vertex_count", mesh.vertex_count()}, {"triangle_count", mesh.triangle_count()}}},
      {"rest_frames", "rest.frames"},
      {"skeleton", {{"joints", joints}}},
      {"clips", clip_list},
      {"background", {opts.background.x(), opts.background.y(), opts.background.z()}},
      {"presets", {{"t_pose", {{"joint_rotations", json::object()}}},
                   {"a_pose", {{"joint_rotations", rotations_by_name(mesh, a_pose(mesh))}}}}},
      {"endpoints", {{"manifest", "/manifest"}, {"assets", "/assets/"}, {"pose", "/pose"}}},
  };
  if (opts.camera) manifest["camera"] = camera_to_json(*opts.camera);
  write_json(dir / "manifest.json", manifest);
  return manifest;
}

json load_bundle_manifest(const std::filesystem::path& dir) {
  const json m = read_json(dir / "manifest.json");
  if (!m.is_object() || m.value("format", std::string()) != kBundleFormat) {
    throw Error(ErrorCode::Format, "'" + dir.string() + "' does not hold a viewer bundle manifest");
  }
  if (m.value("version", 0) != kBundleVersion) {
    throw Error(ErrorCode::Format, "unsupported bundle version " + std::to_string(m.value("version", 0)));
  }
  return m;
}

}  // namespace meshsplat
