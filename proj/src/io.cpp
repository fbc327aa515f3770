#include "meshsplat/io.hpp"

#include "meshsplat/error.hpp"

#include <fstream>
#include <limits>

namespace meshsplat {

using nlohmann::json;

namespace {

std::vector<double> flatten(std::span<const Vec3> v) {
  std::vector<double> out;
  out.reserve(3 * v.size());
  for (const Vec3& p : v) out.insert(out.end(), {p.x(), p.y(), p.z()});
  return out;
}

std::vector<Vec3> unflatten3(const std::vector<double>& d) {
  std::vector<Vec3> out(d.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
  return out;
}

std::vector<double> row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[k++] = m(r, c);
  }
  return out;
}

Eigen::MatrixXd from_row_major(const ContainerArray& a) {
  if (a.shape.size() != 2) throw Error(ErrorCode::Format, "array '" + a.name + "' must be two-dimensional");
  const auto rows = static_cast<Eigen::Index>(a.shape[0]), cols = static_cast<Eigen::Index>(a.shape[1]);
  const std::vector<double> d = a.as_double();
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = d[k++];
  }
  return m;
}

void require_shape(const ContainerArray& a, const std::vector<std::size_t>& shape) {
  if (a.shape != shape) {
    std::string s;
    for (std::size_t d : shape) s += (s.empty() ? "" : "x") + std::to_string(d);
    throw Error(ErrorCode::Format, "array '" + a.name + "' has the wrong shape, expected " + s);
  }
}

Vec3 vec3_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::Format, what + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

template <typename F>
auto guarded(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, what + ": " + e.what());
  }
}

}  // namespace

Container splats_to_container(std::span<const Splat> splats, std::optional<std::size_t> triangle_count) {
  const std::size_t n = splats.size();
  std::vector<double> mu, rot, log_scale, color, opacity;
  std::vector<std::uint32_t> poly;
  for (const Splat& s : splats) {
    mu.insert(mu.end(), {s.mu_local.x(), s.mu_local.y(), s.mu_local.z()});
    rot.insert(rot.end(), {s.rot_local.w(), s.rot_local.x(), s.rot_local.y(), s.rot_local.z()});
    log_scale.insert(log_scale.end(), {s.log_scale.x(), s.log_scale.y(), s.log_scale.z()});
    color.insert(color.end(), {s.color.x(), s.color.y(), s.color.z()});
    opacity.push_back(s.opacity);
    poly.push_back(s.polygon_id);
  }
  Container c;
  c.magic = std::string(kSplatMagic);
  c.version = kFormatVersion;
  c.meta["count"] = n;
  c.meta["rotation_order"] = "wxyz";
  c.meta["scale_space"] = "log";
  if (triangle_count) c.meta["triangle_count"] = *triangle_count;
  c.arrays.push_back(ContainerArray::from_f32("mu", {n, 3}, mu));
  c.arrays.push_back(ContainerArray::from_f32("rot", {n, 4}, rot));
  c.arrays.push_back(ContainerArray::from_f32("log_scale", {n, 3}, log_scale));
  c.arrays.push_back(ContainerArray::from_f32("color", {n, 3}, color));
  c.arrays.push_back(ContainerArray::from_f32("opacity", {n}, opacity));
  c.arrays.push_back(ContainerArray::from_u32("polygon_id", {n}, poly));
  return c;
}

std::vector<Splat> splats_from_container(const Container& c) {
  const std::size_t n = guarded("splat metadata", [&] { return c.meta.at("count").get<std::size_t>(); });
  const ContainerArray& mu = c.require("mu");
  const ContainerArray& rot = c.require("rot");
  const ContainerArray& ls = c.require("log_scale");
  const ContainerArray& col = c.require("color");
  const ContainerArray& op = c.require("opacity");
  const ContainerArray& pid = c.require("polygon_id");
  require_shape(mu, {n, 3});
  require_shape(rot, {n, 4});
  require_shape(ls, {n, 3});
  require_shape(col, {n, 3});
  require_shape(op, {n});
  require_shape(pid, {n});
  const auto m = mu.as_double(), r = rot.as_double(), l = ls.as_double(), cc = col.as_double(), o = op.as_double();
  const auto p = pid.as_u32();
  std::vector<Splat> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Splat& s = out[i];
    s.mu_local = Vec3(m[3 * i], m[3 * i + 1], m[3 * i + 2]);
    s.rot_local = Quat(r[4 * i], r[4 * i + 1], r[4 * i + 2], r[4 * i + 3]);
    s.log_scale = Vec3(l[3 * i], l[3 * i + 1], l[3 * i + 2]);
    s.color = Vec3(cc[3 * i], cc[3 * i + 1], cc[3 * i + 2]);
    s.opacity = o[i];
    s.polygon_id = p[i];
  }
  const std::size_t tri = c.meta.contains("triangle_count") ? c.meta["triangle_count"].get<std::size_t>()
                                                            : std::numeric_limits<std::size_t>::max();
  require_valid(validate_splats(out, tri), "splat asset");
  return out;
}

std::vector<std::uint8_t> encode_splats(std::span<const Splat> splats, std::optional<std::size_t> triangle_count) {
  return encode_container(splats_to_container(splats, triangle_count));
}

std::vector<Splat> decode_splats(std::span<const std::uint8_t> bytes) {
  return splats_from_container(decode_container(bytes, kSplatMagic, kFormatVersion));
}

void save_splats(const std::filesystem::path& path, std::span<const Splat> splats,
                 std::optional<std::size_t> triangle_count) {
  write_file_bytes(path, encode_splats(splats, triangle_count));
}

std::vector<Splat> load_splats(const std::filesystem::path& path) { return decode_splats(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_mesh(const SkinnedMesh& mesh) {
  Container c;
  c.magic = std::string(kMeshMagic);
  c.version = kFormatVersion;
  json parents = json::array();
  for (std::uint32_t p : mesh.joint_parents) parents.push_back(p == kRootParent ? -1 : static_cast<std::int64_t>(p));
  c.meta["joint_names"] = mesh.joint_names;
  c.meta["joint_parents"] = parents;
  c.meta["face_center_ids"] = mesh.face_center_ids;
  c.meta["eye_ids"] = mesh.eye_ids;
  c.meta["face_vertex_ids"] = mesh.face_vertex_ids;
  c.meta["joint_mirror"] = mesh.joint_mirror;
  c.meta["keypoint_joints"] = mesh.keypoint_joints;
  c.meta["vertex_count"] = mesh.vertex_count();
  c.meta["triangle_count"] = mesh.triangle_count();

  const std::size_t nv = mesh.vertex_count(), nt = mesh.triangle_count();
  c.arrays.push_back(ContainerArray::from_f64("vertices", {nv, 3}, flatten(mesh.vertices)));
  std::vector<std::uint32_t> tris;
  for (const Triangle& t : mesh.triangles) tris.insert(tris.end(), t.begin(), t.end());
  c.arrays.push_back(ContainerArray::from_u32("triangles", {nt, 3}, tris));
  c.arrays.push_back(ContainerArray::from_f64("joint_rest", {mesh.joint_rest.size(), 3}, flatten(mesh.joint_rest)));
  c.arrays.push_back(ContainerArray::from_f64(
      "skin_weights", {static_cast<std::size_t>(mesh.skin_weights.rows()), static_cast<std::size_t>(mesh.skin_weights.cols())},
      row_major(mesh.skin_weights)));
  if (mesh.shape_basis.cols() > 0) {
    c.arrays.push_back(ContainerArray::from_f64(
        "shape_basis", {static_cast<std::size_t>(mesh.shape_basis.rows()), mesh.shape_count()}, row_major(mesh.shape_basis)));
  }
  if (mesh.expression_basis.cols() > 0) {
    c.arrays.push_back(ContainerArray::from_f64("expression_basis",
                                                {static_cast<std::size_t>(mesh.expression_basis.rows()), mesh.expression_count()},
                                                row_major(mesh.expression_basis)));
  }
  return encode_container(c);
}

SkinnedMesh decode_mesh(std::span<const std::uint8_t> bytes) {
  const Container c = decode_container(bytes, kMeshMagic, kFormatVersion);
  SkinnedMesh m;
  guarded("mesh metadata", [&] {
    m.joint_names = c.meta.at("joint_names").get<std::vector<std::string>>();
    for (const auto& p : c.meta.at("joint_parents")) {
      const auto v = p.get<std::int64_t>();
      m.joint_parents.push_back(v < 0 ? kRootParent : static_cast<std::uint32_t>(v));
    }
    m.face_center_ids = c.meta.value("face_center_ids", std::vector<std::uint32_t>{});
    m.eye_ids = c.meta.value("eye_ids", std::vector<std::uint32_t>{});
    m.face_vertex_ids = c.meta.value("face_vertex_ids", std::vector<std::uint32_t>{});
    m.joint_mirror = c.meta.value("joint_mirror", std::vector<std::uint32_t>{});
    m.keypoint_joints = c.meta.value("keypoint_joints", std::map<std::string, std::string>{});
    return 0;
  });
  const ContainerArray& v = c.require("vertices");
  if (v.shape.size() != 2 || v.shape[1] != 3) throw Error(ErrorCode::Format, "array 'vertices' must be Nx3");
  m.vertices = unflatten3(v.as_double());
  const ContainerArray& t = c.require("triangles");
  if (t.shape.size() != 2 || t.shape[1] != 3) throw Error(ErrorCode::Format, "array 'triangles' must be Mx3");
  const auto tris = t.as_u32();
  m.triangles.resize(t.shape[0]);
  for (std::size_t i = 0; i < m.triangles.size(); ++i) m.triangles[i] = {tris[3 * i], tris[3 * i + 1], tris[3 * i + 2]};
  const ContainerArray& r = c.require("joint_rest");
  require_shape(r, {m.joint_parents.size(), 3});
  m.joint_rest = unflatten3(r.as_double());
  m.skin_weights = from_row_major(c.require("skin_weights"));
  if (const ContainerArray* b = c.find("shape_basis")) m.shape_basis = from_row_major(*b);
  if (const ContainerArray* b = c.find("expression_basis")) m.expression_basis = from_row_major(*b);
  require_valid(validate_mesh(m), "mesh asset");
  return m;
}

void save_mesh(const std::filesystem::path& path, const SkinnedMesh& mesh) { write_file_bytes(path, encode_mesh(mesh)); }

SkinnedMesh load_mesh(const std::filesystem::path& path) { return decode_mesh(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_frames(std::span<const std::vector<PolygonFrame>> frames, const json& meta) {
  const std::size_t nf = frames.size();
  const std::size_t nt = nf ? frames[0].size() : 0;
  std::vector<double> k, rot, trans;
  k.reserve(nf * nt);
  for (const auto& f : frames) {
    if (f.size() != nt) throw Error(ErrorCode::DimensionMismatch, "every frame must have the same triangle count");
    for (const PolygonFrame& p : f) {
      k.push_back(p.k);
      rot.insert(rot.end(), {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()});
      trans.insert(trans.end(), {p.translation.x(), p.translation.y(), p.translation.z()});
    }
  }
  Container c;
  c.magic = std::string(kFramesMagic);
  c.version = kFormatVersion;
  c.meta = meta.is_object() ? meta : json::object();
  c.meta["frame_count"] = nf;
  c.meta["triangle_count"] = nt;
  c.meta["rotation_order"] = "wxyz";
  c.arrays.push_back(ContainerArray::from_f32("k", {nf, nt}, k));
  c.arrays.push_back(ContainerArray::from_f32("rot", {nf, nt, 4}, rot));
  c.arrays.push_back(ContainerArray::from_f32("trans", {nf, nt, 3}, trans));
  return encode_container(c);
}

std::vector<std::vector<PolygonFrame>> decode_frames(std::span<const std::uint8_t> bytes) {
  const Container c = decode_container(bytes, kFramesMagic, kFormatVersion);
  const std::size_t nf = guarded("frames metadata", [&] { return c.meta.at("frame_count").get<std::size_t>(); });
  const std::size_t nt = guarded("frames metadata", [&] { return c.meta.at("triangle_count").get<std::size_t>(); });
  const ContainerArray& ka = c.require("k");
  const ContainerArray& ra = c.require("rot");
  const ContainerArray& ta = c.require("trans");
  require_shape(ka, {nf, nt});
  require_shape(ra, {nf, nt, 4});
  require_shape(ta, {nf, nt, 3});
  const auto k = ka.as_double(), r = ra.as_double(), t = ta.as_double();
  std::vector<std::vector<PolygonFrame>> out(nf, std::vector<PolygonFrame>(nt));
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t i = 0; i < nt; ++i) {
      const std::size_t e = f * nt + i;
      PolygonFrame& p = out[f][i];
      p.k = k[e];
      p.rotation = Quat(r[4 * e], r[4 * e + 1], r[4 * e + 2], r[4 * e + 3]);
      p.translation = Vec3(t[3 * e], t[3 * e + 1], t[3 * e + 2]);
    }
  }
  return out;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

json keypoints_to_json(const KeypointSequence& seq) {
  json frames = json::array();
  for (const auto& f : seq.frames) {
    json row = json::array();
    for (const Keypoint& k : f) {
      json e = {k.x, k.y, k.confidence};
      if (k.synthetic) e.push_back(true);
      row.push_back(e);
    }
    frames.push_back(row);
  }
  return {{"layout", seq.layout}, {"frames", frames}};
}

KeypointSequence keypoints_from_json(const json& j) {
  KeypointSequence seq;
  guarded("keypoint file", [&] {
    seq.layout = j.at("layout").get<std::vector<std::string>>();
    for (const auto& f : j.at("frames")) {
      std::vector<Keypoint> row;
      for (const auto& e : f) {
        if (!e.is_array() || e.size() < 3 || e.size() > 4) {
          throw Error(ErrorCode::Format, "keypoint entries must be [x, y, confidence] in frame " +
                                             std::to_string(seq.frames.size()));
        }
        Keypoint k{e[0].get<double>(), e[1].get<double>(), e[2].get<double>(), e.size() == 4 && e[3].get<bool>()};
        row.push_back(k);
      }
      seq.frames.push_back(std::move(row));
    }
    return 0;
  });
  require_valid(validate_keypoints(seq), "keypoint sequence");
  return seq;
}

void save_keypoints(const std::filesystem::path& path, const KeypointSequence& seq) {
  write_json(path, keypoints_to_json(seq));
}

KeypointSequence load_keypoints(const std::filesystem::path& path) { return keypoints_from_json(read_json(path)); }

json gap_report_to_json(const GapReport& report) {
  json gaps = json::array(), unfillable = json::array();
  for (const auto& g : report.gaps) {
    gaps.push_back({{"side", to_string(g.side)},
                    {"last_visible", g.last_visible},
                    {"first_reappear", g.first_reappear},
                    {"n", g.n}});
  }
  for (const auto& r : report.unfillable) {
    unfillable.push_back({{"side", to_string(r.side)}, {"first", r.first}, {"last", r.last}});
  }
  return {{"gaps", gaps}, {"unfillable", unfillable}};
}

json pose_to_json(const PoseParams& pose) {
  json rot = json::array(), off = json::array();
  for (const Vec3& r : pose.joint_rotations) rot.push_back({r.x(), r.y(), r.z()});
  for (const Vec3& o : pose.joint_offsets) off.push_back({o.x(), o.y(), o.z()});
  return {{"joint_rotations", rot},
          {"root_translation", {pose.root_translation.x(), pose.root_translation.y(), pose.root_translation.z()}},
          {"shape", vec_json(pose.shape)},
          {"joint_offsets", off},
          {"expression", vec_json(pose.expression)}};
}

PoseParams pose_from_json(const json& j, const SkinnedMesh& mesh) {
  PoseParams pose = PoseParams::neutral(mesh);
  guarded("pose", [&] {
    if (!j.is_object()) throw Error(ErrorCode::Format, "pose must be a JSON object");
    if (j.contains("joint_rotations")) {
      const json& r = j["joint_rotations"];
      if (r.is_object()) {
        for (const auto& [name, value] : r.items()) {
          const auto idx = mesh.joint_index(name);
          if (!idx) throw Error(ErrorCode::Format, "unknown joint '" + name + "' in pose");
          pose.joint_rotations[*idx] = vec3_from(value, "rotation of joint " + name);
        }
      } else {
        if (r.size() != mesh.joint_count()) {
          throw Error(ErrorCode::Format, "pose lists " + std::to_string(r.size()) + " joint rotations, skeleton has " +
                                             std::to_string(mesh.joint_count()));
        }
        for (std::size_t i = 0; i < r.size(); ++i) {
          pose.joint_rotations[i] = vec3_from(r[i], "rotation of joint " + std::to_string(i));
        }
      }
    }
    if (j.contains("root_translation")) pose.root_translation = vec3_from(j["root_translation"], "root_translation");
    if (j.contains("shape")) {
      const auto v = j["shape"].get<std::vector<double>>();
      if (!v.empty()) pose.shape = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("expression")) {
      const auto v = j["expression"].get<std::vector<double>>();
      if (!v.empty()) pose.expression = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("joint_offsets")) {
      const json& o = j["joint_offsets"];
      if (o.size() != mesh.joint_count()) throw Error(ErrorCode::Format, "joint_offsets length does not match the skeleton");
      for (std::size_t i = 0; i < o.size(); ++i) pose.joint_offsets[i] = vec3_from(o[i], "joint offset");
    }
    return 0;
  });
  require_valid(validate_pose(mesh, pose), "pose");
  return pose;
}

json poses_to_json(const SkinnedMesh& mesh, const PoseFile& file) {
  json list = json::array();
  for (const PoseParams& p : file.poses) list.push_back(pose_to_json(p));
  return {{"joint_names", mesh.joint_names}, {"fps", file.fps}, {"poses", list}, {"failed", file.failed}};
}

PoseFile poses_from_json(const json& j, const SkinnedMesh& mesh) {
  PoseFile file;
  if (j.is_object() && j.contains("poses")) {
    guarded("pose file", [&] {
      if (j.contains("joint_names") && j["joint_names"].get<std::vector<std::string>>() != mesh.joint_names) {
        throw Error(ErrorCode::Format, "pose file joint names do not match the mesh skeleton");
      }
      for (const auto& p : j["poses"]) file.poses.push_back(pose_from_json(p, mesh));
      file.failed = j.value("failed", std::vector<std::size_t>{});
      file.fps = j.value("fps", 30.0);
      return 0;
    });
  } else {
    file.poses.push_back(pose_from_json(j, mesh));
  }
  return file;
}

void save_poses(const std::filesystem::path& path, const SkinnedMesh& mesh, const PoseFile& file) {
  write_json(path, poses_to_json(mesh, file));
}

PoseFile load_poses(const std::filesystem::path& path, const SkinnedMesh& mesh) {
  return poses_from_json(read_json(path), mesh);
}

json camera_to_json(const Camera& cam) {
  return {{"fx", cam.fx},
          {"fy", cam.fy},
          {"cx", cam.cx},
          {"cy", cam.cy},
          {"rotation", {cam.rotation.w(), cam.rotation.x(), cam.rotation.y(), cam.rotation.z()}},
          {"translation", {cam.translation.x(), cam.translation.y(), cam.translation.z()}},
          {"width", cam.width},
          {"height", cam.height}};
}

Camera camera_from_json(const json& j) {
  Camera c = guarded("camera", [&] {
    Camera cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    if (j.contains("rotation")) {
      const auto r = j["rotation"].get<std::vector<double>>();
      if (r.size() != 4) throw Error(ErrorCode::Format, "camera rotation must be [w, x, y, z]");
      cam.rotation = Quat(r[0], r[1], r[2], r[3]);
    }
    if (j.contains("translation")) cam.translation = vec3_from(j["translation"], "camera translation");
    return cam;
  });
  require_valid(validate_camera(c), "camera");
  return c;
}

std::vector<Camera> load_cameras(const std::filesystem::path& path) {
  const json j = read_json(path);
  std::vector<Camera> out;
  if (j.is_object() && j.contains("cameras")) {
    for (const auto& c : j["cameras"]) out.push_back(camera_from_json(c));
  } else {
    out.push_back(camera_from_json(j));
  }
  if (out.empty()) throw Error(ErrorCode::Format, "camera file lists no cameras");
  return out;
}

void save_cameras(const std::filesystem::path& path, std::span<const Camera> cams) {
  if (cams.size() == 1) {
    write_json(path, camera_to_json(cams[0]));
    return;
  }
  json list = json::array();
  for (const Camera& c : cams) list.push_back(camera_to_json(c));
  write_json(path, {{"cameras", list}});
}

std::vector<std::optional<std::vector<Vec3>>> load_face_targets(const std::filesystem::path& path) {
  const json j = read_json(path);
  auto parse = [](const json& list) {
    std::vector<Vec3> v;
    for (const auto& p : list) v.push_back(vec3_from(p, "face target vertex"));
    return v;
  };
  return guarded("face targets", [&] {
    std::vector<std::optional<std::vector<Vec3>>> out;
    if (j.is_object() && j.contains("frames")) {
      for (const auto& f : j["frames"]) {
        if (f.is_null()) {
          out.emplace_back(std::nullopt);
        } else {
          out.emplace_back(parse(f));
        }
      }
    } else {
      out.emplace_back(parse(j));
    }
    return out;
  });
}

}  // namespace meshsplat
