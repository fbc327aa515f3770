#include "meshsplat/synthetic.hpp"

#include "meshsplat/error.hpp"
#include "meshsplat/fitting.hpp"
#include "meshsplat/render.hpp"

#include <cmath>
#include <map>
#include <random>

namespace meshsplat {

namespace {

void rigid_single_joint(SkinnedMesh& m) {
  m.joint_names = {"root"};
  m.joint_parents = {kRootParent};
  m.joint_rest = {Vec3::Zero()};
  m.joint_mirror = {0};
  m.skin_weights = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(m.vertices.size()), 1);
}

struct JointDef {
  const char* name;
  const char* parent;
  Vec3 rest;
};

// Left is +x. Right-side joints are mirrored from these.
const std::vector<JointDef>& center_joints() {
  static const std::vector<JointDef> j = {
      {"pelvis", nullptr, {0.0, 1.0, 0.0}},   {"spine", "pelvis", {0.0, 1.2, 0.0}},
      {"chest", "spine", {0.0, 1.4, 0.0}},    {"neck", "chest", {0.0, 1.58, 0.0}},
      {"head", "neck", {0.0, 1.66, 0.0}},     {"head_top", "head", {0.0, 1.92, 0.0}},
      {"nose", "head", {0.0, 1.76, 0.13}},     {"spine_back", "spine", {0.0, 1.2, -0.12}},
      {"throat", "neck", {0.0, 1.58, 0.05}},
  };
  return j;
}

const std::vector<JointDef>& left_joints() {
  static const std::vector<JointDef> j = {
      {"left_hip", "pelvis", {0.1, 0.98, 0.0}},          {"left_knee", "left_hip", {0.1, 0.55, 0.0}},
      {"left_ankle", "left_knee", {0.1, 0.1, 0.0}},      {"left_toe", "left_ankle", {0.1, 0.02, 0.16}},
      {"left_heel", "left_ankle", {0.1, 0.02, -0.05}},   {"left_shoulder", "chest", {0.2, 1.5, 0.0}},
      {"left_elbow", "left_shoulder", {0.46, 1.5, 0.0}}, {"left_wrist", "left_elbow", {0.7, 1.5, 0.0}},
      {"left_palm", "left_wrist", {0.79, 1.5, 0.0}},     {"left_hand_thumb", "left_wrist", {0.75, 1.5, 0.06}},
      {"left_hip_front", "left_hip", {0.1, 0.98, 0.08}}, {"left_kneecap", "left_knee", {0.1, 0.55, 0.06}},
      {"left_acromion", "left_shoulder", {0.2, 1.56, 0.0}}, {"left_olecranon", "left_elbow", {0.46, 1.5, -0.05}},
  };
  return j;
}

std::string mirrored_name(const std::string& n) {
  if (n.rfind("left_", 0) == 0) return "right_" + n.substr(5);
  if (n.rfind("right_", 0) == 0) return "left_" + n.substr(6);
  return n;
}

struct BoxDef {
  const char* owner;
  const char* from;
  const char* to;
  double half_width;
  bool mirror;
};

const std::vector<BoxDef>& boxes() {
  static const std::vector<BoxDef> b = {
      {"pelvis", "pelvis", "spine", 0.14, false},
      {"spine", "spine", "chest", 0.14, false},
      {"chest", "chest", "neck", 0.15, false},
      {"neck", "neck", "head", 0.05, false},
      {"head", "head", "head_top", 0.1, false},
      {"left_hip", "left_hip", "left_knee", 0.06, true},
      {"left_knee", "left_knee", "left_ankle", 0.05, true},
      {"left_ankle", "left_heel", "left_toe", 0.045, true},
      {"left_shoulder", "left_shoulder", "left_elbow", 0.045, true},
      {"left_elbow", "left_elbow", "left_wrist", 0.04, true},
      {"left_wrist", "left_wrist", "left_palm", 0.035, true},
  };
  return b;
}

}  // namespace

SkinnedMesh two_triangle_mesh() {
  SkinnedMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  rigid_single_joint(m);
  return m;
}

SkinnedMesh icosphere(int subdivisions, double radius) {
  if (subdivisions < 0) throw Error(ErrorCode::InvalidArgument, "subdivisions must be nonnegative");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (Vec3& p : v) p.normalize();
  std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      const auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const auto id = static_cast<std::uint32_t>(v.size() - 1);
      mid.emplace(key, id);
      return id;
    };
    std::vector<Triangle> next;
    for (const Triangle& tri : f) {
      const std::uint32_t a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  SkinnedMesh m;
  for (Vec3& p : v) p *= radius;
  m.vertices = std::move(v);
  m.triangles = std::move(f);
  rigid_single_joint(m);
  return m;
}

SkinnedMesh humanoid(const HumanoidOptions& opts) {
  if (opts.subdivisions < 1) throw Error(ErrorCode::InvalidArgument, "humanoid needs at least one subdivision");
  SkinnedMesh m;
  std::vector<JointDef> defs = center_joints();
  std::vector<std::string> names, parents;
  for (const auto& d : defs) {
    names.emplace_back(d.name);
    parents.emplace_back(d.parent ? d.parent : "");
  }
  std::vector<Vec3> rests;
  for (const auto& d : defs) rests.push_back(d.rest);
  for (int side = 0; side < 2; ++side) {
    for (const auto& d : left_joints()) {
      std::string n = d.name, p = d.parent;
      Vec3 r = d.rest;
      if (side == 1) {
        n = mirrored_name(n);
        p = mirrored_name(p);
        r.x() = -r.x();
      }
      names.push_back(n);
      parents.push_back(p);
      rests.push_back(r);
    }
  }
  m.joint_names = names;
  m.joint_rest = rests;
  for (const auto& p : parents) {
    if (p.empty()) {
      m.joint_parents.push_back(kRootParent);
    } else {
      m.joint_parents.push_back(*m.joint_index(p));
    }
  }
  for (const auto& n : names) m.joint_mirror.push_back(*m.joint_index(mirrored_name(n)));

  const int s = opts.subdivisions;
  std::vector<std::uint32_t> owner;
  auto add_box = [&](std::uint32_t own, const Vec3& a, const Vec3& b, double h, bool head) {
    const Vec3 d = (b - a).normalized();
    const double len = (b - a).norm();
    Vec3 v = std::abs(d.z()) > 0.9 ? Vec3(0, 1, 0) : Vec3(0, 0, 1);
    const Vec3 u = v.cross(d).normalized();
    v = d.cross(u);
    // six faces: (normal axis, sign); grid over the other two axes
    const Vec3 axes[3] = {d * len, u * (2 * h), v * (2 * h)};
    const Vec3 origin = a - u * h - v * h;
    for (int n = 0; n < 3; ++n) {
      for (int sign = 0; sign < 2; ++sign) {
        const Vec3& e1 = axes[(n + 1) % 3];
        const Vec3& e2 = axes[(n + 2) % 3];
        const Vec3 base = origin + (sign ? axes[n] : Vec3::Zero());
        const auto first = static_cast<std::uint32_t>(m.vertices.size());
        for (int i = 0; i <= s; ++i) {
          for (int j = 0; j <= s; ++j) {
            m.vertices.push_back(base + e1 * (double(i) / s) + e2 * (double(j) / s));
            owner.push_back(own);
            if (head && n == 2 && sign == 1) {
              m.face_vertex_ids.push_back(static_cast<std::uint32_t>(m.vertices.size() - 1));
              if (2 * i > s) m.eye_ids.push_back(static_cast<std::uint32_t>(m.vertices.size() - 1));
            }
            if (head) m.face_center_ids.push_back(static_cast<std::uint32_t>(m.vertices.size() - 1));
          }
        }
        for (int i = 0; i < s; ++i) {
          for (int j = 0; j < s; ++j) {
            const std::uint32_t p00 = first + static_cast<std::uint32_t>(i * (s + 1) + j);
            const std::uint32_t p10 = p00 + static_cast<std::uint32_t>(s + 1);
            const std::uint32_t p01 = p00 + 1, p11 = p10 + 1;
            if (sign) {
              m.triangles.push_back({p00, p10, p11});
              m.triangles.push_back({p00, p11, p01});
            } else {
              m.triangles.push_back({p00, p11, p10});
              m.triangles.push_back({p00, p01, p11});
            }
          }
        }
      }
    }
  };
  for (const BoxDef& b : boxes()) {
    for (int side = 0; side < (b.mirror ? 2 : 1); ++side) {
      auto name = [&](const char* n) { return side ? mirrored_name(n) : std::string(n); };
      const std::uint32_t own = *m.joint_index(name(b.owner));
      const Vec3 a = m.joint_rest[*m.joint_index(name(b.from))];
      const Vec3 c = m.joint_rest[*m.joint_index(name(b.to))];
      add_box(own, a, c, b.half_width, std::string(b.owner) == "head");
    }
  }
  m.skin_weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.vertices.size()),
                                         static_cast<Eigen::Index>(m.joint_count()));
  for (std::size_t i = 0; i < owner.size(); ++i) m.skin_weights(static_cast<Eigen::Index>(i), owner[i]) = 1.0;

  const auto nv = static_cast<Eigen::Index>(m.vertices.size());
  if (opts.shape_count > 0) {
    m.shape_basis = Eigen::MatrixXd::Zero(3 * nv, opts.shape_count);
    for (Eigen::Index i = 0; i < nv; ++i) {
      const Vec3& p = m.vertices[static_cast<std::size_t>(i)];
      for (int b = 0; b < opts.shape_count; ++b) {
        // alternating height and girth directions
        const int axis = b % 2 == 0 ? 1 : 0;
        m.shape_basis(3 * i + axis, b) = 0.05 * p[axis] / (1 + b / 2);
      }
    }
  }
  if (opts.expression_count > 0) {
    m.expression_basis = Eigen::MatrixXd::Zero(3 * nv, opts.expression_count);
    for (std::uint32_t id : m.face_vertex_ids) {
      for (int b = 0; b < opts.expression_count; ++b) m.expression_basis(3 * id + 2, b) = 0.01 * (b + 1);
    }
  }
  return m;
}

int humanoid_subdivisions_for(std::size_t triangles) {
  const double per = 12.0 * 17.0;
  return std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(triangles) / per))));
}

std::vector<std::string> humanoid_keypoint_layout(const SkinnedMesh& mesh) { return mesh.joint_names; }

PoseParams facing_pose(const SkinnedMesh& mesh, double distance) {
  PoseParams p = PoseParams::neutral(mesh);
  const auto root = mesh.joint_order().front();
  p.joint_rotations[root] = Vec3(kPi, 0.0, 0.0);
  p.root_translation = Vec3(0.0, 0.0, distance) - mesh.joint_rest[root];
  return p;
}

ToyScene toy_scene(int width, int height, std::size_t splat_count, std::uint64_t seed) {
  ToyScene t;
  t.mesh = humanoid(HumanoidOptions{1, 0, 0});
  t.pose = facing_pose(t.mesh, 2.4);
  t.pose.root_translation.y() -= 0.45;  // center the body vertically
  t.camera = init_camera(width, height);
  InitOptions io;
  io.seed = seed;
  io.per_polygon = static_cast<int>((splat_count + t.mesh.triangle_count() - 1) / t.mesh.triangle_count());
  std::vector<Splat> all = init_splats(t.mesh, io);
  // spread the kept splats over the whole body
  const double stride = static_cast<double>(all.size()) / static_cast<double>(splat_count);
  for (std::size_t i = 0; i < splat_count && i < all.size(); ++i) {
    t.initial.push_back(all[static_cast<std::size_t>(static_cast<double>(i) * stride)]);
  }
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  t.target_splats = t.initial;
  for (Splat& s : t.target_splats) {
    s.color = Vec3(0.15 + 0.7 * uni(rng), 0.15 + 0.7 * uni(rng), 0.15 + 0.7 * uni(rng));
    s.opacity = 0.75 + 0.2 * uni(rng);
    s.log_scale += Vec3(0.15 * gauss(rng), 0.15 * gauss(rng), 0.15 * gauss(rng));
    s.mu_local += 0.01 * Vec3(gauss(rng), gauss(rng), gauss(rng));
    s.rot_local = (s.rot_local * axis_angle_to_quat(0.2 * Vec3(gauss(rng), gauss(rng), gauss(rng)))).normalized();
  }
  const AvatarRender r = render_avatar_full(t.mesh, t.pose, t.target_splats, t.camera, Vec3::Zero());
  t.target = r.image();
  t.mask = r.render.target.alpha;
  return t;
}

}  // namespace meshsplat
