#include "meshsplat/binding.hpp"
#include "meshsplat/body_model.hpp"
#include "meshsplat/error.hpp"
#include "meshsplat/fitting.hpp"
#include "meshsplat/io.hpp"
#include "meshsplat/kinematics.hpp"
#include "meshsplat/losses.hpp"
#include "meshsplat/render.hpp"
#include "meshsplat/synthetic.hpp"
#include "meshsplat/trainer.hpp"
#include "meshsplat/viewer_bundle.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace meshsplat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// JSON crosses the boundary as text; the Python side turns it into dicts.
nlohmann::json parse(const std::string& text) { return nlohmann::json::parse(text); }

Array image_to_array(const Image& img) {
  Array out({img.height, img.width, 3});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Image array_to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw Error(ErrorCode::ShapeMismatch, "image must be (H, W, 3)");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

py::dict splats_to_dict(std::span<const Splat> splats) {
  const auto n = static_cast<py::ssize_t>(splats.size());
  Array mu({n, py::ssize_t{3}}), rot({n, py::ssize_t{4}}), ls({n, py::ssize_t{3}}), color({n, py::ssize_t{3}});
  Array opacity(n);
  py::array_t<std::uint32_t> poly(n);
  for (py::ssize_t i = 0; i < n; ++i) {
    const Splat& s = splats[static_cast<std::size_t>(i)];
    const Vec4 q = to_wxyz(s.rot_local);
    for (int c = 0; c < 3; ++c) {
      mu.mutable_at(i, c) = s.mu_local[c];
      ls.mutable_at(i, c) = s.log_scale[c];
      color.mutable_at(i, c) = s.color[c];
    }
    for (int c = 0; c < 4; ++c) rot.mutable_at(i, c) = q[c];
    opacity.mutable_at(i) = s.opacity;
    poly.mutable_at(i) = s.polygon_id;
  }
  py::dict d;
  d["mu"] = mu;
  d["rotation"] = rot;
  d["log_scale"] = ls;
  d["color"] = color;
  d["opacity"] = opacity;
  d["polygon_id"] = poly;
  return d;
}

std::vector<Splat> splats_from_dict(const py::dict& d) {
  const Array mu = d["mu"].cast<Array>();
  const Array rot = d["rotation"].cast<Array>();
  const Array ls = d["log_scale"].cast<Array>();
  const Array color = d["color"].cast<Array>();
  const Array opacity = d["opacity"].cast<Array>();
  const auto poly = d["polygon_id"].cast<py::array_t<std::uint32_t, py::array::forcecast>>();
  const py::ssize_t n = opacity.size();
  if (mu.size() != 3 * n || rot.size() != 4 * n || ls.size() != 3 * n || color.size() != 3 * n || poly.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "splat arrays disagree on the splat count");
  }
  std::vector<Splat> out(static_cast<std::size_t>(n));
  for (py::ssize_t i = 0; i < n; ++i) {
    Splat& s = out[static_cast<std::size_t>(i)];
    s.mu_local = Vec3(mu.data()[3 * i], mu.data()[3 * i + 1], mu.data()[3 * i + 2]);
    s.rot_local = from_wxyz(Vec4(rot.data()[4 * i], rot.data()[4 * i + 1], rot.data()[4 * i + 2], rot.data()[4 * i + 3]));
    s.log_scale = Vec3(ls.data()[3 * i], ls.data()[3 * i + 1], ls.data()[3 * i + 2]);
    s.color = Vec3(color.data()[3 * i], color.data()[3 * i + 1], color.data()[3 * i + 2]);
    s.opacity = opacity.data()[i];
    s.polygon_id = poly.data()[i];
  }
  return out;
}

Vec3 to_vec3(const std::vector<double>& v) {
  if (v.size() != 3) throw Error(ErrorCode::InvalidArgument, "expected three components");
  return {v[0], v[1], v[2]};
}

py::dict frames_to_dict(std::span<const PolygonFrame> frames) {
  const auto n = static_cast<py::ssize_t>(frames.size());
  Array k(n), rot({n, py::ssize_t{4}}), trans({n, py::ssize_t{3}});
  for (py::ssize_t i = 0; i < n; ++i) {
    const PolygonFrame& f = frames[static_cast<std::size_t>(i)];
    k.mutable_at(i) = f.k;
    const Vec4 q = to_wxyz(f.rotation);
    for (int c = 0; c < 4; ++c) rot.mutable_at(i, c) = q[c];
    for (int c = 0; c < 3; ++c) trans.mutable_at(i, c) = f.translation[c];
  }
  py::dict d;
  d["k"] = k;
  d["rotation"] = rot;
  d["translation"] = trans;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mesh-bound Gaussian splat avatars";

  py::register_exception<Error>(m, "MeshsplatError", PyExc_RuntimeError);

  py::class_<SkinnedMesh>(m, "Mesh")
      .def_static("load", &load_mesh, py::arg("path"))
      .def("save", [](const SkinnedMesh& mesh, const std::filesystem::path& p) { save_mesh(p, mesh); })
      .def_property_readonly("vertex_count", &SkinnedMesh::vertex_count)
      .def_property_readonly("triangle_count", &SkinnedMesh::triangle_count)
      .def_property_readonly("joint_count", &SkinnedMesh::joint_count)
      .def_property_readonly("joint_names", [](const SkinnedMesh& mesh) { return mesh.joint_names; })
      .def_property_readonly("vertices",
                             [](const SkinnedMesh& mesh) {
                               Array a({static_cast<py::ssize_t>(mesh.vertex_count()), py::ssize_t{3}});
                               for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
                                 for (int c = 0; c < 3; ++c) {
                                   a.mutable_at(static_cast<py::ssize_t>(i), c) = mesh.vertices[i][c];
                                 }
                               }
                               return a;
                             })
      .def_property_readonly("triangles", [](const SkinnedMesh& mesh) {
        py::array_t<std::uint32_t> a({static_cast<py::ssize_t>(mesh.triangle_count()), py::ssize_t{3}});
        for (std::size_t i = 0; i < mesh.triangle_count(); ++i) {
          for (int c = 0; c < 3; ++c) a.mutable_at(static_cast<py::ssize_t>(i), c) = mesh.triangles[i][c];
        }
        return a;
      });

  m.def("humanoid", [](int subdivisions) {
    HumanoidOptions o;
    o.subdivisions = subdivisions;
    return humanoid(o);
  }, py::arg("subdivisions") = 1);
  m.def("icosphere", &icosphere, py::arg("subdivisions"), py::arg("radius") = 1.0);
  m.def("keypoint_layout", &humanoid_keypoint_layout, py::arg("mesh"));

  m.def("_neutral_pose", [](const SkinnedMesh& mesh) { return pose_to_json(PoseParams::neutral(mesh)).dump(); });
  m.def("_facing_pose", [](const SkinnedMesh& mesh, double d) { return pose_to_json(facing_pose(mesh, d)).dump(); });
  m.def("_init_camera", [](int w, int h, double f) { return camera_to_json(init_camera(w, h, f)).dump(); });

  m.def("_init_splats", [](const SkinnedMesh& mesh, double scale_fraction, int per_polygon, double opacity,
                           std::uint64_t seed) {
    InitOptions o;
    o.scale_fraction = scale_fraction;
    o.per_polygon = per_polygon;
    o.opacity = opacity;
    o.seed = seed;
    return splats_to_dict(init_splats(mesh, o));
  });
  m.def("_load_splats", [](const std::filesystem::path& p) { return splats_to_dict(load_splats(p)); });
  m.def("_save_splats", [](const std::filesystem::path& p, const py::dict& d, std::size_t triangles) {
    save_splats(p, splats_from_dict(d), triangles);
  });

  m.def("_polygon_frames", [](const SkinnedMesh& mesh, const std::string& pose) {
    const PoseParams p = pose_from_json(parse(pose), mesh);
    return frames_to_dict(polygon_frames(mesh, mesh.vertices, skin_vertices(mesh, p)));
  });
  m.def("_render", [](const SkinnedMesh& mesh, const py::dict& splats, const std::string& pose,
                      const std::string& camera, const std::vector<double>& bg) {
    const std::vector<Splat> s = splats_from_dict(splats);
    Image img;
    {
      py::gil_scoped_release release;
      img = render_avatar(mesh, pose_from_json(parse(pose), mesh), s, camera_from_json(parse(camera)), to_vec3(bg));
    }
    return image_to_array(img);
  });

  m.def("_preprocess_keypoints", [](const std::string& seq, double threshold) {
    const PreprocessResult r = preprocess_keypoints(keypoints_from_json(parse(seq)), threshold);
    return py::make_tuple(keypoints_to_json(r.keypoints).dump(), gap_report_to_json(r.report).dump());
  });

  m.def("_project_keypoints", [](const SkinnedMesh& mesh, const std::string& pose, const std::string& camera) {
    KeypointSequence seq;
    seq.layout = humanoid_keypoint_layout(mesh);
    seq.frames.push_back(
        project_keypoints(mesh, pose_from_json(parse(pose), mesh), seq.layout, camera_from_json(parse(camera))));
    return keypoints_to_json(seq).dump();
  });

  m.def("_fit_frame", [](const SkinnedMesh& mesh, const std::string& keypoints, std::size_t frame,
                         const std::string& camera, const std::string& init, int max_iterations) {
    const KeypointSequence seq = keypoints_from_json(parse(keypoints));
    if (frame >= seq.frames.size()) throw Error(ErrorCode::IndexOutOfRange, "no such keypoint frame");
    FitOptions o;
    o.max_iterations = max_iterations;
    FitResult r;
    {
      py::gil_scoped_release release;
      r = fit_frame(mesh, pose_from_json(parse(init), mesh), seq.layout, seq.frames[frame], nullptr,
                    camera_from_json(parse(camera)), o);
    }
    nlohmann::json rep = {{"iterations", r.report.iterations},
                          {"converged", r.report.converged},
                          {"stop_reason", r.report.stop_reason},
                          {"initial_loss", r.report.initial_loss},
                          {"loss_history", r.report.loss_history},
                          {"loss", to_json(r.report.final_loss.breakdown)}};
    return py::make_tuple(pose_to_json(r.pose).dump(), rep.dump());
  });

  m.def("_train", [](const SkinnedMesh& mesh, const py::dict& splats, const std::vector<std::string>& poses,
                     const std::vector<std::string>& cameras, const std::vector<Array>& images,
                     const std::vector<Array>& masks, int iterations, std::uint64_t seed, bool random_background) {
    if (poses.size() != images.size() || cameras.size() != images.size()) {
      throw Error(ErrorCode::DimensionMismatch, "need one pose and camera per image");
    }
    if (!masks.empty() && masks.size() != images.size()) {
      throw Error(ErrorCode::DimensionMismatch, "need one mask per image");
    }
    std::vector<TrainFrame> frames;
    for (std::size_t i = 0; i < images.size(); ++i) {
      TrainFrame f{pose_from_json(parse(poses[i]), mesh), camera_from_json(parse(cameras[i])),
                   array_to_image(images[i]), {}};
      if (!masks.empty()) f.mask.assign(masks[i].data(), masks[i].data() + masks[i].size());
      frames.push_back(std::move(f));
    }
    TrainOptions o;
    o.iterations = iterations;
    o.seed = seed;
    o.random_background = random_background;
    const std::vector<Splat> init = splats_from_dict(splats);
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train(mesh, init, frames, o);
    }
    std::vector<std::string> log;
    for (const IterationLog& e : r.log) log.push_back(to_json(e).dump());
    return py::make_tuple(splats_to_dict(r.splats), log, r.halted, r.halt_reason);
  });

  m.def("psnr", [](const Array& a, const Array& b) { return psnr(array_to_image(a), array_to_image(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(array_to_image(a), array_to_image(b)); });

  m.def("relative_deltas", [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    ChainState sa, sb;
    sa.theta_se = a[0];
    sa.theta_ew = a[1];
    sa.theta_wp = a[2];
    sb.theta_se = b[0];
    sb.theta_ew = b[1];
    sb.theta_wp = b[2];
    const ChainDeltas d = relative_deltas(sa, sb);
    return std::array<double, 3>{d.se, d.ew, d.wp};
  }, py::arg("before"), py::arg("after"));

  m.def("_export_viewer", [](const std::filesystem::path& dir, const SkinnedMesh& mesh, const py::dict& splats,
                             const std::map<std::string, std::vector<std::string>>& clips, double fps) {
    std::vector<AnimationClip> cl;
    for (const auto& [name, poses] : clips) {
      AnimationClip c{name, {}, fps};
      for (const std::string& p : poses) c.poses.push_back(pose_from_json(parse(p), mesh));
      cl.push_back(std::move(c));
    }
    return export_viewer_bundle(dir, mesh, splats_from_dict(splats), cl).dump();
  });
  m.def("pose_frames_payload", [](const SkinnedMesh& mesh, const std::string& pose) {
    const std::vector<std::uint8_t> b = pose_frames_payload(mesh, pose_from_json(parse(pose), mesh));
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });
  m.def("_decode_frames", [](const py::bytes& data) {
    const std::string s = data;
    const auto frames = decode_frames(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    py::list out;
    for (const auto& f : frames) out.append(frames_to_dict(f));
    return out;
  });
}
