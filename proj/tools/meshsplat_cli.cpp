// meshsplat command-line tool. Every subcommand is a thin composition of
// library operations.

#include "meshsplat/binding.hpp"
#include "meshsplat/error.hpp"
#include "meshsplat/fitting.hpp"
#include "meshsplat/io.hpp"
#include "meshsplat/kinematics.hpp"
#include "meshsplat/render.hpp"
#include "meshsplat/server.hpp"
#include "meshsplat/synthetic.hpp"
#include "meshsplat/trainer.hpp"
#include "meshsplat/viewer_bundle.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace meshsplat;

namespace {

struct CameraArgs {
  std::string file;
  int width = 512;
  int height = 512;
  double focal_factor = kDefaultFocalFactor;

  void add(CLI::App* app) {
    app->add_option("--camera", file, "Camera JSON (one camera or {\"cameras\": [...]})")->check(CLI::ExistingFile);
    app->add_option("--width", width, "Image width when no camera file is given")->check(CLI::PositiveNumber);
    app->add_option("--height", height, "Image height when no camera file is given")->check(CLI::PositiveNumber);
    app->add_option("--focal-factor", focal_factor, "Focal length as a multiple of max(width, height)")
        ->check(CLI::PositiveNumber);
  }

  std::vector<Camera> load() const {
    if (!file.empty()) return load_cameras(file);
    return {init_camera(width, height, focal_factor)};
  }
};

const Camera& camera_for(const std::vector<Camera>& cams, std::size_t frame) {
  if (cams.size() == 1) return cams[0];
  if (frame >= cams.size()) throw Error(ErrorCode::DimensionMismatch, "no camera for frame " + std::to_string(frame));
  return cams[frame];
}

Vec3 parse_color(const std::vector<double>& v) {
  if (v.size() != 3) throw Error(ErrorCode::InvalidArgument, "background needs three components");
  return {v[0], v[1], v[2]};
}

std::vector<double> mask_from_image(const Image& img) {
  std::vector<double> m(img.pixel_count());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = img.data[3 * i];
  return m;
}

Image mask_to_image(const std::vector<double>& mask, int w, int h) {
  Image img(w, h);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (int c = 0; c < 3; ++c) img.data[3 * i + static_cast<std::size_t>(c)] = mask[i];
  }
  return img;
}

std::string frame_name(const std::string& prefix, std::size_t i, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return prefix + buf + ext;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

BundleServer* g_server = nullptr;
extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mesh-bound Gaussian splat avatars: keypoint preprocessing, pose fitting, training and rendering"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Detect missing hands and fill keypoint gaps");
  std::string pre_in, pre_out, pre_report;
  double pre_threshold = kDefaultHandThreshold;
  pre->add_option("--keypoints", pre_in, "Keypoint JSON")->required()->check(CLI::ExistingFile);
  pre->add_option("--threshold", pre_threshold, "Wrist/palm confidence threshold")->check(CLI::Range(0.0, 1.0));
  pre->add_option("--out", pre_out, "Filled keypoint JSON (default: <input>.filled.json)");
  pre->add_option("--report", pre_report, "Gap report JSON (default: stdout)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit per-frame poses to 2D keypoints");
  std::string fit_mesh, fit_kp, fit_init, fit_face, fit_out, fit_report;
  bool fit_cold = false;
  int fit_iters = 200;
  double fit_distance = 3.0;
  CameraArgs fit_cam;
  fit->add_option("--mesh", fit_mesh, "Mesh asset")->required()->check(CLI::ExistingFile);
  fit->add_option("--keypoints", fit_kp, "Keypoint JSON")->required()->check(CLI::ExistingFile);
  fit->add_option("--init", fit_init, "Initial pose JSON (default: neutral)")->check(CLI::ExistingFile);
  fit->add_option("--face-targets", fit_face, "Per-frame face target vertices")->check(CLI::ExistingFile);
  fit->add_option("--out", fit_out, "Output pose sequence JSON")->required();
  fit->add_option("--report", fit_report, "Per-frame convergence report JSON");
  fit->add_option("--max-iterations", fit_iters, "Iteration cap per frame")->check(CLI::PositiveNumber);
  fit->add_option("--distance", fit_distance, "Subject depth of the default initial pose")
      ->check(CLI::PositiveNumber);
  fit->add_flag("--no-warm-start", fit_cold, "Initialize every frame from the initial pose");
  fit_cam.add(fit);

  // init-splats
  auto* ini = app.add_subcommand("init-splats", "Place splats on the canonical mesh");
  std::string ini_mesh, ini_out;
  InitOptions ini_opts;
  ini->add_option("--mesh", ini_mesh, "Mesh asset")->required()->check(CLI::ExistingFile);
  ini->add_option("--out", ini_out, "Output splat asset")->required();
  ini->add_option("--per-polygon", ini_opts.per_polygon, "Splats per triangle")->check(CLI::PositiveNumber);
  ini->add_option("--scale-fraction", ini_opts.scale_fraction, "Scale as a fraction of the mean edge length")
      ->check(CLI::PositiveNumber);
  ini->add_option("--opacity", ini_opts.opacity, "Initial opacity")->check(CLI::Range(0.0, 1.0));
  ini->add_option("--seed", ini_opts.seed, "Random seed for jittered placement");

  // train
  auto* tr = app.add_subcommand("train", "Optimize splats against target images");
  std::string tr_mesh, tr_splats, tr_poses, tr_out, tr_log, tr_ckpt, tr_poses_out;
  std::vector<std::string> tr_images, tr_masks;
  std::vector<double> tr_bg = {0.0, 0.0, 0.0};
  bool tr_fixed_bg = false;
  TrainOptions tr_opts;
  CameraArgs tr_cam;
  tr->add_option("--mesh", tr_mesh, "Mesh asset")->required()->check(CLI::ExistingFile);
  tr->add_option("--splats", tr_splats, "Initial splat asset")->required()->check(CLI::ExistingFile);
  tr->add_option("--poses", tr_poses, "Pose sequence JSON, one pose per image")->required()->check(CLI::ExistingFile);
  tr->add_option("--images", tr_images, "Target images (background removed)")->required()->check(CLI::ExistingFile);
  tr->add_option("--masks", tr_masks, "Foreground masks, one per image")->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Trained splat asset")->required();
  tr->add_option("--log", tr_log, "Metrics log (JSON lines)");
  tr->add_option("--iterations", tr_opts.iterations, "Iterations")->check(CLI::NonNegativeNumber);
  tr->add_option("--seed", tr_opts.seed, "Random seed");
  tr->add_option("--checkpoint", tr_ckpt, "Checkpoint path");
  tr->add_option("--checkpoint-every", tr_opts.checkpoint_every, "Checkpoint interval")->check(CLI::NonNegativeNumber);
  tr->add_option("--background", tr_bg, "Fixed background r g b")->expected(3);
  tr->add_flag("--fixed-background", tr_fixed_bg, "Disable random backgrounds");
  tr->add_flag("--optimize-pose", tr_opts.optimize_pose, "Also optimize the per-frame poses");
  tr->add_option("--poses-out", tr_poses_out, "Write optimized poses here");
  tr->add_option("--lr-position", tr_opts.lr.position, "Position learning rate (times scene extent)");
  tr->add_option("--lr-rotation", tr_opts.lr.rotation, "Rotation learning rate");
  tr->add_option("--lr-scale", tr_opts.lr.log_scale, "Log-scale learning rate");
  tr->add_option("--lr-color", tr_opts.lr.color, "Color learning rate");
  tr->add_option("--lr-opacity", tr_opts.lr.opacity, "Opacity-logit learning rate");
  tr->add_option("--knn", tr_opts.knn_k, "Neighbors for the kNN regularizer")->check(CLI::PositiveNumber);
  tr_cam.add(tr);

  // render
  auto* rd = app.add_subcommand("render", "Render one frame");
  std::string rd_mesh, rd_splats, rd_pose, rd_out;
  std::size_t rd_frame = 0;
  std::vector<double> rd_bg = {0.0, 0.0, 0.0};
  CameraArgs rd_cam;
  rd->add_option("--mesh", rd_mesh, "Mesh asset")->required()->check(CLI::ExistingFile);
  rd->add_option("--splats", rd_splats, "Splat asset")->required()->check(CLI::ExistingFile);
  rd->add_option("--pose", rd_pose, "Pose JSON (default: neutral)")->check(CLI::ExistingFile);
  rd->add_option("--frame", rd_frame, "Frame index within a pose sequence");
  rd->add_option("--background", rd_bg, "Background r g b")->expected(3);
  rd->add_option("--out", rd_out, "Output image (.png or .f32)")->required();
  rd_cam.add(rd);

  // animate
  auto* an = app.add_subcommand("animate", "Render a pose sequence to numbered images");
  std::string an_mesh, an_splats, an_poses, an_dir, an_prefix = "frame_", an_ext = ".png";
  std::vector<double> an_bg = {0.0, 0.0, 0.0};
  CameraArgs an_cam;
  an->add_option("--mesh", an_mesh, "Mesh asset")->required()->check(CLI::ExistingFile);
  an->add_option("--splats", an_splats, "Splat asset")->required()->check(CLI::ExistingFile);
  an->add_option("--poses", an_poses, "Pose sequence JSON")->required()->check(CLI::ExistingFile);
  an->add_option("--out-dir", an_dir, "Output directory")->required();
  an->add_option("--prefix", an_prefix, "File name prefix");
  an->add_option("--format", an_ext, "Image extension (.png or .f32)");
  an->add_option("--background", an_bg, "Background r g b")->expected(3);
  an_cam.add(an);

  // metrics
  auto* me = app.add_subcommand("metrics", "Score renders against ground-truth images");
  std::string me_mesh, me_splats, me_poses, me_out;
  std::vector<std::string> me_truth;
  std::vector<double> me_bg = {0.0, 0.0, 0.0};
  bool me_timing = false;
  CameraArgs me_cam;
  me->add_option("--mesh", me_mesh, "Mesh asset")->required()->check(CLI::ExistingFile);
  me->add_option("--splats", me_splats, "Splat asset")->required()->check(CLI::ExistingFile);
  me->add_option("--poses", me_poses, "Pose sequence JSON")->required()->check(CLI::ExistingFile);
  me->add_option("--truth", me_truth, "Ground-truth images, one per pose")->required()->check(CLI::ExistingFile);
  me->add_option("--background", me_bg, "Background r g b")->expected(3);
  me->add_option("--out", me_out, "Write the metrics table here as well");
  me->add_flag("--timing", me_timing, "Include render timings");
  me_cam.add(me);

  // export-viewer
  auto* ex = app.add_subcommand("export-viewer", "Write a web viewer bundle");
  std::string ex_mesh, ex_splats, ex_out, ex_camera;
  std::vector<std::string> ex_clips;
  std::vector<double> ex_bg = {1.0, 1.0, 1.0};
  ex->add_option("--mesh", ex_mesh, "Mesh asset")->required()->check(CLI::ExistingFile);
  ex->add_option("--splats", ex_splats, "Splat asset")->required()->check(CLI::ExistingFile);
  ex->add_option("--clip", ex_clips, "Animation clip as name=poses.json (repeatable)");
  ex->add_option("--camera", ex_camera, "Default viewer camera")->check(CLI::ExistingFile);
  ex->add_option("--background", ex_bg, "Background r g b")->expected(3);
  ex->add_option("--out", ex_out, "Bundle directory")->required();

  // serve
  auto* sv = app.add_subcommand("serve", "Serve a viewer bundle with the pose endpoint");
  std::string sv_dir, sv_host = "127.0.0.1";
  int sv_port = 8080;
  sv->add_option("--bundle", sv_dir, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  sv->add_option("--host", sv_host, "Listen address");
  sv->add_option("--port", sv_port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));

  // synth
  auto* sy = app.add_subcommand("synth", "Write procedural fixture assets");
  std::string sy_dir, sy_kind = "humanoid";
  int sy_sub = 1, sy_size = 64;
  std::uint64_t sy_seed = 7;
  sy->add_option("--kind", sy_kind, "humanoid or toy")->check(CLI::IsMember({"humanoid", "toy"}));
  sy->add_option("--out-dir", sy_dir, "Output directory")->required();
  sy->add_option("--subdivisions", sy_sub, "Humanoid box subdivisions")->check(CLI::PositiveNumber);
  sy->add_option("--size", sy_size, "Image width and height")->check(CLI::PositiveNumber);
  sy->add_option("--seed", sy_seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*pre) {
      const KeypointSequence seq = load_keypoints(pre_in);
      const PreprocessResult r = preprocess_keypoints(seq, pre_threshold);
      const std::string out = pre_out.empty() ? fs::path(pre_in).replace_extension(".filled.json").string() : pre_out;
      save_keypoints(out, r.keypoints);
      const nlohmann::json report = gap_report_to_json(r.report);
      if (pre_report.empty()) {
        print_json(report);
      } else {
        write_json(pre_report, report);
      }
    } else if (*fit) {
      const SkinnedMesh mesh = load_mesh(fit_mesh);
      const KeypointSequence seq = load_keypoints(fit_kp);
      const std::vector<Camera> cams = fit_cam.load();
      // A pose at the origin would sit on the camera center.
      PoseParams init = facing_pose(mesh, fit_distance);
      if (!fit_init.empty()) init = load_poses(fit_init, mesh).poses.at(0);
      std::vector<std::optional<std::vector<Vec3>>> faces;
      if (!fit_face.empty()) faces = load_face_targets(fit_face);
      SequenceOptions so;
      so.warm_start = !fit_cold;
      so.fit.max_iterations = fit_iters;
      const SequenceFit r = fit_sequence(mesh, seq, cams, so, init, faces);
      PoseFile file;
      file.poses = r.poses;
      for (std::size_t f = 0; f < r.failed.size(); ++f) {
        if (r.failed[f]) file.failed.push_back(f);
      }
      save_poses(fit_out, mesh, file);
      nlohmann::json frames = nlohmann::json::array();
      for (std::size_t f = 0; f < r.reports.size(); ++f) {
        const FitReport& rep = r.reports[f];
        nlohmann::json row = {{"frame", f}, {"failed", static_cast<bool>(r.failed[f])}};
        if (r.failed[f]) {
          row["error"] = r.errors[f];
        } else {
          row["iterations"] = rep.iterations;
          row["stop_reason"] = rep.stop_reason;
          row["initial_loss"] = rep.initial_loss;
          row["loss"] = to_json(rep.final_loss.breakdown);
          row["face_visible"] = rep.final_loss.face_visible;
        }
        frames.push_back(row);
      }
      const nlohmann::json report = {{"frames", frames}, {"total_iterations", r.total_iterations}};
      if (!fit_report.empty()) write_json(fit_report, report);
      for (std::size_t f = 0; f < r.failed.size(); ++f) {
        if (r.failed[f]) std::cerr << "warning: frame " << f << " interpolated: " << r.errors[f] << '\n';
      }
    } else if (*ini) {
      const SkinnedMesh mesh = load_mesh(ini_mesh);
      save_splats(ini_out, init_splats(mesh, ini_opts), mesh.triangle_count());
    } else if (*tr) {
      const SkinnedMesh mesh = load_mesh(tr_mesh);
      const std::vector<Splat> splats = load_splats(tr_splats);
      const PoseFile poses = load_poses(tr_poses, mesh);
      const std::vector<Camera> cams = tr_cam.load();
      if (poses.poses.size() != tr_images.size()) {
        throw Error(ErrorCode::DimensionMismatch, "need one pose per image");
      }
      if (!tr_masks.empty() && tr_masks.size() != tr_images.size()) {
        throw Error(ErrorCode::DimensionMismatch, "need one mask per image");
      }
      std::vector<TrainFrame> frames;
      for (std::size_t f = 0; f < tr_images.size(); ++f) {
        const Camera& cam = camera_for(cams, f);
        TrainFrame tf{poses.poses[f], cam, read_image(tr_images[f], cam.width, cam.height), {}};
        if (!tr_masks.empty()) tf.mask = mask_from_image(read_image(tr_masks[f], cam.width, cam.height));
        frames.push_back(std::move(tf));
      }
      tr_opts.background = parse_color(tr_bg);
      tr_opts.random_background = !tr_fixed_bg;
      tr_opts.checkpoint_path = tr_ckpt;
      const TrainResult r = train(mesh, splats, frames, tr_opts);
      if (!tr_log.empty()) {
        std::ofstream log(tr_log);
        for (const IterationLog& e : r.log) log << to_json(e).dump() << '\n';
      }
      if (r.halted) throw Error(ErrorCode::Diverged, "training halted: " + r.halt_reason);
      save_splats(tr_out, r.splats, mesh.triangle_count());
      if (!tr_poses_out.empty()) save_poses(tr_poses_out, mesh, PoseFile{r.poses, {}, poses.fps});
      std::cerr << "trained " << r.splats.size() << " splats (" << r.pruned << " pruned, " << r.nan_skips
                << " skipped steps)\n";
    } else if (*rd) {
      const SkinnedMesh mesh = load_mesh(rd_mesh);
      const std::vector<Splat> splats = load_splats(rd_splats);
      PoseParams pose = PoseParams::neutral(mesh);
      if (!rd_pose.empty()) pose = load_poses(rd_pose, mesh).poses.at(rd_frame);
      const Camera cam = camera_for(rd_cam.load(), rd_frame);
      write_image(rd_out, render_avatar(mesh, pose, splats, cam, parse_color(rd_bg)));
    } else if (*an) {
      const SkinnedMesh mesh = load_mesh(an_mesh);
      const std::vector<Splat> splats = load_splats(an_splats);
      const PoseFile poses = load_poses(an_poses, mesh);
      const std::vector<Camera> cams = an_cam.load();
      fs::create_directories(an_dir);
      for (std::size_t f = 0; f < poses.poses.size(); ++f) {
        const Image img = render_avatar(mesh, poses.poses[f], splats, camera_for(cams, f), parse_color(an_bg));
        write_image(fs::path(an_dir) / frame_name(an_prefix, f, an_ext), img);
      }
    } else if (*me) {
      const SkinnedMesh mesh = load_mesh(me_mesh);
      const std::vector<Splat> splats = load_splats(me_splats);
      const PoseFile poses = load_poses(me_poses, mesh);
      const std::vector<Camera> cams = me_cam.load();
      std::vector<Image> truth;
      for (std::size_t f = 0; f < me_truth.size(); ++f) {
        const Camera& cam = camera_for(cams, f);
        truth.push_back(read_image(me_truth[f], cam.width, cam.height));
      }
      const EvalReport r = evaluate(mesh, splats, poses.poses, cams, truth, parse_color(me_bg));
      const nlohmann::json j = to_json(r, me_timing);
      print_json(j);
      if (!me_out.empty()) write_json(me_out, j);
    } else if (*ex) {
      const SkinnedMesh mesh = load_mesh(ex_mesh);
      const std::vector<Splat> splats = load_splats(ex_splats);
      std::vector<AnimationClip> clips;
      for (const std::string& spec : ex_clips) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "clip must be name=poses.json");
        const PoseFile pf = load_poses(spec.substr(eq + 1), mesh);
        clips.push_back({spec.substr(0, eq), pf.poses, pf.fps});
      }
      BundleOptions bo;
      bo.background = parse_color(ex_bg);
      if (!ex_camera.empty()) bo.camera = load_cameras(ex_camera).at(0);
      export_viewer_bundle(ex_out, mesh, splats, clips, bo);
    } else if (*sv) {
      BundleServer server(sv_dir);
      const int port = server.bind(sv_host, sv_port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving " << sv_dir << " on http://" << sv_host << ":" << port << std::endl;
      server.serve();
      g_server = nullptr;
    } else if (*sy) {
      fs::create_directories(sy_dir);
      const fs::path dir(sy_dir);
      if (sy_kind == "toy") {
        const ToyScene t = toy_scene(sy_size, sy_size, 200, sy_seed);
        save_mesh(dir / "mesh.bin", t.mesh);
        save_splats(dir / "initial.splats", t.initial, t.mesh.triangle_count());
        save_splats(dir / "target.splats", t.target_splats, t.mesh.triangle_count());
        save_poses(dir / "poses.json", t.mesh, PoseFile{{t.pose}, {}, 30.0});
        const Camera cams[1] = {t.camera};
        save_cameras(dir / "camera.json", cams);
        write_image(dir / "target.f32", t.target);
        write_image(dir / "mask.f32", mask_to_image(t.mask, t.target.width, t.target.height));
      } else {
        HumanoidOptions ho;
        ho.subdivisions = sy_sub;
        const SkinnedMesh mesh = humanoid(ho);
        const PoseParams pose = facing_pose(mesh);
        const Camera cam = init_camera(sy_size, sy_size);
        save_mesh(dir / "mesh.bin", mesh);
        InitOptions io;
        io.seed = sy_seed;
        save_splats(dir / "splats.splats", init_splats(mesh, io), mesh.triangle_count());
        save_poses(dir / "poses.json", mesh, PoseFile{{pose}, {}, 30.0});
        const Camera cams[1] = {cam};
        save_cameras(dir / "camera.json", cams);
        KeypointSequence seq;
        seq.layout = humanoid_keypoint_layout(mesh);
        seq.frames.push_back(project_keypoints(mesh, pose, seq.layout, cam));
        save_keypoints(dir / "keypoints.json", seq);
      }
    }
  } catch (const meshsplat::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
