#include "meshsplat/trainer.hpp"

#include "meshsplat/body_model.hpp"
#include "meshsplat/error.hpp"
#include "meshsplat/fitting.hpp"
#include "meshsplat/io.hpp"
#include "meshsplat/knn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace meshsplat {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) {
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

// Flat Adam state for one parameter group.
struct AdamGroup {
  int width = 0;
  double lr = 0.0;
  std::vector<double> value, m, v;

  AdamGroup(int w, double rate, std::size_t n) : width(w), lr(rate), value(n * w), m(n * w, 0.0), v(n * w, 0.0) {}

  double* at(std::size_t i) { return value.data() + i * static_cast<std::size_t>(width); }
  const double* at(std::size_t i) const { return value.data() + i * static_cast<std::size_t>(width); }

  void step(const std::vector<double>& grad, int t, const TrainOptions& o) {
    const double c1 = 1.0 - std::pow(o.beta1, t), c2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
      value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.epsilon);
    }
  }
};

struct Params {
  AdamGroup mu, rot, log_scale, color, opacity;
  std::vector<std::uint32_t> polygon;

  Params(std::span<const Splat> s, const LearningRates& lr, double extent)
      : mu(3, lr.position * extent, s.size()),
        rot(4, lr.rotation, s.size()),
        log_scale(3, lr.log_scale, s.size()),
        color(3, lr.color, s.size()),
        opacity(1, lr.opacity, s.size()) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      const Vec4 q = to_wxyz(s[i].rot_local);
      for (int c = 0; c < 3; ++c) {
        mu.at(i)[c] = s[i].mu_local[c];
        log_scale.at(i)[c] = s[i].log_scale[c];
        color.at(i)[c] = s[i].color[c];
      }
      for (int c = 0; c < 4; ++c) rot.at(i)[c] = q[c];
      opacity.at(i)[0] = logit(s[i].opacity);
      polygon.push_back(s[i].polygon_id);
    }
  }

  std::size_t size() const { return polygon.size(); }

  Splat splat(std::size_t i) const {
    Splat s;
    s.mu_local = Vec3(mu.at(i)[0], mu.at(i)[1], mu.at(i)[2]);
    s.rot_local = from_wxyz(Vec4(rot.at(i)[0], rot.at(i)[1], rot.at(i)[2], rot.at(i)[3])).normalized();
    s.log_scale = Vec3(log_scale.at(i)[0], log_scale.at(i)[1], log_scale.at(i)[2]);
    s.color = Vec3(color.at(i)[0], color.at(i)[1], color.at(i)[2]);
    s.opacity = sigmoid(opacity.at(i)[0]);
    s.polygon_id = polygon[i];
    return s;
  }

  std::vector<Splat> splats() const {
    std::vector<Splat> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = splat(i);
    return out;
  }

  std::vector<ContainerArray> state() const {
    std::vector<ContainerArray> out;
    const std::size_t n = size();
    auto add = [&](const std::string& name, const AdamGroup& g) {
      const std::vector<std::size_t> shape = {n, static_cast<std::size_t>(g.width)};
      out.push_back(ContainerArray::from_f64("param_" + name, shape, g.value));
      out.push_back(ContainerArray::from_f64("adam_m_" + name, shape, g.m));
      out.push_back(ContainerArray::from_f64("adam_v_" + name, shape, g.v));
    };
    add("mu", mu);
    add("rot", rot);
    add("log_scale", log_scale);
    add("color", color);
    add("opacity_logit", opacity);
    return out;
  }
};

Image composite_target(const TrainFrame& f, const Vec3& bg) {
  Image t = f.image;
  if (f.mask.empty()) return t;
  for (std::size_t p = 0; p < f.mask.size(); ++p) {
    for (int c = 0; c < 3; ++c) t.data[3 * p + static_cast<std::size_t>(c)] += (1.0 - f.mask[p]) * bg[c];
  }
  return t;
}

std::vector<PolygonFrame> posed_frames(const SkinnedMesh& mesh, const PoseParams& pose) {
  return polygon_frames(mesh, mesh.vertices, skin_vertices(mesh, pose));
}

// d loss / d posed vertices from per-triangle frame gradients, by central
// differences of each triangle's frame with respect to its three vertices.
std::vector<Vec3> frame_grads_to_vertices(const SkinnedMesh& mesh, std::span<const Vec3> posed,
                                          std::span<const PolygonFrame> frames, std::span<const FrameGrad> grads) {
  std::vector<Vec3> out(mesh.vertex_count(), Vec3::Zero());
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    const FrameGrad& g = grads[t];
    if (frames[t].degenerate || (g.k == 0.0 && g.rotation.isZero(0.0) && g.translation.isZero(0.0))) continue;
    const Triangle& tri = mesh.triangles[t];
    std::array<Vec3, 3> c = {mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]};
    std::array<Vec3, 3> p = {posed[tri[0]], posed[tri[1]], posed[tri[2]]};
    const double h = 1e-6 * std::max(1.0, (p[1] - p[0]).norm());
    const Vec4 q0 = to_wxyz(frames[t].rotation);
    auto eval = [&](const std::array<Vec3, 3>& pp) {
      const auto f = triangle_frame(c[0], c[1], c[2], pp[0], pp[1], pp[2]);
      if (!f) return 0.0;
      Vec4 q = to_wxyz(f->rotation);
      if (q.dot(q0) < 0.0) q = -q;
      return g.k * f->k + g.rotation.dot(q) + g.translation.dot(f->translation);
    };
    for (int v = 0; v < 3; ++v) {
      for (int d = 0; d < 3; ++d) {
        auto plus = p, minus = p;
        plus[static_cast<std::size_t>(v)][d] += h;
        minus[static_cast<std::size_t>(v)][d] -= h;
        out[tri[static_cast<std::size_t>(v)]][d] += (eval(plus) - eval(minus)) / (2.0 * h);
      }
    }
  }
  return out;
}

bool all_finite(const std::vector<SplatGrad>& g) {
  for (const SplatGrad& s : g) {
    if (!s.mu_local.allFinite() || !s.rot_local.allFinite() || !s.log_scale.allFinite() || !s.color.allFinite() ||
        !std::isfinite(s.opacity)) {
      return false;
    }
  }
  return true;
}

}  // namespace

double scene_extent(const SkinnedMesh& mesh) {
  if (mesh.vertices.empty()) return 1.0;
  Vec3 c = Vec3::Zero();
  for (const Vec3& v : mesh.vertices) c += v;
  c /= static_cast<double>(mesh.vertices.size());
  double r = 0.0;
  for (const Vec3& v : mesh.vertices) r = std::max(r, (v - c).norm());
  return r > 0.0 ? r : 1.0;
}

TrainResult train(const SkinnedMesh& mesh, std::span<const Splat> splats, std::span<const TrainFrame> frames,
                  const TrainOptions& opts, std::span<const TrainFrame> holdout) {
  if (frames.empty()) throw Error(ErrorCode::InvalidArgument, "training needs at least one frame");
  require_valid(validate_asset(mesh, splats), "training asset");
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const TrainFrame& fr = frames[f];
    require_valid(validate_pose(mesh, fr.pose), "pose of frame " + std::to_string(f));
    if (fr.image.width != fr.camera.width || fr.image.height != fr.camera.height) {
      throw Error(ErrorCode::ShapeMismatch, "image of frame " + std::to_string(f) + " does not match its camera");
    }
    if (!fr.mask.empty() && fr.mask.size() != fr.image.pixel_count()) {
      throw Error(ErrorCode::ShapeMismatch, "mask of frame " + std::to_string(f) + " does not match its image");
    }
  }

  TrainResult result;
  result.scene_extent = scene_extent(mesh);
  Params params(splats, opts.lr, result.scene_extent);
  const std::size_t n = params.size();

  result.poses.reserve(frames.size());
  for (const auto& f : frames) result.poses.push_back(f.pose);
  std::vector<std::vector<PolygonFrame>> frame_cache(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) frame_cache[f] = posed_frames(mesh, frames[f].pose);
  const std::vector<PolygonFrame> canon = canonical_frames(mesh);

  LossWeights weights = opts.weights;
  std::vector<std::vector<std::uint32_t>> neighbors;
  if (weights.w_knn != 0.0) {
    if (n < opts.knn_k + 1) throw Error(ErrorCode::InvalidArgument, "kNN regularizer needs at least k+1 splats");
    const std::vector<WorldGaussian> w0 = deform_splats(params.splats(), canon);
    std::vector<Vec3> centers(n);
    for (std::size_t i = 0; i < n; ++i) centers[i] = w0[i].center;
    neighbors = knn_neighbors(centers, opts.knn_k);
  }

  std::vector<AdamGroup> pose_adam;
  if (opts.optimize_pose) {
    for (const auto& p : result.poses) {
      AdamGroup g(1, opts.lr.pose, p.parameter_count());
      const Eigen::VectorXd x = p.to_vector();
      for (Eigen::Index i = 0; i < x.size(); ++i) g.value[static_cast<std::size_t>(i)] = x[i];
      pose_adam.push_back(std::move(g));
    }
  }
  std::vector<int> pose_steps(frames.size(), 0);

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  int adam_t = 0;

  auto checkpoint = [&](int iteration) {
    if (opts.checkpoint_path.empty()) return;
    nlohmann::json meta = {{"iteration", iteration}, {"seed", opts.seed}, {"adam_step", adam_t}};
    write_checkpoint(opts.checkpoint_path, params.splats(), meta, params.state());
  };

  std::vector<double> g_mu(3 * n), g_rot(4 * n), g_ls(3 * n), g_col(3 * n), g_op(n);
  for (int it = 0; it < opts.iterations; ++it) {
    if (cursor == order.size()) {
      order.resize(frames.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t fi = order[cursor++];
    const TrainFrame& frame = frames[fi];
    Vec3 bg = opts.background;
    if (opts.random_background && !frame.mask.empty()) bg = Vec3(uni(rng), uni(rng), uni(rng));

    const std::vector<Splat> current = params.splats();
    AvatarRender fwd;
    fwd.frames = frame_cache[fi];
    fwd.world = deform_splats(current, fwd.frames);
    fwd.render = render_gaussians(fwd.world, frame.camera, bg, opts.render);
    const Image target = composite_target(frame, bg);
    const std::vector<WorldGaussian> canon_world = deform_splats(current, canon);

    GaussianLossGrad lg;
    IterationLog entry;
    entry.iteration = it;
    entry.frame = fi;
    entry.background = bg;
    entry.breakdown = total_gaussian_loss(fwd.image(), target, canon_world, weights, opts.knn_k,
                                          weights.w_knn != 0.0 ? &neighbors : nullptr, &lg);
    if (!std::isfinite(entry.breakdown.total)) {
      result.halted = true;
      result.halt_reason = "non-finite loss at iteration " + std::to_string(it);
      result.log.push_back(entry);
      checkpoint(it);
      break;
    }

    std::vector<FrameGrad> frame_grads;
    std::vector<SplatGrad> grads = render_avatar_backward(fwd, current, frame.camera, lg.d_image, opts.render,
                                                          opts.optimize_pose ? &frame_grads : nullptr);
    if (weights.w_knn != 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        const Quat& r = current[i].rot_local;
        const double sign = canonical(r).coeffs().dot(r.coeffs()) >= 0.0 ? 1.0 : -1.0;
        grads[i].color += lg.knn.color[i];
        grads[i].opacity += lg.knn.opacity[i];
        grads[i].log_scale += lg.knn.scale[i].cwiseProduct(current[i].scale());
        grads[i].rot_local += sign * lg.knn.rotation[i];
      }
    }
    if (!all_finite(grads)) {
      entry.skipped = true;
      result.log.push_back(entry);
      if (++result.nan_skips > opts.max_nan_skips) {
        result.halted = true;
        result.halt_reason = "too many non-finite gradients";
        checkpoint(it);
        break;
      }
      continue;
    }

    for (std::size_t i = 0; i < n; ++i) {
      const SplatGrad& g = grads[i];
      const Vec4 raw(params.rot.at(i)[0], params.rot.at(i)[1], params.rot.at(i)[2], params.rot.at(i)[3]);
      const double norm = raw.norm();
      const Vec4 unit = raw / norm;
      const Vec4 d_raw = (g.rot_local - unit * unit.dot(g.rot_local)) / norm;
      const double o = current[i].opacity;
      for (int c = 0; c < 3; ++c) {
        g_mu[3 * i + c] = g.mu_local[c];
        g_ls[3 * i + c] = g.log_scale[c];
        g_col[3 * i + c] = g.color[c];
      }
      for (int c = 0; c < 4; ++c) g_rot[4 * i + c] = d_raw[c];
      g_op[i] = g.opacity * o * (1.0 - o);
    }
    ++adam_t;
    params.mu.step(g_mu, adam_t, opts);
    params.rot.step(g_rot, adam_t, opts);
    params.log_scale.step(g_ls, adam_t, opts);
    params.color.step(g_col, adam_t, opts);
    params.opacity.step(g_op, adam_t, opts);
    for (double& c : params.color.value) c = std::clamp(c, 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* q = params.rot.at(i);
      const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
      for (int c = 0; c < 4; ++c) q[c] /= norm;
    }

    if (opts.optimize_pose) {
      PoseParams& pose = result.poses[fi];
      const std::vector<Vec3> posed = skin_vertices(mesh, pose);
      const std::vector<Vec3> dv = frame_grads_to_vertices(mesh, posed, fwd.frames, frame_grads);
      const Eigen::VectorXd gp = pose_gradient_from_vertices(mesh, pose, dv);
      if (gp.allFinite()) {
        AdamGroup& a = pose_adam[fi];
        std::vector<double> grad(gp.data(), gp.data() + gp.size());
        a.step(grad, ++pose_steps[fi], opts);
        pose.assign_vector(Eigen::Map<const Eigen::VectorXd>(a.value.data(), static_cast<Eigen::Index>(a.value.size())));
        frame_cache[fi] = posed_frames(mesh, pose);
      }
    }

    if (opts.eval_every > 0 && !holdout.empty() && (it + 1) % opts.eval_every == 0) {
      const std::vector<Splat> now = params.splats();
      double psum = 0.0, ssum = 0.0;
      for (const TrainFrame& h : holdout) {
        const Image img = render_avatar(mesh, h.pose, now, h.camera, opts.background, opts.render);
        const Image truth = composite_target(h, opts.background);
        psum += psnr(img, truth);
        ssum += ssim(img, truth);
      }
      entry.eval_psnr = psum / static_cast<double>(holdout.size());
      entry.eval_ssim = ssum / static_cast<double>(holdout.size());
    }
    result.log.push_back(entry);
    if (opts.checkpoint_every > 0 && (it + 1) % opts.checkpoint_every == 0) checkpoint(it + 1);
  }

  std::vector<Splat> out = params.splats();
  if (opts.prune) {
    const std::size_t before = out.size();
    std::erase_if(out, [&](const Splat& s) { return s.opacity < opts.prune_opacity; });
    result.pruned = before - out.size();
  }
  result.splats = std::move(out);
  return result;
}

EvalReport evaluate(const SkinnedMesh& mesh, std::span<const Splat> splats, std::span<const PoseParams> poses,
                    std::span<const Camera> cams, std::span<const Image> truth, const Vec3& background,
                    const RenderSettings& settings) {
  if (poses.size() != truth.size()) throw Error(ErrorCode::DimensionMismatch, "need one truth image per pose");
  if (cams.size() != 1 && cams.size() != poses.size()) {
    throw Error(ErrorCode::DimensionMismatch, "need one camera or one per pose");
  }
  EvalReport report;
  report.splat_count = splats.size();
  for (std::size_t f = 0; f < poses.size(); ++f) {
    const Camera& cam = cams.size() == 1 ? cams[0] : cams[f];
    const auto t0 = std::chrono::steady_clock::now();
    const Image img = render_avatar(mesh, poses[f], splats, cam, background, settings);
    const auto t1 = std::chrono::steady_clock::now();
    FrameMetrics m;
    m.render_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    m.psnr = psnr(img, truth[f]);
    m.ssim = ssim(img, truth[f]);
    report.frames.push_back(m);
    report.mean_psnr += m.psnr;
    report.mean_ssim += m.ssim;
    report.mean_render_ms += m.render_ms;
  }
  if (!report.frames.empty()) {
    const double k = static_cast<double>(report.frames.size());
    report.mean_psnr /= k;
    report.mean_ssim /= k;
    report.mean_render_ms /= k;
  }
  return report;
}

nlohmann::json to_json(const LossBreakdown& b) {
  nlohmann::json terms = nlohmann::json::object();
  for (const LossTerm& t : b.terms) {
    if (t.available) {
      terms[t.name] = {{"raw", t.raw}, {"weight", t.weight}, {"weighted", t.weighted}};
    } else {
      terms[t.name] = {{"weight", t.weight}, {"status", "unavailable"}};
    }
  }
  return {{"total", b.total}, {"terms", terms}};
}

nlohmann::json to_json(const IterationLog& log) {
  nlohmann::json j = {{"iteration", log.iteration},
                      {"frame", log.frame},
                      {"background", {log.background.x(), log.background.y(), log.background.z()}},
                      {"loss", to_json(log.breakdown)}};
  if (log.skipped) j["skipped"] = true;
  if (log.eval_psnr) j["eval_psnr"] = *log.eval_psnr;
  if (log.eval_ssim) j["eval_ssim"] = *log.eval_ssim;
  return j;
}

nlohmann::json to_json(const EvalReport& report, bool include_timing) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t f = 0; f < report.frames.size(); ++f) {
    const FrameMetrics& m = report.frames[f];
    nlohmann::json row = {{"frame", f}, {"psnr", m.psnr}, {"ssim", m.ssim}, {"lpips", "unavailable"},
                          {"splat_count", report.splat_count}};
    if (include_timing) row["render_ms"] = m.render_ms;
    frames.push_back(row);
  }
  nlohmann::json mean = {{"psnr", report.mean_psnr}, {"ssim", report.mean_ssim}, {"lpips", "unavailable"},
                         {"splat_count", report.splat_count}};
  if (include_timing) mean["render_ms"] = report.mean_render_ms;
  return {{"frames", frames}, {"mean", mean}};
}

void write_checkpoint(const std::filesystem::path& path, std::span<const Splat> splats, const nlohmann::json& meta,
                      const std::vector<ContainerArray>& state) {
  Container c = splats_to_container(splats);
  c.magic = std::string(kCheckpointMagic);
  c.version = kFormatVersion;
  for (const auto& [key, value] : meta.items()) c.meta[key] = value;
  c.arrays.insert(c.arrays.end(), state.begin(), state.end());
  write_file_bytes(path, encode_container(c));
}

}  // namespace meshsplat
