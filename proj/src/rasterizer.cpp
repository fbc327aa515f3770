#include "meshsplat/rasterizer.hpp"

#include "meshsplat/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace meshsplat {

namespace {

struct Packed {
  double mx, my;
  double a, b, c;  // conic (inverse covariance)
  double opacity;
  double log_cut;  // power threshold below which alpha < min_alpha
  double r, g, bl;
  int x0, x1, y0, y1;  // inclusive pixel bounds of the min_alpha ellipse
  bool active;
};

struct Prepared {
  std::vector<Packed> packed;
  std::vector<std::uint32_t> order;
  std::size_t skipped_singular = 0;
};

Prepared prepare(std::span<const Projected2D> splats, int width, int height, double min_alpha) {
  Prepared p;
  p.packed.resize(splats.size());
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const Projected2D& s = splats[i];
    Packed& k = p.packed[i];
    k.active = false;
    const double xx = s.cov(0, 0);
    const double xy = 0.5 * (s.cov(0, 1) + s.cov(1, 0));
    const double yy = s.cov(1, 1);
    const double det = xx * yy - xy * xy;
    if (!(det > 0.0) || !(xx > 0.0) || !std::isfinite(det) || !s.mean.allFinite()) {
      ++p.skipped_singular;
      continue;
    }
    if (!(s.opacity >= min_alpha)) continue;
    k.mx = s.mean.x();
    k.my = s.mean.y();
    k.a = yy / det;
    k.b = -xy / det;
    k.c = xx / det;
    k.opacity = s.opacity;
    k.log_cut = std::log(min_alpha / s.opacity);
    k.r = s.color.x();
    k.g = s.color.y();
    k.bl = s.color.z();
    // alpha >= min_alpha  <=>  d^T Q d <= m2
    const double m2 = -2.0 * k.log_cut;
    const double rx = std::sqrt(m2 * xx);
    const double ry = std::sqrt(m2 * yy);
    const double fx0 = std::ceil(k.mx - rx - 0.5);
    const double fx1 = std::floor(k.mx + rx - 0.5);
    const double fy0 = std::ceil(k.my - ry - 0.5);
    const double fy1 = std::floor(k.my + ry - 0.5);
    if (fx1 < 0.0 || fy1 < 0.0 || fx0 > width - 1 || fy0 > height - 1) continue;
    k.x0 = static_cast<int>(std::max(fx0, 0.0));
    k.x1 = static_cast<int>(std::min(fx1, static_cast<double>(width - 1)));
    k.y0 = static_cast<int>(std::max(fy0, 0.0));
    k.y1 = static_cast<int>(std::min(fy1, static_cast<double>(height - 1)));
    if (k.x0 > k.x1 || k.y0 > k.y1) continue;
    k.active = true;
    p.order.push_back(static_cast<std::uint32_t>(i));
  }
  std::stable_sort(p.order.begin(), p.order.end(),
                   [&](std::uint32_t l, std::uint32_t r) { return splats[l].depth < splats[r].depth; });
  return p;
}

void bin_tiles(const Prepared& prep, RasterState& st) {
  const std::size_t tiles = static_cast<std::size_t>(st.tiles_x) * static_cast<std::size_t>(st.tiles_y);
  std::vector<std::uint32_t> counts(tiles + 1, 0);
  const int ts = st.tile_size;
  for (std::uint32_t idx : prep.order) {
    const Packed& k = prep.packed[idx];
    for (int ty = k.y0 / ts; ty <= k.y1 / ts; ++ty) {
      for (int tx = k.x0 / ts; tx <= k.x1 / ts; ++tx) ++counts[static_cast<std::size_t>(ty * st.tiles_x + tx)];
    }
  }
  st.tile_offsets.assign(tiles + 1, 0);
  for (std::size_t t = 0; t < tiles; ++t) st.tile_offsets[t + 1] = st.tile_offsets[t] + counts[t];
  st.tile_splats.resize(st.tile_offsets[tiles]);
  std::vector<std::uint32_t> cursor(st.tile_offsets.begin(), st.tile_offsets.end() - 1);
  for (std::uint32_t idx : prep.order) {
    const Packed& k = prep.packed[idx];
    for (int ty = k.y0 / ts; ty <= k.y1 / ts; ++ty) {
      for (int tx = k.x0 / ts; tx <= k.x1 / ts; ++tx) {
        st.tile_splats[cursor[static_cast<std::size_t>(ty * st.tiles_x + tx)]++] = idx;
      }
    }
  }
}

// Pixel columns of one row inside the cutoff ellipse, padded by a pixel
// against round-off. `by` and `cy` are the row's linear and constant terms.
std::pair<int, int> row_span(const Packed& k, double by, double cy, int x0, int x1) {
  const double root = std::sqrt(std::max(by * by - 4.0 * k.a * (cy + 2.0 * k.log_cut), 0.0));
  const double inv = 0.5 / k.a;
  return {std::max(x0, static_cast<int>(std::floor(k.mx + (-by - root) * inv - 0.5))),
          std::min(x1, static_cast<int>(std::ceil(k.mx + (-by + root) * inv - 0.5)))};
}

// d(conic)/d(cov) for cov = [[a, b], [b, c]] applied to conic gradients.
Vec3 conic_grad_to_cov(const Mat2& cov, double gA, double gB, double gC) {
  const double a = cov(0, 0);
  const double b = 0.5 * (cov(0, 1) + cov(1, 0));
  const double c = cov(1, 1);
  const double det = a * c - b * b;
  const double inv2 = 1.0 / (det * det);
  const double da = (-c * c * gA + b * c * gB - b * b * gC) * inv2;
  const double db = (2.0 * b * c * gA - (a * c + b * b) * gB + 2.0 * a * b * gC) * inv2;
  const double dc = (-b * b * gA + a * b * gB - a * a * gC) * inv2;
  return {da, db, dc};
}

}  // namespace

RenderTarget::RenderTarget(int w, int h, const Vec3& bg)
    : width(w), height(h), background(bg), color(w, h), alpha(static_cast<std::size_t>(w) * h, 0.0) {}

std::optional<Projected2D> project_gaussian(const WorldGaussian& g, const Camera& cam, const ProjectOptions& opts) {
  const Vec3 p = cam.to_camera(g.center);
  if (!(p.z() > opts.near_plane)) return std::nullopt;
  const double z = p.z();
  const double iz = 1.0 / z;
  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz,
         0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
  const Mat3 w = cam.rotation.toRotationMatrix();
  const Mat3 r = g.rotation.normalized().toRotationMatrix();
  const Mat3 m = r * g.scale.asDiagonal();
  const Mat3 sigma = m * m.transpose();
  const Eigen::Matrix<double, 2, 3> jw = jac * w;
  Projected2D out;
  out.cov = jw * sigma * jw.transpose();
  out.cov(0, 1) = out.cov(1, 0) = 0.5 * (out.cov(0, 1) + out.cov(1, 0));
  out.cov(0, 0) += opts.blur;
  out.cov(1, 1) += opts.blur;
  out.mean = Vec2(cam.fx * p.x() * iz + cam.cx, cam.fy * p.y() * iz + cam.cy);
  out.depth = z;
  out.color = g.color;
  out.opacity = g.opacity;

  const double rx = opts.cull_sigmas * std::sqrt(out.cov(0, 0));
  const double ry = opts.cull_sigmas * std::sqrt(out.cov(1, 1));
  if (out.mean.x() + rx < 0.0 || out.mean.x() - rx > cam.width || out.mean.y() + ry < 0.0 ||
      out.mean.y() - ry > cam.height) {
    return std::nullopt;
  }
  return out;
}

WorldGaussianGrad project_gaussian_backward(const WorldGaussian& g, const Camera& cam, const Vec2& d_mean,
                                            const Vec3& d_cov) {
  const Vec3 p = cam.to_camera(g.center);
  const double z = p.z();
  const double iz = 1.0 / z;
  const double iz2 = iz * iz;
  const double iz3 = iz2 * iz;
  const Mat3 w = cam.rotation.toRotationMatrix();
  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx * iz, 0.0, -cam.fx * p.x() * iz2,
         0.0, cam.fy * iz, -cam.fy * p.y() * iz2;

  const Vec4 q = to_wxyz(g.rotation.normalized());
  const Mat3 r = rotation_from_wxyz(q);
  const Mat3 m = r * g.scale.asDiagonal();
  const Mat3 sigma = m * m.transpose();
  const Mat3 v = w * sigma * w.transpose();

  // symmetric matrix form of the covariance gradient
  Mat2 gcov;
  gcov << d_cov[0], 0.5 * d_cov[1], 0.5 * d_cov[1], d_cov[2];

  WorldGaussianGrad out;

  // mean
  Vec3 d_p = jac.transpose() * d_mean;

  // covariance through J (which depends on the camera-space position)
  const Eigen::Matrix<double, 2, 3> d_jac = 2.0 * gcov * jac * v;
  d_p.x() += d_jac(0, 2) * (-cam.fx * iz2);
  d_p.y() += d_jac(1, 2) * (-cam.fy * iz2);
  d_p.z() += d_jac(0, 0) * (-cam.fx * iz2) + d_jac(0, 2) * (2.0 * cam.fx * p.x() * iz3) +
             d_jac(1, 1) * (-cam.fy * iz2) + d_jac(1, 2) * (2.0 * cam.fy * p.y() * iz3);
  out.center = w.transpose() * d_p;

  // covariance through Sigma = M M^T, M = R S
  const Eigen::Matrix<double, 2, 3> jw = jac * w;
  const Mat3 d_sigma = jw.transpose() * gcov * jw;
  const Mat3 d_m = 2.0 * d_sigma * m;
  for (int k = 0; k < 3; ++k) out.scale[k] = d_m.col(k).dot(r.col(k));
  const Mat3 d_r = d_m * g.scale.asDiagonal();
  const auto dr_dq = rotation_derivatives_wxyz(q);
  for (int k = 0; k < 4; ++k) out.rotation[k] = (d_r.array() * dr_dq[static_cast<std::size_t>(k)].array()).sum();
  return out;
}

RasterState rasterize(std::span<const Projected2D> splats, RenderTarget& target, const RasterOptions& opts) {
  if (target.width <= 0 || target.height <= 0) throw Error(ErrorCode::InvalidArgument, "render target is empty");
  if (opts.tile_size <= 0) throw Error(ErrorCode::InvalidArgument, "tile size must be positive");
  if (!(opts.min_alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "min_alpha must be positive");
  if (target.background_image && (target.background_image->width != target.width ||
                                  target.background_image->height != target.height)) {
    throw Error(ErrorCode::ShapeMismatch, "background image must match the render target");
  }
  const int width = target.width;
  const int height = target.height;
  target.color = Image(width, height);
  target.alpha.assign(static_cast<std::size_t>(width) * height, 0.0);

  RasterState st;
  st.width = width;
  st.height = height;
  st.tile_size = opts.tile_size;
  st.tiles_x = (width + opts.tile_size - 1) / opts.tile_size;
  st.tiles_y = (height + opts.tile_size - 1) / opts.tile_size;
  st.min_alpha = opts.min_alpha;
  st.splat_count = splats.size();
  st.final_transmittance.assign(static_cast<std::size_t>(width) * height, 1.0);
  st.contributors.assign(static_cast<std::size_t>(width) * height, 0);

  const Prepared prep = prepare(splats, width, height, opts.min_alpha);
  st.skipped_singular = prep.skipped_singular;
  bin_tiles(prep, st);

  const int ts = opts.tile_size;
  const std::int64_t tiles = static_cast<std::int64_t>(st.tiles_x) * st.tiles_y;
  const std::size_t tile_pixels = static_cast<std::size_t>(ts) * ts;

#pragma omp parallel if (opts.parallel)
  {
    std::vector<double> trans(tile_pixels);
    std::vector<double> acc(3 * tile_pixels);
    std::vector<double> alpha_acc(tile_pixels);
    std::vector<std::uint32_t> contrib(tile_pixels);

#pragma omp for schedule(dynamic, 4)
    for (std::int64_t t = 0; t < tiles; ++t) {
      const int tx = static_cast<int>(t % st.tiles_x);
      const int ty = static_cast<int>(t / st.tiles_x);
      const int px0 = tx * ts;
      const int py0 = ty * ts;
      const int px1 = std::min(px0 + ts, width) - 1;
      const int py1 = std::min(py0 + ts, height) - 1;
      const int tw = px1 - px0 + 1;
      const int th = py1 - py0 + 1;
      const int live_total = tw * th;
      std::fill(trans.begin(), trans.end(), 1.0);
      std::fill(acc.begin(), acc.end(), 0.0);
      std::fill(alpha_acc.begin(), alpha_acc.end(), 0.0);
      std::fill(contrib.begin(), contrib.end(), 0u);
      int done = 0;

      const std::uint32_t begin = st.tile_offsets[static_cast<std::size_t>(t)];
      const std::uint32_t end = st.tile_offsets[static_cast<std::size_t>(t) + 1];
      for (std::uint32_t e = begin; e < end && done < live_total; ++e) {
        const Packed& k = prep.packed[st.tile_splats[e]];
        const int x0 = std::max(k.x0, px0);
        const int x1 = std::min(k.x1, px1);
        const int y0 = std::max(k.y0, py0);
        const int y1 = std::min(k.y1, py1);
        const std::uint32_t local_entry = e - begin + 1;
        for (int y = y0; y <= y1; ++y) {
          const double dy = y + 0.5 - k.my;
          const double cy = k.c * dy * dy;
          const double by = 2.0 * k.b * dy;
          const auto [sx0, sx1] = row_span(k, by, cy, x0, x1);
          std::size_t p = static_cast<std::size_t>(y - py0) * ts + static_cast<std::size_t>(sx0 - px0);
          for (int x = sx0; x <= sx1; ++x, ++p) {
            const double tr = trans[p];
            if (tr < kMinTransmittance) continue;
            const double dx = x + 0.5 - k.mx;
            const double power = -0.5 * (k.a * dx * dx + by * dx + cy);
            if (power < k.log_cut) continue;
            const double alpha = std::min(kMaxAlpha, k.opacity * std::exp(power));
            const double w = tr * alpha;
            acc[3 * p] += w * k.r;
            acc[3 * p + 1] += w * k.g;
            acc[3 * p + 2] += w * k.bl;
            alpha_acc[p] += w;
            const double next = tr * (1.0 - alpha);
            trans[p] = next;
            contrib[p] = local_entry;
            if (next < kMinTransmittance) ++done;
          }
        }
      }

      for (int y = py0; y <= py1; ++y) {
        for (int x = px0; x <= px1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y - py0) * ts + static_cast<std::size_t>(x - px0);
          const std::size_t pix = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
          const Vec3 bg = target.background_at(x, y);
          const double tr = trans[p];
          target.color.data[3 * pix] = acc[3 * p] + tr * bg.x();
          target.color.data[3 * pix + 1] = acc[3 * p + 1] + tr * bg.y();
          target.color.data[3 * pix + 2] = acc[3 * p + 2] + tr * bg.z();
          target.alpha[pix] = alpha_acc[p];
          st.final_transmittance[pix] = tr;
          st.contributors[pix] = contrib[p];
        }
      }
    }
  }
  return st;
}

Raster2DGrad rasterize_backward(std::span<const Projected2D> splats, const RenderTarget& target,
                                const RasterState& st, const Image& d_image, const RasterOptions& opts) {
  if (st.splat_count != splats.size() || st.width != target.width || st.height != target.height ||
      st.final_transmittance.size() != static_cast<std::size_t>(target.width) * target.height) {
    throw Error(ErrorCode::ContractViolation, "forward state does not belong to these splats/target");
  }
  if (d_image.width != st.width || d_image.height != st.height) {
    throw Error(ErrorCode::ContractViolation, "image gradient does not match the forward render size");
  }
  const Prepared prep = prepare(splats, st.width, st.height, st.min_alpha);
  const int ts = st.tile_size;
  const int width = st.width;
  const int height = st.height;
  const std::int64_t tiles = static_cast<std::int64_t>(st.tiles_x) * st.tiles_y;
  const std::size_t tile_pixels = static_cast<std::size_t>(ts) * ts;

  // per tile-list entry: color(3), opacity, mean(2), conic(3)
  constexpr std::size_t kStride = 9;
  std::vector<double> partial(st.tile_splats.size() * kStride, 0.0);

#pragma omp parallel if (opts.parallel)
  {
    std::vector<double> trans(tile_pixels);
    std::vector<double> suffix(3 * tile_pixels);

#pragma omp for schedule(dynamic, 4)
    for (std::int64_t t = 0; t < tiles; ++t) {
      const int tx = static_cast<int>(t % st.tiles_x);
      const int ty = static_cast<int>(t / st.tiles_x);
      const int px0 = tx * ts;
      const int py0 = ty * ts;
      const int px1 = std::min(px0 + ts, width) - 1;
      const int py1 = std::min(py0 + ts, height) - 1;
      std::uint32_t max_contrib = 0;
      for (int y = py0; y <= py1; ++y) {
        for (int x = px0; x <= px1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y - py0) * ts + static_cast<std::size_t>(x - px0);
          const std::size_t pix = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
          trans[p] = st.final_transmittance[pix];
          const Vec3 bg = target.background_at(x, y);
          suffix[3 * p] = bg.x();
          suffix[3 * p + 1] = bg.y();
          suffix[3 * p + 2] = bg.z();
          max_contrib = std::max(max_contrib, st.contributors[pix]);
        }
      }
      const std::uint32_t begin = st.tile_offsets[static_cast<std::size_t>(t)];
      for (std::uint32_t local = max_contrib; local-- > 0;) {
        const std::uint32_t e = begin + local;
        const Packed& k = prep.packed[st.tile_splats[e]];
        double* out = &partial[static_cast<std::size_t>(e) * kStride];
        const int x0 = std::max(k.x0, px0);
        const int x1 = std::min(k.x1, px1);
        const int y0 = std::max(k.y0, py0);
        const int y1 = std::min(k.y1, py1);
        for (int y = y0; y <= y1; ++y) {
          const double dy = y + 0.5 - k.my;
          const double cy = k.c * dy * dy;
          const double by = 2.0 * k.b * dy;
          const auto [sx0, sx1] = row_span(k, by, cy, x0, x1);
          for (int x = sx0; x <= sx1; ++x) {
            const std::size_t pix = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
            if (local >= st.contributors[pix]) continue;
            const double dx = x + 0.5 - k.mx;
            const double power = -0.5 * (k.a * dx * dx + by * dx + cy);
            if (power < k.log_cut) continue;
            const double gauss = std::exp(power);
            const double raw = k.opacity * gauss;
            const double alpha = std::min(kMaxAlpha, raw);
            const std::size_t p = static_cast<std::size_t>(y - py0) * ts + static_cast<std::size_t>(x - px0);
            const double t_before = trans[p] / (1.0 - alpha);
            const double gr = d_image.data[3 * pix];
            const double gg = d_image.data[3 * pix + 1];
            const double gb = d_image.data[3 * pix + 2];
            const double w = t_before * alpha;
            out[0] += w * gr;
            out[1] += w * gg;
            out[2] += w * gb;
            const double d_alpha =
                t_before * (gr * (k.r - suffix[3 * p]) + gg * (k.g - suffix[3 * p + 1]) + gb * (k.bl - suffix[3 * p + 2]));
            suffix[3 * p] = alpha * k.r + (1.0 - alpha) * suffix[3 * p];
            suffix[3 * p + 1] = alpha * k.g + (1.0 - alpha) * suffix[3 * p + 1];
            suffix[3 * p + 2] = alpha * k.bl + (1.0 - alpha) * suffix[3 * p + 2];
            trans[p] = t_before;
            if (raw >= kMaxAlpha) continue;
            out[3] += d_alpha * gauss;
            const double d_power = d_alpha * alpha;
            out[4] += d_power * (k.a * dx + k.b * dy);
            out[5] += d_power * (k.b * dx + k.c * dy);
            out[6] += d_power * (-0.5 * dx * dx);
            out[7] += d_power * (-dx * dy);
            out[8] += d_power * (-0.5 * dy * dy);
          }
        }
      }
    }
  }

  Raster2DGrad grad;
  const std::size_t n = splats.size();
  grad.color.assign(n, Vec3::Zero());
  grad.opacity.assign(n, 0.0);
  grad.mean.assign(n, Vec2::Zero());
  grad.cov.assign(n, Vec3::Zero());
  std::vector<Vec3> conic(n, Vec3::Zero());
  // tile-index order keeps the reduction reproducible
  for (std::size_t e = 0; e < st.tile_splats.size(); ++e) {
    const std::uint32_t i = st.tile_splats[e];
    const double* g = &partial[e * kStride];
    grad.color[i] += Vec3(g[0], g[1], g[2]);
    grad.opacity[i] += g[3];
    grad.mean[i] += Vec2(g[4], g[5]);
    conic[i] += Vec3(g[6], g[7], g[8]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!prep.packed[i].active) continue;
    grad.cov[i] = conic_grad_to_cov(splats[i].cov, conic[i][0], conic[i][1], conic[i][2]);
  }
  return grad;
}

}  // namespace meshsplat
