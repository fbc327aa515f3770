#include "meshsplat/losses.hpp"

#include "meshsplat/error.hpp"
#include "meshsplat/knn.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace meshsplat {

namespace {

using Kernel = std::array<double, kSsimWindow>;

const Kernel& gaussian_kernel() {
  static const Kernel k = [] {
    Kernel g{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kSsimWindow / 2;
      g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
      sum += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
  }();
  return k;
}

std::vector<double> channel(const Image& img, int c) {
  std::vector<double> out(img.pixel_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.data[3 * i + static_cast<std::size_t>(c)];
  return out;
}

// Valid-mode separable filtering: w x h -> (w - 10) x (h - 10).
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h) {
  const Kernel& g = gaussian_kernel();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * static_cast<std::size_t>(h), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) s += g[static_cast<std::size_t>(i)] * in[static_cast<std::size_t>(y * w + x + i)];
      tmp[static_cast<std::size_t>(y * ow + x)] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * static_cast<std::size_t>(oh), 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int j = 0; j < kSsimWindow; ++j) s += g[static_cast<std::size_t>(j)] * tmp[static_cast<std::size_t>((y + j) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = s;
    }
  }
  return out;
}

// Adjoint of filter_valid: (w - 10) x (h - 10) -> w x h.
std::vector<double> filter_valid_adjoint(const std::vector<double>& in, int w, int h) {
  const Kernel& g = gaussian_kernel();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * static_cast<std::size_t>(h), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int j = 0; j < kSsimWindow; ++j) {
        const int yy = y - j;
        if (yy >= 0 && yy < oh) s += g[static_cast<std::size_t>(j)] * in[static_cast<std::size_t>(yy * ow + x)];
      }
      tmp[static_cast<std::size_t>(y * ow + x)] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) {
        const int xx = x - i;
        if (xx >= 0 && xx < ow) s += g[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y * ow + xx)];
      }
      out[static_cast<std::size_t>(y * w + x)] = s;
    }
  }
  return out;
}

void require_ssim_size(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.width < kSsimWindow || a.height < kSsimWindow) {
    throw Error(ErrorCode::ShapeMismatch, "image smaller than the 11x11 SSIM window");
  }
}

struct SsimMaps {
  std::vector<double> mu_a, mu_b, var_a, var_b, cov_ab;
};

SsimMaps ssim_maps(const std::vector<double>& a, const std::vector<double>& b, int w, int h) {
  SsimMaps m;
  m.mu_a = filter_valid(a, w, h);
  m.mu_b = filter_valid(b, w, h);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  m.var_a = filter_valid(aa, w, h);
  m.var_b = filter_valid(bb, w, h);
  m.cov_ab = filter_valid(ab, w, h);
  for (std::size_t i = 0; i < m.mu_a.size(); ++i) {
    m.var_a[i] -= m.mu_a[i] * m.mu_a[i];
    m.var_b[i] -= m.mu_b[i] * m.mu_b[i];
    m.cov_ab[i] -= m.mu_a[i] * m.mu_b[i];
  }
  return m;
}

double ssim_value(const SsimMaps& m, std::size_t i) {
  const double a1 = 2.0 * m.mu_a[i] * m.mu_b[i] + kSsimC1;
  const double a2 = 2.0 * m.cov_ab[i] + kSsimC2;
  const double b1 = m.mu_a[i] * m.mu_a[i] + m.mu_b[i] * m.mu_b[i] + kSsimC1;
  const double b2 = m.var_a[i] + m.var_b[i] + kSsimC2;
  return (a1 * a2) / (b1 * b2);
}

double sobel_at(const std::vector<double>& p, int w, int h, int x, int y, bool horizontal) {
  auto v = [&](int dx, int dy) {
    const int xx = std::clamp(x + dx, 0, w - 1), yy = std::clamp(y + dy, 0, h - 1);
    return p[static_cast<std::size_t>(yy * w + xx)];
  };
  if (horizontal) {
    return (v(1, -1) + 2.0 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2.0 * v(-1, 0) + v(-1, 1));
  }
  return (v(-1, 1) + 2.0 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2.0 * v(0, -1) + v(1, -1));
}

struct SobelPlane {
  std::vector<double> gx, gy, mag;
};

SobelPlane sobel_plane(const std::vector<double>& p, int w, int h) {
  SobelPlane s;
  s.gx.resize(p.size());
  s.gy.resize(p.size());
  s.mag.resize(p.size());
#pragma omp parallel for schedule(static) if (p.size() > 65536)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      s.gx[i] = sobel_at(p, w, h, x, y, true);
      s.gy[i] = sobel_at(p, w, h, x, y, false);
      s.mag[i] = std::sqrt(s.gx[i] * s.gx[i] + s.gy[i] * s.gy[i]);
    }
  }
  return s;
}

}  // namespace

double l2_image(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.data.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

Image l2_image_grad(const Image& a, const Image& b) {
  require_same_shape(a, b);
  Image g(a.width, a.height);
  const double scale = a.data.empty() ? 0.0 : 2.0 / static_cast<double>(a.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) g.data[i] = scale * (a.data[i] - b.data[i]);
  return g;
}

double ssim(const Image& a, const Image& b) {
  require_ssim_size(a, b);
  double sum = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < 3; ++c) {
    const SsimMaps m = ssim_maps(channel(a, c), channel(b, c), a.width, a.height);
    for (std::size_t i = 0; i < m.mu_a.size(); ++i) sum += ssim_value(m, i);
    count += m.mu_a.size();
  }
  return sum / static_cast<double>(count);
}

Image ssim_grad(const Image& a, const Image& b) {
  require_ssim_size(a, b);
  const int w = a.width, h = a.height;
  const double n = 3.0 * (w - kSsimWindow + 1) * (h - kSsimWindow + 1);
  Image grad(w, h);
  for (int c = 0; c < 3; ++c) {
    const std::vector<double> pa = channel(a, c), pb = channel(b, c);
    const SsimMaps m = ssim_maps(pa, pb, w, h);
    const std::size_t count = m.mu_a.size();
    std::vector<double> g1(count), g2(count), g3(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double a1 = 2.0 * m.mu_a[i] * m.mu_b[i] + kSsimC1;
      const double a2 = 2.0 * m.cov_ab[i] + kSsimC2;
      const double b1 = m.mu_a[i] * m.mu_a[i] + m.mu_b[i] * m.mu_b[i] + kSsimC1;
      const double b2 = m.var_a[i] + m.var_b[i] + kSsimC2;
      const double s = (a1 * a2) / (b1 * b2);
      const double d_mu = 2.0 * m.mu_b[i] * a2 / (b1 * b2) - s * 2.0 * m.mu_a[i] / b1;
      const double d_var = -s / b2;
      const double d_cov = 2.0 * a1 / (b1 * b2);
      // d var_a / d a_p = 2 w (a_p - mu_a); d cov / d a_p = w (b_p - mu_b)
      g1[i] = (d_mu - 2.0 * m.mu_a[i] * d_var - m.mu_b[i] * d_cov) / n;
      g2[i] = 2.0 * d_var / n;
      g3[i] = d_cov / n;
    }
    const std::vector<double> f1 = filter_valid_adjoint(g1, w, h);
    const std::vector<double> f2 = filter_valid_adjoint(g2, w, h);
    const std::vector<double> f3 = filter_valid_adjoint(g3, w, h);
    for (std::size_t p = 0; p < pa.size(); ++p) {
      grad.data[3 * p + static_cast<std::size_t>(c)] = f1[p] + pa[p] * f2[p] + pb[p] * f3[p];
    }
  }
  return grad;
}

Image sobel_magnitude(const Image& img) {
  Image out(img.width, img.height);
  for (int c = 0; c < 3; ++c) {
    const SobelPlane s = sobel_plane(channel(img, c), img.width, img.height);
    for (std::size_t p = 0; p < s.mag.size(); ++p) out.data[3 * p + static_cast<std::size_t>(c)] = s.mag[p];
  }
  return out;
}

double sobel_loss(const Image& a, const Image& b) {
  require_same_shape(a, b);
  return l2_image(sobel_magnitude(a), sobel_magnitude(b));
}

Image sobel_loss_grad(const Image& a, const Image& b) {
  require_same_shape(a, b);
  const int w = a.width, h = a.height;
  Image grad(w, h);
  if (a.data.empty()) return grad;
  const double scale = 2.0 / static_cast<double>(a.data.size());
  for (int c = 0; c < 3; ++c) {
    const SobelPlane sa = sobel_plane(channel(a, c), w, h);
    const SobelPlane sb = sobel_plane(channel(b, c), w, h);
    std::vector<double> dgx(sa.mag.size(), 0.0), dgy(sa.mag.size(), 0.0);
    for (std::size_t p = 0; p < sa.mag.size(); ++p) {
      if (sa.mag[p] == 0.0) continue;
      const double d_mag = scale * (sa.mag[p] - sb.mag[p]);
      dgx[p] = d_mag * sa.gx[p] / sa.mag[p];
      dgy[p] = d_mag * sa.gy[p] / sa.mag[p];
    }
    static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};  // [dy+1][dx+1]
    static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto p = static_cast<std::size_t>(y * w + x);
        if (dgx[p] == 0.0 && dgy[p] == 0.0) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = std::clamp(x + dx, 0, w - 1), yy = std::clamp(y + dy, 0, h - 1);
            grad.at(xx, yy, c) += kx[dy + 1][dx + 1] * dgx[p] + ky[dy + 1][dx + 1] * dgy[p];
          }
        }
      }
    }
  }
  return grad;
}

double psnr(const Image& a, const Image& b) {
  const double mse = l2_image(a, b);
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

// Adds the mean component std of one property group over a neighborhood
// and, optionally, its gradient.
template <int D, typename Get, typename Put>
double group_spread(std::span<const std::uint32_t> hood, Get get, Put put, double grad_scale) {
  const double m = static_cast<double>(hood.size());
  const Eigen::Matrix<double, D, 1> pivot = get(hood[0]);
  Eigen::Matrix<double, D, 1> shift = Eigen::Matrix<double, D, 1>::Zero();
  for (std::uint32_t i : hood) shift += get(i) - pivot;
  shift /= m;
  const Eigen::Matrix<double, D, 1> mean = pivot + shift;
  Eigen::Matrix<double, D, 1> var = Eigen::Matrix<double, D, 1>::Zero();
  for (std::uint32_t i : hood) var += (get(i) - mean).cwiseAbs2();
  var /= m;
  double value = 0.0;
  Eigen::Matrix<double, D, 1> inv = Eigen::Matrix<double, D, 1>::Zero();
  for (int d = 0; d < D; ++d) {
    const double s = std::sqrt(var[d]);
    value += s;
    if (s > 1e-12) inv[d] = 1.0 / (m * s * D);
  }
  if (grad_scale != 0.0) {
    for (std::uint32_t i : hood) put(i, grad_scale * (get(i) - mean).cwiseProduct(inv));
  }
  return value / D;
}

}  // namespace

double knn_regularizer(std::span<const WorldGaussian> world, std::size_t k) {
  if (world.size() < k + 1) {
    throw Error(ErrorCode::InvalidArgument, "kNN regularizer needs at least k+1 Gaussians");
  }
  std::vector<Vec3> centers(world.size());
  for (std::size_t i = 0; i < world.size(); ++i) centers[i] = world[i].center;
  return knn_regularizer(world, knn_neighbors(centers, k));
}

double knn_regularizer(std::span<const WorldGaussian> world,
                       const std::vector<std::vector<std::uint32_t>>& neighbors, KnnGrad* grad) {
  if (neighbors.size() != world.size()) {
    throw Error(ErrorCode::DimensionMismatch, "neighbor lists do not match the Gaussian count");
  }
  const std::size_t n = world.size();
  if (n == 0) return 0.0;
  if (grad) {
    grad->color.assign(n, Vec3::Zero());
    grad->opacity.assign(n, 0.0);
    grad->scale.assign(n, Vec3::Zero());
    grad->rotation.assign(n, Vec4::Zero());
  }
  const double gs = grad ? 1.0 / static_cast<double>(n) : 0.0;
  std::vector<std::uint32_t> hood;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    hood.assign(1, static_cast<std::uint32_t>(i));
    for (std::uint32_t j : neighbors[i]) {
      if (j >= n) throw Error(ErrorCode::IndexOutOfRange, "neighbor index out of range");
      hood.push_back(j);
    }
    using V1 = Eigen::Matrix<double, 1, 1>;
    total += group_spread<3>(
        hood, [&](std::uint32_t j) { return world[j].color; },
        [&](std::uint32_t j, const Vec3& g) { grad->color[j] += g; }, gs);
    total += group_spread<1>(
        hood, [&](std::uint32_t j) { return V1(world[j].opacity); },
        [&](std::uint32_t j, const V1& g) { grad->opacity[j] += g[0]; }, gs);
    total += group_spread<3>(
        hood, [&](std::uint32_t j) { return world[j].scale; },
        [&](std::uint32_t j, const Vec3& g) { grad->scale[j] += g; }, gs);
    total += group_spread<4>(
        hood, [&](std::uint32_t j) { return to_wxyz(world[j].rotation); },
        [&](std::uint32_t j, const Vec4& g) { grad->rotation[j] += g; }, gs);
  }
  return total / static_cast<double>(n);
}

const LossTerm* LossBreakdown::find(const std::string& name) const {
  for (const LossTerm& t : terms) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

double LossBreakdown::contribution(const std::string& name) const {
  const LossTerm* t = find(name);
  return t && t->available ? t->weighted : 0.0;
}

LossBreakdown total_gaussian_loss(const Image& rendered, const Image& truth, std::span<const WorldGaussian> world,
                                  const LossWeights& w, std::size_t k,
                                  const std::vector<std::vector<std::uint32_t>>* neighbors, GaussianLossGrad* grad) {
  require_same_shape(rendered, truth);
  LossBreakdown out;
  auto add = [&](const std::string& name, double weight, double raw) {
    out.terms.push_back({name, raw, weight, weight * raw, true});
    out.total += weight * raw;
  };
  if (grad) {
    grad->d_image = Image(rendered.width, rendered.height);
    grad->knn = KnnGrad{};
  }
  double gap = 0.0;
  for (std::size_t i = 0; i < rendered.data.size(); ++i) gap = std::max(gap, std::abs(rendered.data[i] - truth.data[i]));
  const bool matched = gap <= kImageMatchTolerance;
  auto accumulate = [&](const Image& g, double weight) {
    if (matched) return;
    for (std::size_t i = 0; i < g.data.size(); ++i) grad->d_image.data[i] += weight * g.data[i];
  };

  add("l2", w.w_l2, w.w_l2 != 0.0 ? l2_image(rendered, truth) : 0.0);
  if (grad && w.w_l2 != 0.0) accumulate(l2_image_grad(rendered, truth), w.w_l2);

  out.terms.push_back({"lpips", 0.0, w.w_lpips, 0.0, false});

  add("ssim", w.w_ssim, w.w_ssim != 0.0 ? 1.0 - ssim(rendered, truth) : 0.0);
  if (grad && w.w_ssim != 0.0) accumulate(ssim_grad(rendered, truth), -w.w_ssim);

  add("sobel", w.w_sobel, w.w_sobel != 0.0 ? sobel_loss(rendered, truth) : 0.0);
  if (grad && w.w_sobel != 0.0) accumulate(sobel_loss_grad(rendered, truth), w.w_sobel);

  double knn = 0.0;
  if (w.w_knn != 0.0) {
    std::vector<std::vector<std::uint32_t>> own;
    if (!neighbors) {
      if (world.size() < k + 1) throw Error(ErrorCode::InvalidArgument, "kNN regularizer needs at least k+1 Gaussians");
      std::vector<Vec3> centers(world.size());
      for (std::size_t i = 0; i < world.size(); ++i) centers[i] = world[i].center;
      own = knn_neighbors(centers, k);
      neighbors = &own;
    }
    knn = knn_regularizer(world, *neighbors, grad ? &grad->knn : nullptr);
    if (grad) {
      for (auto& g : grad->knn.color) g *= w.w_knn;
      for (auto& g : grad->knn.opacity) g *= w.w_knn;
      for (auto& g : grad->knn.scale) g *= w.w_knn;
      for (auto& g : grad->knn.rotation) g *= w.w_knn;
    }
  }
  add("knn", w.w_knn, knn);
  return out;
}

}  // namespace meshsplat
