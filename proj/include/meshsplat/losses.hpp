#pragma once

#include "meshsplat/binding.hpp"
#include "meshsplat/image.hpp"
#include "meshsplat/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace meshsplat {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kPsnrCap = 100.0;
inline constexpr std::size_t kDefaultKnnK = 5;

/// Mean squared error over all pixels and channels.
double l2_image(const Image& a, const Image& b);
/// d l2_image / d a.
Image l2_image_grad(const Image& a, const Image& b);

/// Mean SSIM over every valid 11x11 window and channel.
double ssim(const Image& a, const Image& b);
/// d ssim / d a.
Image ssim_grad(const Image& a, const Image& b);

/// Per-pixel per-channel gradient magnitude from 3x3 Sobel kernels with
/// replicate padding, stored in an Image.
Image sobel_magnitude(const Image& img);

/// Mean squared difference of the Sobel magnitude maps.
double sobel_loss(const Image& a, const Image& b);
/// d sobel_loss / d a. The magnitude's gradient is taken as zero where it
/// vanishes.
Image sobel_loss_grad(const Image& a, const Image& b);

/// 10 log10(1 / MSE), capped at 100 dB.
double psnr(const Image& a, const Image& b);

/// Gradients of the kNN regularizer with respect to each Gaussian's
/// property groups.
struct KnnGrad {
  std::vector<Vec3> color;
  std::vector<double> opacity;
  std::vector<Vec3> scale;
  std::vector<Vec4> rotation;  // (w, x, y, z)
};

/// Mean over Gaussians of the summed group spreads of its neighborhood
/// (itself plus its k nearest centers). A group's spread is the mean of the
/// population standard deviations of its components.
double knn_regularizer(std::span<const WorldGaussian> world, std::size_t k = kDefaultKnnK);

/// Same, with neighbor lists precomputed by knn_neighbors(). The neighbor
/// selection is treated as constant for the gradient.
double knn_regularizer(std::span<const WorldGaussian> world,
                       const std::vector<std::vector<std::uint32_t>>& neighbors, KnnGrad* grad = nullptr);

struct LossTerm {
  std::string name;
  double raw = 0.0;
  double weight = 0.0;
  double weighted = 0.0;
  bool available = true;
};

struct LossBreakdown {
  std::vector<LossTerm> terms;
  double total = 0.0;

  const LossTerm* find(const std::string& name) const;
  /// Weighted contribution of a term, 0 when absent or unavailable.
  double contribution(const std::string& name) const;
};

struct GaussianLossGrad {
  Image d_image;
  KnnGrad knn;
};

/// Images agreeing to this per channel are treated as equal: the image
/// terms then contribute no gradient.
inline constexpr double kImageMatchTolerance = 1e-12;

/// w_l2 L2 + w_ssim (1 - SSIM) + w_sobel L_Sobel + w_knn L_KNN. The
/// perceptual term is listed as unavailable. Terms with zero weight are not
/// evaluated. `neighbors` defaults to the k nearest world centers.
LossBreakdown total_gaussian_loss(const Image& rendered, const Image& truth, std::span<const WorldGaussian> world,
                                  const LossWeights& w, std::size_t k = kDefaultKnnK,
                                  const std::vector<std::vector<std::uint32_t>>* neighbors = nullptr,
                                  GaussianLossGrad* grad = nullptr);

}  // namespace meshsplat
