#pragma once

#include "meshsplat/container.hpp"
#include "meshsplat/image.hpp"
#include "meshsplat/losses.hpp"
#include "meshsplat/render.hpp"
#include "meshsplat/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace meshsplat {

/// One training view. `image` holds the background-removed subject
/// (composited over black) and `mask` its per-pixel coverage; with a mask
/// the target for background b is image + (1 - mask) * b. Without one the
/// image is used as-is over TrainOptions::background.
struct TrainFrame {
  PoseParams pose;
  Camera camera;
  Image image;
  std::vector<double> mask;
};

struct LearningRates {
  double position = 1.6e-4;  // multiplied by the scene extent
  double rotation = 1e-3;
  double log_scale = 5e-3;
  double color = 2.5e-3;
  double opacity = 5e-2;     // on the opacity logit
  double pose = 1e-3;
};

struct TrainOptions {
  int iterations = 3000;
  std::uint64_t seed = 0;
  LearningRates lr;
  LossWeights weights;
  std::size_t knn_k = kDefaultKnnK;
  bool random_background = true;
  Vec3 background = Vec3::Zero();
  int eval_every = 0;  // 0 disables held-out evaluation
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  int max_nan_skips = 10;
  bool prune = true;
  double prune_opacity = 0.005;
  bool optimize_pose = false;
  RenderSettings render;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-12;
};

struct IterationLog {
  int iteration = 0;
  std::size_t frame = 0;
  Vec3 background = Vec3::Zero();
  LossBreakdown breakdown;
  bool skipped = false;
  std::optional<double> eval_psnr;
  std::optional<double> eval_ssim;
};

struct TrainResult {
  std::vector<Splat> splats;
  std::vector<IterationLog> log;
  std::vector<PoseParams> poses;  // per frame; changed only with optimize_pose
  int nan_skips = 0;
  bool halted = false;
  std::string halt_reason;
  std::size_t pruned = 0;
  double scene_extent = 0.0;
};

/// Largest distance of a canonical vertex from the canonical centroid.
double scene_extent(const SkinnedMesh& mesh);

TrainResult train(const SkinnedMesh& mesh, std::span<const Splat> splats, std::span<const TrainFrame> frames,
                  const TrainOptions& opts = {}, std::span<const TrainFrame> holdout = {});

struct FrameMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double render_ms = 0.0;
};

struct EvalReport {
  std::vector<FrameMetrics> frames;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_render_ms = 0.0;
  std::size_t splat_count = 0;
};

/// Renders every pose/camera pair over `background` and scores it against
/// the truth image. `cams` holds one camera or one per pose.
EvalReport evaluate(const SkinnedMesh& mesh, std::span<const Splat> splats, std::span<const PoseParams> poses,
                    std::span<const Camera> cams, std::span<const Image> truth, const Vec3& background = Vec3::Zero(),
                    const RenderSettings& settings = {});

nlohmann::json to_json(const LossBreakdown& b);
nlohmann::json to_json(const IterationLog& log);
/// Timing columns are included only when requested, since they vary
/// between runs.
nlohmann::json to_json(const EvalReport& report, bool include_timing);

/// Checkpoint: the splat asset arrays plus float64 parameters and Adam
/// moments, in the binary container.
void write_checkpoint(const std::filesystem::path& path, std::span<const Splat> splats, const nlohmann::json& meta,
                      const std::vector<ContainerArray>& state);

}  // namespace meshsplat
