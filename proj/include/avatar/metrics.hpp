#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avatar/data.hpp"
#include "avatar/model.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for images in [0, 1], capped at 100 dB.
double psnr(const Tensor& a, const Tensor& b);

// SSIM constants: 11x11 Gaussian window with sigma 1.5, C1 = 0.01^2, C2 = 0.03^2
// on the [0, 1] range. Borders use reflection padding (the edge pixel is not
// repeated: index -1 maps to 1). Computed per channel and averaged.
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

double ssim(const Tensor& a, const Tensor& b);

/// Normalized 1-D SSIM window; the 2-D window is its outer product.
std::vector<double> ssim_kernel();

/// Reflection of an out-of-range index into [0, n).
std::size_t reflect_index(long i, std::size_t n);

struct FrameMetrics {
  int64_t frame_id = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
};

struct EvalReport {
  std::vector<FrameMetrics> rows;
  // Means over rows.
  double psnr = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
  // Subspace diagnostics; NaN when the report has no model (e.g. a baseline).
  double gram_offdiag_max = std::nan("");
  double gram_diag_deviation = std::nan("");

  /// Recomputes the means from the rows.
  void aggregate();

  nlohmann::json summary_json() const;
  nlohmann::json row_json(const FrameMetrics& row) const;
  /// One JSON object per frame.
  void write_jsonl(const std::filesystem::path& path) const;
  void write_summary(const std::filesystem::path& path) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Metrics of predictions against targets, one row per pair.
EvalReport evaluate_images(std::span<const Tensor> predictions, std::span<const Tensor> targets,
                           std::span<const int64_t> frame_ids);

/// Renders each indexed frame from its own driving signal under its ground-truth
/// camera (seed 0, no jitter) and scores it. Pure in (model, dataset, indices).
EvalReport evaluate(const Model& model, const Dataset& dataset, std::span<const std::size_t> indices);

/// Scores the mean training image against every test frame.
EvalReport evaluate_mean_baseline(const Dataset& dataset, const DatasetSplit& split);

// Multi-view consistency of one latent. View A is `pose`, view B rotates it
// about the world up axis by `angle`. Pixels of A with opacity above
// `min_opacity` are lifted to 3-D with A's depth, projected into B and
// compared with B's render (bilinear lookup) when B's depth at that point agrees
// within `depth_tolerance` of the point's distance from B (occlusion
// check). The noise floor is the same masked mean absolute difference between
// two jittered re-renders of view A with different seeds.
inline constexpr double kConsistencyOpacity = 0.5;
inline constexpr double kConsistencyDepthTolerance = 0.1;

struct ConsistencyResult {
  double reprojection_error = 0.0;  // masked mean |rgb_A - rgb_B(reprojected)|
  double noise_floor = 0.0;         // masked mean |rgb_A(seed 1) - rgb_A(seed 2)|
  std::size_t valid_pixels = 0;
  double ratio() const { return reprojection_error / noise_floor; }
};

ConsistencyResult multiview_consistency(const GeneratorParams& generator, const LatentCode& latent,
                                        const CameraPose& pose, const RenderConfig& config, double angle,
                                        double min_opacity = kConsistencyOpacity,
                                        double depth_tolerance = kConsistencyDepthTolerance);

}  // namespace avatar
