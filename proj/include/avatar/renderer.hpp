#pragma once

#include <cstdint>
#include <optional>

#include "avatar/camera.hpp"
#include "avatar/generator.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

enum class Background { black, white };

struct RenderConfig {
  std::size_t n_samples = 32;
  double near = 1.5;
  double far = 3.5;
  bool stratified = false;
  Background background = Background::black;
  std::size_t raw_height = 64;
  std::size_t raw_width = 64;
  std::size_t output_height = 64;
  std::size_t output_width = 64;

  void validate() const;
  double background_value() const { return background == Background::white ? 1.0 : 0.0; }
};

struct RenderOutput {
  Tensor rgb;      // {H, W, 3} in [0, 1]
  Tensor depth;    // {H, W}, world units
  Tensor opacity;  // {H, W} in [0, 1]
};

/// Normalization floor for expected depth on (nearly) empty rays.
inline constexpr double kDepthEpsilon = 1e-6;

/// {N, n_samples} depths: bin centers, or one uniform jitter per bin when
/// stratified (reproducible from `seed`).
Tensor sample_along_rays(const RayBundle& rays, const RenderConfig& config, uint64_t seed);

struct CompositeResult {
  Tensor rgb;              // {N, 3}
  Tensor depth;            // {N}
  Tensor opacity;          // {N}
  Tensor weights;          // {N, S}: T_i * alpha_i
  Tensor residual;         // {N}: transmittance past the last sample
  Tensor weighted_depth;   // {N}: sum of weights * depth (before normalization)
};

/// Emission-absorption quadrature. The last interval ends at config.far.
CompositeResult composite(const Tensor& sigmas, const Tensor& colors, const Tensor& depths,
                          const RenderConfig& config);

/// Gradients of a loss on the composited rgb with respect to sigmas and colors.
void composite_backward(const Tensor& sigmas, const Tensor& colors, const Tensor& depths, const RenderConfig& config,
                        const CompositeResult& result, const Tensor& grad_rgb, Tensor& grad_sigmas,
                        Tensor& grad_colors);

/// Intermediate values kept for render_backward.
struct RenderTrace {
  LatentCode latent;
  std::optional<CameraVector> cond;
  TriPlane planes;
  Tensor points;     // {N*S, 3}
  Tensor view_dirs;  // {N*S, 3}, only when the decoder is view-dependent
  Tensor features;   // {N*S, C}
  DecodedField field;
  Tensor depths;     // {N, S}
  CompositeResult composite;
  Tensor raw_rgb;    // {h, w, 3}
};

RenderOutput render(const GeneratorParams& params, const LatentCode& w, const CameraPose& pose,
                    const RenderConfig& config, uint64_t seed, RenderTrace* trace = nullptr);

/// Back-propagates d(loss)/d(rgb) ({H, W, 3}) through a traced render. Gradients
/// are accumulated into `grad_w` and `grad_params` when non-null.
void render_backward(const GeneratorParams& params, const RenderConfig& config, const RenderTrace& trace,
                     const Tensor& grad_rgb, Eigen::RowVectorXd* grad_w, GeneratorParams* grad_params);

}  // namespace avatar
