#pragma once

// Miniature pose-conditionable 3D-aware generator:
//   latent code --(linear synthesizer)--> tri-plane features
//   tri-plane --(bilinear lookup, summed over planes)--> per-point feature
//   feature --(one-hidden-layer decoder)--> density (softplus) and color (sigmoid)
// plus an optional learned upsampler applied to the composited raw image.
//
// Every stage has an explicit backward pass; all math is float64.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "avatar/camera.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

enum class ParamGroup { encoder, basis, synthesizer, decoder, upsampler };

const char* to_string(ParamGroup group);

/// Named, grouped reference to one trainable tensor.
struct ParamRef {
  std::string name;
  ParamGroup group;
  Tensor* tensor;
};

struct GeneratorConfig {
  std::size_t channels = 16;    // C
  std::size_t resolution = 32;  // R
  std::size_t latent_dim = 64;  // d
  // 1 = flat latent. L > 1 = per-layer (W+ style) layout: d = L * d_style and
  // style vector l drives the l-th contiguous block of (plane, channel) slices.
  std::size_t style_layers = 1;
  bool pose_conditioning = false;
  std::size_t decoder_hidden = 32;
  bool view_dependent = false;
  bool upsampler = false;
  double extent = 1.0;
  double synth_weight_std = 0.1;
  double synth_bias_std = 0.1;

  void validate() const;
  std::size_t plane_values() const { return 3 * channels * resolution * resolution; }
  std::size_t style_dim() const { return latent_dim / style_layers; }
  std::size_t decoder_inputs() const { return channels + (view_dependent ? 3 : 0); }
};

/// Point in the generator latent space. Layout (flat vs per-layer) is a
/// property of the generator configuration.
struct LatentCode {
  Eigen::RowVectorXd values;
};

struct TriPlane {
  Tensor planes;  // {3, C, R, R}; planes are XY, XZ, YZ
  double extent = 1.0;

  std::size_t channels() const { return planes.dim(1); }
  std::size_t resolution() const { return planes.dim(2); }
};

struct GeneratorParams {
  GeneratorConfig config;
  Tensor synth_weight;       // {L, plane_values / L, d / L}
  Tensor synth_bias;         // {plane_values}
  Tensor synth_cond_weight;  // {plane_values, 25}, empty unless pose_conditioning
  Tensor decoder_w1;         // {decoder_inputs, hidden}
  Tensor decoder_b1;         // {hidden}
  Tensor decoder_w2;         // {hidden, 4}; column 0 density, 1..3 color
  Tensor decoder_b2;         // {4}
  Tensor upsampler_weight;   // {3, 3, 3, 3} (out, in, ky, kx), empty unless upsampler
  Tensor upsampler_bias;     // {3}

  /// All tensors shaped for `config`, filled with zeros.
  static GeneratorParams zeros(const GeneratorConfig& config);
  /// Seeded random initialization. The upsampler starts at zero (identity residual).
  static GeneratorParams initialize(const GeneratorConfig& config, uint64_t seed);

  std::vector<ParamRef> parameters();
  bool all_finite();
};

TriPlane synthesize_planes(const GeneratorParams& params, const LatentCode& w, const CameraVector* cond);

/// Accumulates d(loss)/d(w) into `grad_w` and parameter gradients into `grad_params`
/// (either may be null) given d(loss)/d(planes).
void synthesize_planes_backward(const GeneratorParams& params, const LatentCode& w, const CameraVector* cond,
                                const Tensor& grad_planes, Eigen::RowVectorXd* grad_w, GeneratorParams* grad_params);

/// points: {N, 3} world coordinates. Returns {N, C}: the sum of the three
/// bilinear plane lookups. Coordinates beyond the outermost texel centers clamp.
Tensor sample_triplane(const TriPlane& planes, const Tensor& points);

void sample_triplane_backward(const TriPlane& planes, const Tensor& points, const Tensor& grad_features,
                              Tensor* grad_planes, Tensor* grad_points);

struct DecodedField {
  Tensor sigma;  // {N}
  Tensor color;  // {N, 3}
  // cached pre-activations for the backward pass
  Tensor hidden;       // {N, hidden}, softplus(pre)
  Tensor hidden_grad;  // {N, hidden}, softplus'(pre)
  Tensor output_pre;   // {N, 4}
};

/// view_dirs: {N, 3} or null. Required iff config.view_dependent.
DecodedField decode_feature(const GeneratorParams& params, const Tensor& features, const Tensor* view_dirs);

/// Returns d(loss)/d(features); accumulates parameter gradients into grad_params if non-null.
Tensor decode_feature_backward(const GeneratorParams& params, const Tensor& features, const Tensor* view_dirs,
                               const DecodedField& field, const Tensor& grad_sigma, const Tensor& grad_color,
                               GeneratorParams* grad_params);

/// Bilinear resize of an {h, w, 3} image to {height, width, 3} by an integer
/// factor, plus the learned 3x3 residual when present, clamped to [0, 1].
Tensor upsample(const GeneratorParams& params, const Tensor& raw, std::size_t height, std::size_t width);

Tensor upsample_backward(const GeneratorParams& params, const Tensor& raw, std::size_t height, std::size_t width,
                         const Tensor& grad_out, GeneratorParams* grad_params);

/// Plain bilinear resize (any channel count, integer factor), align-corners=false.
Tensor bilinear_resize(const Tensor& image, std::size_t height, std::size_t width);

}  // namespace avatar
