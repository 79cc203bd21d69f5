#include "avatar/renderer.hpp"

#include <cmath>
#include <random>

#include "avatar/errors.hpp"

namespace avatar {

void RenderConfig::validate() const {
  if (n_samples < 2) throw ConfigError("render: n_samples must be at least 2");
  if (!(near >= 0.0 && near < far)) throw ConfigError("render: require 0 <= near < far");
  if (raw_height == 0 || raw_width == 0) throw ConfigError("render: raw resolution must be positive");
  if (raw_height > output_height || raw_width > output_width) {
    throw ConfigError("render: raw resolution must not exceed the output resolution");
  }
  if (output_height % raw_height != 0 || output_width % raw_width != 0) {
    throw ConfigError("render: output resolution must be an integer multiple of the raw resolution");
  }
}

Tensor sample_along_rays(const RayBundle& rays, const RenderConfig& config, uint64_t seed) {
  config.validate();
  const std::size_t n = rays.count();
  const std::size_t s = config.n_samples;
  const double bin = (config.far - config.near) / static_cast<double>(s);
  Tensor depths({n, s});
  if (!config.stratified) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < s; ++i) depths[r * s + i] = config.near + (static_cast<double>(i) + 0.5) * bin;
    }
    return depths;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < s; ++i) depths[r * s + i] = config.near + (static_cast<double>(i) + jitter(rng)) * bin;
  }
  return depths;
}

namespace {

void check_composite_inputs(const Tensor& sigmas, const Tensor& colors, const Tensor& depths,
                            const RenderConfig& config) {
  if (sigmas.rank() != 2) throw ShapeError("composite: sigmas must be N x S");
  const std::size_t n = sigmas.dim(0);
  const std::size_t s = sigmas.dim(1);
  require_shape(colors, {n, s, 3}, "composite colors");
  require_shape(depths, {n, s}, "composite depths");
  for (std::size_t r = 0; r < n; ++r) {
    const double* d = depths.data() + r * s;
    for (std::size_t i = 0; i + 1 < s; ++i) {
      if (!(d[i + 1] > d[i])) {
        throw ValidationError("composite: depths must be strictly increasing along each ray (ray " +
                              std::to_string(r) + ", sample " + std::to_string(i + 1) + ")");
      }
    }
    if (s > 0 && d[s - 1] > config.far) throw ValidationError("composite: sample depth beyond far plane");
  }
  for (double v : sigmas.storage()) {
    if (!(v >= 0.0)) throw ValidationError("composite: sigmas must be non-negative and finite");
  }
}

double interval(const double* d, std::size_t i, std::size_t s, double far) {
  return i + 1 < s ? d[i + 1] - d[i] : far - d[i];
}

}  // namespace

CompositeResult composite(const Tensor& sigmas, const Tensor& colors, const Tensor& depths,
                          const RenderConfig& config) {
  check_composite_inputs(sigmas, colors, depths, config);
  const std::size_t n = sigmas.dim(0);
  const std::size_t s = sigmas.dim(1);
  const double bg = config.background_value();

  CompositeResult out;
  out.rgb = Tensor({n, 3});
  out.depth = Tensor({n});
  out.opacity = Tensor({n});
  out.weights = Tensor({n, s});
  out.residual = Tensor({n});
  out.weighted_depth = Tensor({n});
  for (std::size_t r = 0; r < n; ++r) {
    const double* sig = sigmas.data() + r * s;
    const double* col = colors.data() + r * s * 3;
    const double* d = depths.data() + r * s;
    double* w = out.weights.data() + r * s;
    double* rgb = out.rgb.data() + r * 3;
    double transmittance = 1.0;
    double opacity = 0.0;
    double wdepth = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      const double alpha = -std::expm1(-sig[i] * interval(d, i, s, config.far));
      const double weight = transmittance * alpha;
      w[i] = weight;
      for (int c = 0; c < 3; ++c) rgb[c] += weight * col[i * 3 + c];
      opacity += weight;
      wdepth += weight * d[i];
      transmittance *= 1.0 - alpha;
    }
    for (int c = 0; c < 3; ++c) rgb[c] += transmittance * bg;
    out.opacity[r] = opacity;
    out.residual[r] = transmittance;
    out.weighted_depth[r] = wdepth;
    out.depth[r] = wdepth / std::max(opacity, kDepthEpsilon);
  }
  return out;
}

void composite_backward(const Tensor& sigmas, const Tensor& colors, const Tensor& depths, const RenderConfig& config,
                        const CompositeResult& result, const Tensor& grad_rgb, Tensor& grad_sigmas,
                        Tensor& grad_colors) {
  const std::size_t n = sigmas.dim(0);
  const std::size_t s = sigmas.dim(1);
  require_shape(grad_rgb, {n, 3}, "composite_backward");
  grad_sigmas = Tensor({n, s});
  grad_colors = Tensor({n, s, 3});
  const double bg = config.background_value();

  for (std::size_t r = 0; r < n; ++r) {
    const double* sig = sigmas.data() + r * s;
    const double* col = colors.data() + r * s * 3;
    const double* d = depths.data() + r * s;
    const double* w = result.weights.data() + r * s;
    const double* g = grad_rgb.data() + r * 3;
    double* gs = grad_sigmas.data() + r * s;
    double* gc = grad_colors.data() + r * s * 3;

    // Suffix term: g . (sum_{k>i} w_k c_k + T_end * bg), walked from the back.
    double behind = result.residual[r] * bg * (g[0] + g[1] + g[2]);
    double transmittance_after = result.residual[r];
    for (std::size_t ii = s; ii-- > 0;) {
      const double delta = interval(d, ii, s, config.far);
      const double gdotc = g[0] * col[ii * 3] + g[1] * col[ii * 3 + 1] + g[2] * col[ii * 3 + 2];
      for (int c = 0; c < 3; ++c) gc[ii * 3 + c] = w[ii] * g[c];
      gs[ii] = delta * (transmittance_after * gdotc - behind);
      behind += w[ii] * gdotc;
      // T_i = T_{i+1} / (1 - alpha_i); recompute from the forward weights instead
      // of dividing so saturated samples stay finite.
      const double alpha = -std::expm1(-sig[ii] * delta);
      transmittance_after = alpha > 0.0 ? w[ii] / alpha : transmittance_after / (1.0 - alpha);
    }
  }
}

RenderOutput render(const GeneratorParams& params, const LatentCode& w, const CameraPose& pose,
                    const RenderConfig& config, uint64_t seed, RenderTrace* trace) {
  config.validate();
  const RayBundle rays = generate_rays(pose, config.raw_height, config.raw_width, config.near, config.far);
  const std::size_t n = rays.count();
  const std::size_t s = config.n_samples;

  std::optional<CameraVector> cond;
  if (params.config.pose_conditioning) cond = flatten_camera(pose);
  TriPlane planes = synthesize_planes(params, w, cond ? &*cond : nullptr);

  Tensor depths = sample_along_rays(rays, config, seed);
  Tensor points({n * s, 3});
  Tensor view_dirs;
  if (params.config.view_dependent) view_dirs = Tensor({n * s, 3});
  for (std::size_t r = 0; r < n; ++r) {
    const Eigen::Vector3d& o = rays.origins[r];
    const Eigen::Vector3d& dir = rays.directions[r];
    for (std::size_t i = 0; i < s; ++i) {
      const double t = depths[r * s + i];
      double* p = points.data() + (r * s + i) * 3;
      for (int a = 0; a < 3; ++a) p[a] = o[a] + t * dir[a];
      if (!view_dirs.empty()) {
        for (int a = 0; a < 3; ++a) view_dirs[(r * s + i) * 3 + static_cast<std::size_t>(a)] = dir[a];
      }
    }
  }

  Tensor features = sample_triplane(planes, points);
  DecodedField field = decode_feature(params, features, view_dirs.empty() ? nullptr : &view_dirs);
  Tensor sigmas(Shape{n, s}, field.sigma.storage());
  Tensor colors(Shape{n, s, 3}, field.color.storage());
  CompositeResult comp = composite(sigmas, colors, depths, config);

  Tensor raw_rgb(Shape{config.raw_height, config.raw_width, 3}, comp.rgb.storage());
  Tensor raw_opacity(Shape{config.raw_height, config.raw_width, 1}, comp.opacity.storage());
  Tensor raw_wdepth(Shape{config.raw_height, config.raw_width, 1}, comp.weighted_depth.storage());

  RenderOutput out;
  out.rgb = upsample(params, raw_rgb, config.output_height, config.output_width);
  // Opacity-weighted depth is resized before normalization so upsampled depth
  // stays inside [near, far] wherever the opacity is non-zero.
  const Tensor opacity = bilinear_resize(raw_opacity, config.output_height, config.output_width);
  const Tensor wdepth = bilinear_resize(raw_wdepth, config.output_height, config.output_width);
  out.opacity = Tensor({config.output_height, config.output_width});
  out.depth = Tensor({config.output_height, config.output_width});
  for (std::size_t i = 0; i < out.opacity.size(); ++i) {
    out.opacity[i] = opacity[i];
    out.depth[i] = wdepth[i] / std::max(opacity[i], kDepthEpsilon);
  }

  if (trace != nullptr) {
    trace->latent = w;
    trace->cond = cond;
    trace->planes = std::move(planes);
    trace->points = std::move(points);
    trace->view_dirs = std::move(view_dirs);
    trace->features = std::move(features);
    trace->field = std::move(field);
    trace->depths = std::move(depths);
    trace->composite = std::move(comp);
    trace->raw_rgb = std::move(raw_rgb);
  }
  return out;
}

void render_backward(const GeneratorParams& params, const RenderConfig& config, const RenderTrace& trace,
                     const Tensor& grad_rgb, Eigen::RowVectorXd* grad_w, GeneratorParams* grad_params) {
  const std::size_t s = config.n_samples;
  const std::size_t n = config.raw_height * config.raw_width;

  const Tensor grad_raw =
      upsample_backward(params, trace.raw_rgb, config.output_height, config.output_width, grad_rgb, grad_params);

  const Tensor sigmas(Shape{n, s}, trace.field.sigma.storage());
  const Tensor colors(Shape{n, s, 3}, trace.field.color.storage());
  const Tensor grad_ray_rgb(Shape{n, 3}, grad_raw.storage());
  Tensor grad_sigmas;
  Tensor grad_colors;
  composite_backward(sigmas, colors, trace.depths, config, trace.composite, grad_ray_rgb, grad_sigmas, grad_colors);

  const Tensor grad_sigma_flat(Shape{n * s}, std::move(grad_sigmas.storage()));
  const Tensor grad_color_flat(Shape{n * s, 3}, std::move(grad_colors.storage()));
  const Tensor grad_features =
      decode_feature_backward(params, trace.features, trace.view_dirs.empty() ? nullptr : &trace.view_dirs,
                              trace.field, grad_sigma_flat, grad_color_flat, grad_params);

  Tensor grad_planes = Tensor::zeros_like(trace.planes.planes);
  sample_triplane_backward(trace.planes, trace.points, grad_features, &grad_planes, nullptr);
  synthesize_planes_backward(params, trace.latent, trace.cond ? &*trace.cond : nullptr, grad_planes, grad_w,
                             grad_params);
}

}  // namespace avatar
