#include "avatar/generator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "avatar/activations.hpp"
#include "avatar/errors.hpp"

namespace avatar {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// Linear interpolation stencil along one axis of a grid with `n` cells whose
// centers sit at continuous coordinate i (align-corners = false convention).
struct Stencil {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double t = 0.0;
  double dcoord = 0.0;  // d(t)/d(continuous coordinate); zero when clamped
};

Stencil make_stencil(double coord, std::size_t n, double scale) {
  Stencil s;
  if (n == 1) return s;
  const double hi = static_cast<double>(n - 1);
  bool clamped = false;
  if (coord <= 0.0) {
    coord = 0.0;
    clamped = true;
  } else if (coord >= hi) {
    coord = hi;
    clamped = true;
  }
  const auto base = std::min(static_cast<std::size_t>(coord), n - 2);
  s.i0 = base;
  s.i1 = base + 1;
  s.t = coord - static_cast<double>(base);
  s.dcoord = clamped ? 0.0 : scale;
  return s;
}

// Plane p uses world axes (col_axis, row_axis).
constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.storage()) v = dist(rng);
}

void check_latent(const GeneratorParams& params, const LatentCode& w) {
  if (static_cast<std::size_t>(w.values.size()) != params.config.latent_dim) {
    throw ShapeError("generator: latent code has dimension " + std::to_string(w.values.size()) + ", expected " +
                     std::to_string(params.config.latent_dim));
  }
}

void check_cond(const GeneratorParams& params, const CameraVector* cond) {
  if (params.config.pose_conditioning && cond == nullptr) {
    throw ConfigError("generator: pose conditioning is enabled but no camera vector was given");
  }
  if (!params.config.pose_conditioning && cond != nullptr) {
    throw ConfigError("generator: camera vector given but pose conditioning is disabled");
  }
}

}  // namespace

const char* to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::basis: return "basis";
    case ParamGroup::synthesizer: return "synthesizer";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::upsampler: return "upsampler";
  }
  return "?";
}

void GeneratorConfig::validate() const {
  if (channels == 0 || resolution == 0 || latent_dim == 0 || decoder_hidden == 0) {
    throw ConfigError("generator: channels, resolution, latent_dim and decoder_hidden must be positive");
  }
  if (style_layers == 0 || latent_dim % style_layers != 0) {
    throw ConfigError("generator: latent_dim must be divisible by style_layers");
  }
  if ((3 * channels) % style_layers != 0) {
    throw ConfigError("generator: 3 * channels must be divisible by style_layers");
  }
  if (!(extent > 0.0)) throw ConfigError("generator: extent must be positive");
}

GeneratorParams GeneratorParams::zeros(const GeneratorConfig& config) {
  config.validate();
  GeneratorParams p;
  p.config = config;
  const std::size_t out = config.plane_values();
  const std::size_t layers = config.style_layers;
  p.synth_weight = Tensor({layers, out / layers, config.style_dim()});
  p.synth_bias = Tensor({out});
  if (config.pose_conditioning) p.synth_cond_weight = Tensor({out, kCameraVectorSize});
  p.decoder_w1 = Tensor({config.decoder_inputs(), config.decoder_hidden});
  p.decoder_b1 = Tensor({config.decoder_hidden});
  p.decoder_w2 = Tensor({config.decoder_hidden, 4});
  p.decoder_b2 = Tensor({4});
  if (config.upsampler) {
    p.upsampler_weight = Tensor({3, 3, 3, 3});
    p.upsampler_bias = Tensor({3});
  }
  return p;
}

GeneratorParams GeneratorParams::initialize(const GeneratorConfig& config, uint64_t seed) {
  GeneratorParams p = zeros(config);
  std::mt19937_64 rng(seed);
  fill_normal(p.synth_weight, rng, config.synth_weight_std);
  fill_normal(p.synth_bias, rng, config.synth_bias_std);
  if (config.pose_conditioning) fill_normal(p.synth_cond_weight, rng, config.synth_weight_std * 0.1);
  fill_normal(p.decoder_w1, rng, 1.0 / std::sqrt(static_cast<double>(config.decoder_inputs())));
  fill_normal(p.decoder_w2, rng, 0.1 / std::sqrt(static_cast<double>(config.decoder_hidden)));
  return p;
}

std::vector<ParamRef> GeneratorParams::parameters() {
  std::vector<ParamRef> refs{
      {"generator.synth.weight", ParamGroup::synthesizer, &synth_weight},
      {"generator.synth.bias", ParamGroup::synthesizer, &synth_bias},
  };
  if (!synth_cond_weight.empty()) {
    refs.push_back({"generator.synth.cond_weight", ParamGroup::synthesizer, &synth_cond_weight});
  }
  refs.push_back({"generator.decoder.w1", ParamGroup::decoder, &decoder_w1});
  refs.push_back({"generator.decoder.b1", ParamGroup::decoder, &decoder_b1});
  refs.push_back({"generator.decoder.w2", ParamGroup::decoder, &decoder_w2});
  refs.push_back({"generator.decoder.b2", ParamGroup::decoder, &decoder_b2});
  if (!upsampler_weight.empty()) {
    refs.push_back({"generator.upsampler.weight", ParamGroup::upsampler, &upsampler_weight});
    refs.push_back({"generator.upsampler.bias", ParamGroup::upsampler, &upsampler_bias});
  }
  return refs;
}

bool GeneratorParams::all_finite() {
  for (const auto& ref : parameters()) {
    if (!ref.tensor->all_finite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Synthesizer

TriPlane synthesize_planes(const GeneratorParams& params, const LatentCode& w, const CameraVector* cond) {
  const auto& cfg = params.config;
  check_latent(params, w);
  check_cond(params, cond);

  const std::size_t layers = cfg.style_layers;
  const std::size_t chunk = cfg.plane_values() / layers;
  const std::size_t style = cfg.style_dim();

  TriPlane out;
  out.extent = cfg.extent;
  out.planes = Tensor({3, cfg.channels, cfg.resolution, cfg.resolution});
  Eigen::Map<Eigen::VectorXd> planes(out.planes.data(), static_cast<Eigen::Index>(cfg.plane_values()));
  planes = Eigen::Map<const Eigen::VectorXd>(params.synth_bias.data(), planes.size());

  for (std::size_t l = 0; l < layers; ++l) {
    ConstMatMap weight(params.synth_weight.data() + l * chunk * style, static_cast<Eigen::Index>(chunk),
                       static_cast<Eigen::Index>(style));
    planes.segment(static_cast<Eigen::Index>(l * chunk), static_cast<Eigen::Index>(chunk)).noalias() +=
        weight * w.values.segment(static_cast<Eigen::Index>(l * style), static_cast<Eigen::Index>(style)).transpose();
  }
  if (cond != nullptr) {
    ConstMatMap weight(params.synth_cond_weight.data(), planes.size(), kCameraVectorSize);
    Eigen::Map<const Eigen::VectorXd> c(cond->data(), kCameraVectorSize);
    planes.noalias() += weight * c;
  }
  return out;
}

void synthesize_planes_backward(const GeneratorParams& params, const LatentCode& w, const CameraVector* cond,
                                const Tensor& grad_planes, Eigen::RowVectorXd* grad_w, GeneratorParams* grad_params) {
  const auto& cfg = params.config;
  check_latent(params, w);
  check_cond(params, cond);
  require_shape(grad_planes, {3, cfg.channels, cfg.resolution, cfg.resolution}, "synthesize_planes_backward");

  const std::size_t layers = cfg.style_layers;
  const std::size_t chunk = cfg.plane_values() / layers;
  const std::size_t style = cfg.style_dim();
  const auto n = static_cast<Eigen::Index>(cfg.plane_values());
  Eigen::Map<const Eigen::VectorXd> g(grad_planes.data(), n);

  if (grad_w != nullptr) {
    if (grad_w->size() != static_cast<Eigen::Index>(cfg.latent_dim)) grad_w->setZero(cfg.latent_dim);
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const auto seg = g.segment(static_cast<Eigen::Index>(l * chunk), static_cast<Eigen::Index>(chunk));
    const auto ws = w.values.segment(static_cast<Eigen::Index>(l * style), static_cast<Eigen::Index>(style));
    if (grad_w != nullptr) {
      ConstMatMap weight(params.synth_weight.data() + l * chunk * style, static_cast<Eigen::Index>(chunk),
                         static_cast<Eigen::Index>(style));
      grad_w->segment(static_cast<Eigen::Index>(l * style), static_cast<Eigen::Index>(style)).noalias() +=
          (weight.transpose() * seg).transpose();
    }
    if (grad_params != nullptr) {
      MatMap gw(grad_params->synth_weight.data() + l * chunk * style, static_cast<Eigen::Index>(chunk),
                static_cast<Eigen::Index>(style));
      gw.noalias() += seg * ws;
    }
  }
  if (grad_params != nullptr) {
    Eigen::Map<Eigen::VectorXd>(grad_params->synth_bias.data(), n) += g;
    if (cond != nullptr) {
      MatMap gw(grad_params->synth_cond_weight.data(), n, kCameraVectorSize);
      Eigen::Map<const Eigen::RowVectorXd> c(cond->data(), kCameraVectorSize);
      gw.noalias() += g * c;
    }
  }
}

// ---------------------------------------------------------------------------
// Tri-plane lookup

Tensor sample_triplane(const TriPlane& tri, const Tensor& points) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw ShapeError("sample_triplane: points must be N x 3, got " + shape_string(points.shape()));
  }
  const std::size_t n = points.dim(0);
  const std::size_t channels = tri.channels();
  const std::size_t res = tri.resolution();
  const std::size_t plane_stride = res * res;
  const double to_grid = static_cast<double>(res) / (2.0 * tri.extent);
  const double* texels = tri.planes.data();

  Tensor out({n, channels});
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = points.data() + 3 * i;
    double* f = out.data() + i * channels;
    for (int p = 0; p < 3; ++p) {
      const double ucoord = (x[kPlaneAxes[p][0]] + tri.extent) * to_grid - 0.5;
      const double vcoord = (x[kPlaneAxes[p][1]] + tri.extent) * to_grid - 0.5;
      const Stencil sc = make_stencil(ucoord, res, 1.0);
      const Stencil sr = make_stencil(vcoord, res, 1.0);
      const double w00 = (1.0 - sr.t) * (1.0 - sc.t);
      const double w01 = (1.0 - sr.t) * sc.t;
      const double w10 = sr.t * (1.0 - sc.t);
      const double w11 = sr.t * sc.t;
      const double* plane = texels + static_cast<std::size_t>(p) * channels * plane_stride;
      const std::size_t o00 = sr.i0 * res + sc.i0;
      const std::size_t o01 = sr.i0 * res + sc.i1;
      const std::size_t o10 = sr.i1 * res + sc.i0;
      const std::size_t o11 = sr.i1 * res + sc.i1;
      for (std::size_t c = 0; c < channels; ++c) {
        const double* t = plane + c * plane_stride;
        f[c] += w00 * t[o00] + w01 * t[o01] + w10 * t[o10] + w11 * t[o11];
      }
    }
  }
  return out;
}

void sample_triplane_backward(const TriPlane& tri, const Tensor& points, const Tensor& grad_features,
                              Tensor* grad_planes, Tensor* grad_points) {
  const std::size_t n = points.dim(0);
  const std::size_t channels = tri.channels();
  const std::size_t res = tri.resolution();
  require_shape(grad_features, {n, channels}, "sample_triplane_backward");
  if (grad_planes != nullptr && grad_planes->shape() != tri.planes.shape()) *grad_planes = Tensor::zeros_like(tri.planes);
  if (grad_points != nullptr && grad_points->shape() != points.shape()) *grad_points = Tensor::zeros_like(points);

  const std::size_t plane_stride = res * res;
  const double to_grid = static_cast<double>(res) / (2.0 * tri.extent);
  const double* texels = tri.planes.data();

  for (std::size_t i = 0; i < n; ++i) {
    const double* x = points.data() + 3 * i;
    const double* g = grad_features.data() + i * channels;
    for (int p = 0; p < 3; ++p) {
      const double ucoord = (x[kPlaneAxes[p][0]] + tri.extent) * to_grid - 0.5;
      const double vcoord = (x[kPlaneAxes[p][1]] + tri.extent) * to_grid - 0.5;
      const Stencil sc = make_stencil(ucoord, res, to_grid);
      const Stencil sr = make_stencil(vcoord, res, to_grid);
      const double w00 = (1.0 - sr.t) * (1.0 - sc.t);
      const double w01 = (1.0 - sr.t) * sc.t;
      const double w10 = sr.t * (1.0 - sc.t);
      const double w11 = sr.t * sc.t;
      const std::size_t base = static_cast<std::size_t>(p) * channels * plane_stride;
      const std::size_t o00 = sr.i0 * res + sc.i0;
      const std::size_t o01 = sr.i0 * res + sc.i1;
      const std::size_t o10 = sr.i1 * res + sc.i0;
      const std::size_t o11 = sr.i1 * res + sc.i1;
      if (grad_planes != nullptr) {
        double* gp = grad_planes->data() + base;
        for (std::size_t c = 0; c < channels; ++c) {
          double* t = gp + c * plane_stride;
          t[o00] += w00 * g[c];
          t[o01] += w01 * g[c];
          t[o10] += w10 * g[c];
          t[o11] += w11 * g[c];
        }
      }
      if (grad_points != nullptr && (sc.dcoord != 0.0 || sr.dcoord != 0.0)) {
        double du = 0.0;
        double dv = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const double* t = texels + base + c * plane_stride;
          du += g[c] * ((1.0 - sr.t) * (t[o01] - t[o00]) + sr.t * (t[o11] - t[o10]));
          dv += g[c] * ((1.0 - sc.t) * (t[o10] - t[o00]) + sc.t * (t[o11] - t[o01]));
        }
        double* gx = grad_points->data() + 3 * i;
        gx[kPlaneAxes[p][0]] += du * sc.dcoord;
        gx[kPlaneAxes[p][1]] += dv * sr.dcoord;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Decoder

namespace {

RowMatrix decoder_input(const GeneratorParams& params, const Tensor& features, const Tensor* view_dirs) {
  const auto& cfg = params.config;
  if (features.rank() != 2 || features.dim(1) != cfg.channels) {
    throw ShapeError("decode_feature: features must be N x " + std::to_string(cfg.channels) + ", got " +
                     shape_string(features.shape()));
  }
  const auto n = static_cast<Eigen::Index>(features.dim(0));
  if (cfg.view_dependent) {
    if (view_dirs == nullptr) throw ConfigError("decode_feature: decoder is view-dependent but no directions given");
    require_shape(*view_dirs, {features.dim(0), 3}, "decode_feature view_dirs");
    RowMatrix x(n, static_cast<Eigen::Index>(cfg.decoder_inputs()));
    x.leftCols(static_cast<Eigen::Index>(cfg.channels)) =
        ConstMatMap(features.data(), n, static_cast<Eigen::Index>(cfg.channels));
    x.rightCols(3) = ConstMatMap(view_dirs->data(), n, 3);
    return x;
  }
  return ConstMatMap(features.data(), n, static_cast<Eigen::Index>(cfg.channels));
}

}  // namespace

DecodedField decode_feature(const GeneratorParams& params, const Tensor& features, const Tensor* view_dirs) {
  const auto& cfg = params.config;
  const RowMatrix x = decoder_input(params, features, view_dirs);
  const auto n = x.rows();
  const auto hidden = static_cast<Eigen::Index>(cfg.decoder_hidden);

  DecodedField out;
  out.hidden = Tensor({static_cast<std::size_t>(n), cfg.decoder_hidden});
  out.hidden_grad = Tensor({static_cast<std::size_t>(n), cfg.decoder_hidden});
  out.output_pre = Tensor({static_cast<std::size_t>(n), 4});
  out.sigma = Tensor({static_cast<std::size_t>(n)});
  out.color = Tensor({static_cast<std::size_t>(n), 3});

  MatMap h(out.hidden.data(), n, hidden);
  h.noalias() = x * ConstMatMap(params.decoder_w1.data(), x.cols(), hidden);
  h.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params.decoder_b1.data(), hidden);
  {
    // Vectorized softplus; inputs above 30 pass through unchanged.
    auto hv = Eigen::Map<Eigen::ArrayXd>(out.hidden.data(), static_cast<Eigen::Index>(out.hidden.size()));
    const Eigen::ArrayXd z = hv.min(30.0).exp();
    Eigen::Map<Eigen::ArrayXd>(out.hidden_grad.data(), hv.size()) = (hv > 30.0).select(1.0, z / (1.0 + z));
    // log(1 + z) loses relative precision for tiny z; use the series there.
    const Eigen::ArrayXd sp = (z < 1e-5).select(z * (1.0 - 0.5 * z), (1.0 + z).log());
    hv = (hv > 30.0).select(hv, sp);
  }

  MatMap o(out.output_pre.data(), n, 4);
  o.noalias() = h * ConstMatMap(params.decoder_w2.data(), hidden, 4);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params.decoder_b2.data(), 4);

  for (Eigen::Index i = 0; i < n; ++i) {
    out.sigma[static_cast<std::size_t>(i)] = act::softplus(o(i, 0));
    for (int c = 0; c < 3; ++c) out.color[static_cast<std::size_t>(i) * 3 + c] = act::sigmoid(o(i, c + 1));
  }
  return out;
}

Tensor decode_feature_backward(const GeneratorParams& params, const Tensor& features, const Tensor* view_dirs,
                               const DecodedField& field, const Tensor& grad_sigma, const Tensor& grad_color,
                               GeneratorParams* grad_params) {
  const auto& cfg = params.config;
  const std::size_t n = features.dim(0);
  require_shape(grad_sigma, {n}, "decode_feature_backward sigma");
  require_shape(grad_color, {n, 3}, "decode_feature_backward color");
  const auto rows = static_cast<Eigen::Index>(n);
  const auto hidden = static_cast<Eigen::Index>(cfg.decoder_hidden);

  RowMatrix g_out(rows, 4);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double* o = field.output_pre.data() + 4 * i;
    g_out(i, 0) = grad_sigma[static_cast<std::size_t>(i)] * act::softplus_grad(o[0]);
    for (int c = 0; c < 3; ++c) {
      const double s = field.color[static_cast<std::size_t>(i) * 3 + c];
      g_out(i, c + 1) = grad_color[static_cast<std::size_t>(i) * 3 + c] * s * (1.0 - s);
    }
  }
  const ConstMatMap h(field.hidden.data(), rows, hidden);
  const ConstMatMap w2(params.decoder_w2.data(), hidden, 4);
  RowMatrix g_hidden = g_out * w2.transpose();
  g_hidden.array() *= ConstMatMap(field.hidden_grad.data(), rows, hidden).array();

  const auto inputs = static_cast<Eigen::Index>(cfg.decoder_inputs());
  const ConstMatMap w1(params.decoder_w1.data(), inputs, hidden);
  if (grad_params != nullptr) {
    MatMap(grad_params->decoder_w2.data(), hidden, 4).noalias() += h.transpose() * g_out;
    Eigen::Map<Eigen::RowVectorXd>(grad_params->decoder_b2.data(), 4) += g_out.colwise().sum();
    const RowMatrix x = decoder_input(params, features, view_dirs);
    MatMap(grad_params->decoder_w1.data(), inputs, hidden).noalias() += x.transpose() * g_hidden;
    Eigen::Map<Eigen::RowVectorXd>(grad_params->decoder_b1.data(), hidden) += g_hidden.colwise().sum();
  }

  Tensor grad_features({n, cfg.channels});
  MatMap(grad_features.data(), rows, static_cast<Eigen::Index>(cfg.channels)).noalias() =
      g_hidden * w1.topRows(static_cast<Eigen::Index>(cfg.channels)).transpose();
  return grad_features;
}

// ---------------------------------------------------------------------------
// Upsampling

namespace {

void check_scale(std::size_t in, std::size_t out, const char* axis) {
  if (in == 0 || out == 0 || out % in != 0) {
    throw ConfigError(std::string("upsample: output ") + axis + " " + std::to_string(out) +
                      " is not an integer multiple of " + std::to_string(in));
  }
}

Stencil resize_stencil(std::size_t dst, std::size_t in, std::size_t out) {
  const double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  return make_stencil(src, in, 1.0);
}

void bilinear_resize_backward(const Tensor& grad_out, Tensor& grad_in) {
  const std::size_t h = grad_in.dim(0);
  const std::size_t w = grad_in.dim(1);
  const std::size_t ch = grad_in.dim(2);
  const std::size_t height = grad_out.dim(0);
  const std::size_t width = grad_out.dim(1);
  for (std::size_t y = 0; y < height; ++y) {
    const Stencil sy = resize_stencil(y, h, height);
    for (std::size_t x = 0; x < width; ++x) {
      const Stencil sx = resize_stencil(x, w, width);
      const double* g = grad_out.data() + (y * width + x) * ch;
      double* a = grad_in.data() + (sy.i0 * w + sx.i0) * ch;
      double* b = grad_in.data() + (sy.i0 * w + sx.i1) * ch;
      double* c = grad_in.data() + (sy.i1 * w + sx.i0) * ch;
      double* d = grad_in.data() + (sy.i1 * w + sx.i1) * ch;
      for (std::size_t k = 0; k < ch; ++k) {
        a[k] += (1.0 - sy.t) * (1.0 - sx.t) * g[k];
        b[k] += (1.0 - sy.t) * sx.t * g[k];
        c[k] += sy.t * (1.0 - sx.t) * g[k];
        d[k] += sy.t * sx.t * g[k];
      }
    }
  }
}

// 3x3 residual on an {H, W, 3} image with zero padding, added in place to `pre`.
void apply_residual(const GeneratorParams& params, const Tensor& image, Tensor& pre) {
  const std::size_t height = image.dim(0);
  const std::size_t width = image.dim(1);
  const double* k = params.upsampler_weight.data();
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double* out = pre.data() + (y * width + x) * 3;
      for (int o = 0; o < 3; ++o) {
        double acc = params.upsampler_bias[static_cast<std::size_t>(o)];
        for (int ky = 0; ky < 3; ++ky) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(height)) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const long sx = static_cast<long>(x) + kx - 1;
            if (sx < 0 || sx >= static_cast<long>(width)) continue;
            const double* px = image.data() + (static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)) * 3;
            for (int i = 0; i < 3; ++i) acc += k[((o * 3 + i) * 3 + ky) * 3 + kx] * px[i];
          }
        }
        out[o] += acc;
      }
    }
  }
}

}  // namespace

Tensor bilinear_resize(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw ShapeError("bilinear_resize: expected H x W x C");
  const std::size_t h = image.dim(0);
  const std::size_t w = image.dim(1);
  const std::size_t ch = image.dim(2);
  check_scale(h, height, "height");
  check_scale(w, width, "width");
  if (h == height && w == width) return image;

  Tensor out({height, width, ch});
  for (std::size_t y = 0; y < height; ++y) {
    const Stencil sy = resize_stencil(y, h, height);
    for (std::size_t x = 0; x < width; ++x) {
      const Stencil sx = resize_stencil(x, w, width);
      const double* a = image.data() + (sy.i0 * w + sx.i0) * ch;
      const double* b = image.data() + (sy.i0 * w + sx.i1) * ch;
      const double* c = image.data() + (sy.i1 * w + sx.i0) * ch;
      const double* d = image.data() + (sy.i1 * w + sx.i1) * ch;
      double* o = out.data() + (y * width + x) * ch;
      for (std::size_t k = 0; k < ch; ++k) {
        o[k] = (1.0 - sy.t) * ((1.0 - sx.t) * a[k] + sx.t * b[k]) + sy.t * ((1.0 - sx.t) * c[k] + sx.t * d[k]);
      }
    }
  }
  return out;
}

Tensor upsample(const GeneratorParams& params, const Tensor& raw, std::size_t height, std::size_t width) {
  require_image(raw, "upsample");
  Tensor out = bilinear_resize(raw, height, width);
  if (!params.upsampler_weight.empty()) {
    const Tensor resized = out;
    apply_residual(params, resized, out);
  }
  for (double& v : out.storage()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Tensor upsample_backward(const GeneratorParams& params, const Tensor& raw, std::size_t height, std::size_t width,
                         const Tensor& grad_out, GeneratorParams* grad_params) {
  require_image(raw, "upsample_backward");
  require_shape(grad_out, {height, width, 3}, "upsample_backward");
  const Tensor resized = bilinear_resize(raw, height, width);
  Tensor pre = resized;
  const bool residual = !params.upsampler_weight.empty();
  if (residual) apply_residual(params, resized, pre);

  // Clamp passes gradient only where the pre-clamp value was inside [0, 1].
  Tensor g_pre = grad_out;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (pre[i] < 0.0 || pre[i] > 1.0) g_pre[i] = 0.0;
  }

  Tensor g_resized = g_pre;
  if (residual) {
    const double* k = params.upsampler_weight.data();
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double* g = g_pre.data() + (y * width + x) * 3;
        for (int o = 0; o < 3; ++o) {
          if (grad_params != nullptr) grad_params->upsampler_bias[static_cast<std::size_t>(o)] += g[o];
          for (int ky = 0; ky < 3; ++ky) {
            const long sy = static_cast<long>(y) + ky - 1;
            if (sy < 0 || sy >= static_cast<long>(height)) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const long sx = static_cast<long>(x) + kx - 1;
              if (sx < 0 || sx >= static_cast<long>(width)) continue;
              const std::size_t src = (static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)) * 3;
              for (int i = 0; i < 3; ++i) {
                const std::size_t ki = static_cast<std::size_t>(((o * 3 + i) * 3 + ky) * 3 + kx);
                g_resized[src + static_cast<std::size_t>(i)] += k[ki] * g[o];
                if (grad_params != nullptr) grad_params->upsampler_weight[ki] += resized[src + static_cast<std::size_t>(i)] * g[o];
              }
            }
          }
        }
      }
    }
  }

  if (raw.dim(0) == height && raw.dim(1) == width) return g_resized;
  Tensor grad_raw = Tensor::zeros_like(raw);
  bilinear_resize_backward(g_resized, grad_raw);
  return grad_raw;
}

}  // namespace avatar
