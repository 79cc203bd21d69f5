#include "avatar/metrics.hpp"

#include <cmath>
#include <fstream>

#include "avatar/errors.hpp"
#include "avatar/perceptual.hpp"

namespace avatar {

using json = nlohmann::json;

double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "psnr");
  if (a.empty()) throw ShapeError("psnr: empty images");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

std::vector<double> ssim_kernel() {
  std::vector<double> k(kSsimWindow);
  const double c = static_cast<double>(kSsimWindow / 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double x = static_cast<double>(i) - c;
    k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long last = static_cast<long>(n) - 1;
  while (i < 0 || i > last) i = i < 0 ? -i : 2 * last - i;
  return static_cast<std::size_t>(i);
}

namespace {

// Separable Gaussian filter of one {H, W} channel with reflection padding.
std::vector<double> gaussian_filter(const std::vector<double>& img, std::size_t h, std::size_t w,
                                    const std::vector<double>& k) {
  const long r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(h * w), out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (long j = -r; j <= r; ++j) s += k[static_cast<std::size_t>(j + r)] * img[y * w + reflect_index(static_cast<long>(x) + j, w)];
      tmp[y * w + x] = s;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (long j = -r; j <= r; ++j) s += k[static_cast<std::size_t>(j + r)] * tmp[reflect_index(static_cast<long>(y) + j, h) * w + x];
      out[y * w + x] = s;
    }
  }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ssim");
  if (a.rank() != 3 || a.empty()) throw ShapeError("ssim: expected non-empty {H, W, C} images");
  const std::size_t h = a.dim(0), w = a.dim(1), c = a.dim(2);
  const std::vector<double> k = ssim_kernel();
  double total = 0.0;
  std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      x[i] = a[i * c + ch];
      y[i] = b[i * c + ch];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = gaussian_filter(x, h, w, k);
    const auto my = gaussian_filter(y, h, w, k);
    const auto sxx = gaussian_filter(xx, h, w, k);
    const auto syy = gaussian_filter(yy, h, w, k);
    const auto sxy = gaussian_filter(xy, h, w, k);
    double sum = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      sum += ((2.0 * mx[i] * my[i] + kSsimC1) * (2.0 * cov + kSsimC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kSsimC1) * (vx + vy + kSsimC2));
    }
    total += sum / static_cast<double>(h * w);
  }
  return total / static_cast<double>(c);
}

void EvalReport::aggregate() {
  psnr = ssim = perceptual = 0.0;
  if (rows.empty()) return;
  for (const auto& r : rows) {
    psnr += r.psnr;
    ssim += r.ssim;
    perceptual += r.perceptual;
  }
  const auto n = static_cast<double>(rows.size());
  psnr /= n;
  ssim /= n;
  perceptual /= n;
}

namespace {

json maybe_number(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

}  // namespace

json EvalReport::summary_json() const {
  return {{"frames", rows.size()},
          {"psnr", psnr},
          {"ssim", ssim},
          {"perceptual", perceptual},
          {"gram_offdiag_max", maybe_number(gram_offdiag_max)},
          {"gram_diag_deviation", maybe_number(gram_diag_deviation)}};
}

json EvalReport::row_json(const FrameMetrics& r) const {
  return {{"frame_id", r.frame_id}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"perceptual", r.perceptual}};
}

void EvalReport::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : rows) out << row_json(r).dump() << '\n';
}

void EvalReport::write_summary(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << summary_json().dump(2) << '\n';
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "frame_id,psnr,ssim,perceptual\n";
  for (const auto& r : rows) out << r.frame_id << ',' << r.psnr << ',' << r.ssim << ',' << r.perceptual << '\n';
  out << "mean," << psnr << ',' << ssim << ',' << perceptual << '\n';
}

EvalReport evaluate_images(std::span<const Tensor> predictions, std::span<const Tensor> targets,
                           std::span<const int64_t> frame_ids) {
  if (predictions.size() != targets.size() || predictions.size() != frame_ids.size()) {
    throw ShapeError("evaluate_images: predictions, targets and ids differ in count");
  }
  EvalReport report;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    require_image(predictions[i], "evaluate_images");
    report.rows.push_back({frame_ids[i], psnr(predictions[i], targets[i]), ssim(predictions[i], targets[i]),
                           perceptual_distance(predictions[i], targets[i])});
  }
  report.aggregate();
  return report;
}

EvalReport evaluate(const Model& model, const Dataset& dataset, std::span<const std::size_t> indices) {
  const RenderConfig cfg = model.inference_render();
  std::vector<Tensor> preds, targets;
  std::vector<int64_t> ids;
  for (std::size_t i : indices) {
    const FrameSample& f = dataset.frames.at(i);
    if (f.image.dim(0) != cfg.output_height || f.image.dim(1) != cfg.output_width) {
      throw ConfigError("evaluate: model renders " + std::to_string(cfg.output_width) + "x" +
                        std::to_string(cfg.output_height) + " but frame " + std::to_string(f.frame_id) + " is " +
                        std::to_string(f.image.dim(1)) + "x" + std::to_string(f.image.dim(0)));
    }
    preds.push_back(model.drive(f.signal(model.modality), f.pose).rgb);
    targets.push_back(f.image);
    ids.push_back(f.frame_id);
  }
  EvalReport report = evaluate_images(preds, targets, ids);
  report.gram_offdiag_max = gram_offdiag_max(model.basis);
  report.gram_diag_deviation = gram_diag_deviation(model.basis);
  return report;
}

EvalReport evaluate_mean_baseline(const Dataset& dataset, const DatasetSplit& split) {
  const Tensor mean = mean_image(dataset, split.train);
  std::vector<Tensor> preds, targets;
  std::vector<int64_t> ids;
  for (std::size_t i : split.test) {
    preds.push_back(mean);
    targets.push_back(dataset.frames.at(i).image);
    ids.push_back(dataset.frames.at(i).frame_id);
  }
  return evaluate_images(preds, targets, ids);
}

namespace {

// Bilinear lookup at continuous pixel coordinates (column, row); false outside
// the span of pixel centers.
bool sample_bilinear(const Tensor& img, const Eigen::Vector2d& px, double* out, std::size_t channels) {
  const double h = static_cast<double>(img.dim(0)), w = static_cast<double>(img.dim(1));
  if (px.x() < 0.0 || px.y() < 0.0 || px.x() > w - 1.0 || px.y() > h - 1.0) return false;
  const auto x0 = static_cast<std::size_t>(std::floor(px.x()));
  const auto y0 = static_cast<std::size_t>(std::floor(px.y()));
  const std::size_t x1 = std::min(x0 + 1, img.dim(1) - 1), y1 = std::min(y0 + 1, img.dim(0) - 1);
  const double fx = px.x() - static_cast<double>(x0), fy = px.y() - static_cast<double>(y0);
  const std::size_t iw = img.dim(1);
  for (std::size_t c = 0; c < channels; ++c) {
    auto at = [&](std::size_t y, std::size_t x) { return img[(y * iw + x) * channels + c]; };
    out[c] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
  }
  return true;
}

}  // namespace

ConsistencyResult multiview_consistency(const GeneratorParams& generator, const LatentCode& latent,
                                        const CameraPose& pose, const RenderConfig& config, double angle,
                                        double min_opacity, double depth_tolerance) {
  RenderConfig exact = config;
  exact.stratified = false;
  CameraPose pose_b = pose;
  pose_b.extrinsics = orbit_about_up(pose.extrinsics, angle);

  const RenderOutput a = render(generator, latent, pose, exact, 0);
  const RenderOutput b = render(generator, latent, pose_b, exact, 0);
  RenderConfig jitter = config;
  jitter.stratified = true;
  const RenderOutput n1 = render(generator, latent, pose, jitter, 1);
  const RenderOutput n2 = render(generator, latent, pose, jitter, 2);

  const std::size_t h = exact.output_height, w = exact.output_width;
  const RayBundle rays = generate_rays(pose, h, w, exact.near, exact.far);
  const Eigen::Vector3d center_b = pose_b.extrinsics.center();

  ConsistencyResult result;
  double err = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (a.opacity[i] <= min_opacity) continue;
    const Eigen::Vector3d point = rays.origins[i] + a.depth[i] * rays.directions[i];
    Eigen::Vector2d px;
    if (!project_point(pose_b, h, w, point, px)) continue;
    double rgb_b[3], depth_b = 0.0, opacity_b = 0.0;
    if (!sample_bilinear(b.rgb, px, rgb_b, 3)) continue;
    sample_bilinear(b.depth, px, &depth_b, 1);
    sample_bilinear(b.opacity, px, &opacity_b, 1);
    if (opacity_b <= min_opacity) continue;
    if (std::abs(depth_b - (point - center_b).norm()) > depth_tolerance) continue;
    for (std::size_t c = 0; c < 3; ++c) {
      err += std::abs(a.rgb[i * 3 + c] - rgb_b[c]);
      noise += std::abs(n1.rgb[i * 3 + c] - n2.rgb[i * 3 + c]);
    }
    ++result.valid_pixels;
  }
  if (result.valid_pixels == 0) throw ValidationError("multiview_consistency: no pixel passed the mask");
  const double n = 3.0 * static_cast<double>(result.valid_pixels);
  result.reprojection_error = err / n;
  result.noise_floor = noise / n;
  return result;
}

}  // namespace avatar
