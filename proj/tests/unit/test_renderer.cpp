#include <doctest.h>

#include <cmath>

#include "avatar/errors.hpp"
#include "avatar/renderer.hpp"
#include "support.hpp"

using namespace avatar;
using testsupport::numeric_gradient;
using testsupport::random_tensor;
using testsupport::relative_error;

namespace {

RenderConfig ray_config(std::size_t samples, double near, double far) {
  RenderConfig c;
  c.n_samples = samples;
  c.near = near;
  c.far = far;
  c.raw_height = c.raw_width = c.output_height = c.output_width = 1;
  return c;
}

RayBundle single_ray(double near, double far) {
  CameraPose p;
  return generate_rays(p, 1, 1, near, far);
}

// Homogeneous medium of density sigma filling [0, t_f] along one ray, color c.
double homogeneous_error(std::size_t samples, double sigma, double tf, double c) {
  const RenderConfig cfg = ray_config(samples, 0.0, tf);
  const Tensor depths = sample_along_rays(single_ray(0.0, tf), cfg, 0);
  const CompositeResult r =
      composite(Tensor({1, samples}, sigma), Tensor({1, samples, 3}, c), depths, cfg);
  const double exact = (1.0 - std::exp(-sigma * tf)) * c;
  return std::abs(r.rgb[0] - exact) / exact;
}

}  // namespace

TEST_CASE("sample_along_rays: bin centers") {
  const RenderConfig cfg = ray_config(2, 0.0, 1.0);
  const Tensor d = sample_along_rays(single_ray(0.0, 1.0), cfg, 0);
  CHECK(d.storage() == std::vector<double>{0.25, 0.75});
}

TEST_CASE("sample_along_rays: stratified samples are seeded and stay in their bins") {
  RenderConfig cfg = ray_config(16, 1.0, 3.0);
  cfg.stratified = true;
  CameraPose p;
  const RayBundle rays = generate_rays(p, 4, 4, 1.0, 3.0);
  const Tensor a = sample_along_rays(rays, cfg, 9);
  const Tensor b = sample_along_rays(rays, cfg, 9);
  const Tensor c = sample_along_rays(rays, cfg, 10);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  const double bin = 2.0 / 16.0;
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t i = 0; i < 16; ++i) {
      const double v = a.at({r, i});
      CHECK(v >= 1.0 + bin * i);
      CHECK(v <= 1.0 + bin * (i + 1));
      if (i > 0) CHECK(v > a.at({r, i - 1}));
    }
  }
}

TEST_CASE("composite: empty medium") {
  const RenderConfig cfg = ray_config(8, 0.0, 1.0);
  const Tensor depths = sample_along_rays(single_ray(0.0, 1.0), cfg, 0);
  const CompositeResult r = composite(Tensor({1, 8}, 0.0), Tensor({1, 8, 3}, 0.7), depths, cfg);
  CHECK(r.rgb.storage() == std::vector<double>{0.0, 0.0, 0.0});
  CHECK(r.opacity[0] == 0.0);
  CHECK(r.residual[0] == 1.0);
}

TEST_CASE("composite: white background fills the residual transmittance") {
  RenderConfig cfg = ray_config(8, 0.0, 1.0);
  cfg.background = Background::white;
  const Tensor depths = sample_along_rays(single_ray(0.0, 1.0), cfg, 0);
  const CompositeResult r = composite(Tensor({1, 8}, 0.5), Tensor({1, 8, 3}, 0.0), depths, cfg);
  // Bin centers start half a bin past near, so the medium covers 15/16 of the ray.
  CHECK(r.rgb[0] == doctest::Approx(std::exp(-0.5 * 15.0 / 16.0)).epsilon(1e-12));
}

TEST_CASE("composite: homogeneous medium matches the closed form within 1% at 256 samples") {
  const double sigma = 3.0, tf = 1.3, c = 0.8;
  CHECK(homogeneous_error(256, sigma, tf, c) < 0.01);
}

TEST_CASE("composite: error decreases monotonically as samples double") {
  // With the last interval ending at far, samples at bin centers miss the first half-bin.
  double previous = 1e9;
  for (std::size_t s = 4; s <= 512; s *= 2) {
    const double e = homogeneous_error(s, 3.0, 1.3, 0.8);
    CHECK(e < previous);
    previous = e;
  }
}

TEST_CASE("composite: one opaque sample saturates at its depth") {
  const RenderConfig cfg = ray_config(4, 0.0, 1.0);
  const Tensor depths({1, 4}, {0.1, 0.3, 0.5, 0.7});
  Tensor sigmas({1, 4}, 0.0);
  sigmas[1] = 20.0 / 0.2;  // sigma * delta = 20
  const CompositeResult r = composite(sigmas, Tensor({1, 4, 3}, 1.0), depths, cfg);
  CHECK(r.opacity[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(std::abs(r.depth[0] - 0.3) < 1e-6);
}

TEST_CASE("composite: weights are nonnegative and sum with the residual to one") {
  const RenderConfig cfg = ray_config(12, 0.5, 2.0);
  CameraPose p;
  const RayBundle rays = generate_rays(p, 3, 3, 0.5, 2.0);
  RenderConfig c9 = cfg;
  c9.raw_height = c9.raw_width = c9.output_height = c9.output_width = 3;
  const Tensor depths = sample_along_rays(rays, c9, 0);
  const CompositeResult r = composite(random_tensor({9, 12}, 3, 0.0, 5.0), random_tensor({9, 12, 3}, 4, 0.0, 1.0),
                                      depths, c9);
  for (std::size_t n = 0; n < 9; ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(r.weights.at({n, i}) >= 0.0);
      s += r.weights.at({n, i});
    }
    CHECK(std::abs(s - r.opacity[n]) < 1e-12);
    CHECK(std::abs(s + r.residual[n] - 1.0) < 1e-6);
    CHECK(r.depth[n] >= 0.5);
    CHECK(r.depth[n] <= 2.0);
  }
}

TEST_CASE("composite: splitting a homogeneous segment preserves the result") {
  // Piecewise-constant medium sampled on a grid vs the same grid with every bin halved.
  RenderConfig coarse = ray_config(8, 0.0, 2.0);
  RenderConfig fine = ray_config(16, 0.0, 2.0);
  Tensor dc({1, 8}), df({1, 16});
  for (std::size_t i = 0; i < 8; ++i) dc[i] = 0.25 * static_cast<double>(i);
  for (std::size_t i = 0; i < 16; ++i) df[i] = 0.125 * static_cast<double>(i);
  Tensor sc({1, 8}), sf({1, 16});
  Tensor cc({1, 8, 3}), cf({1, 16, 3});
  for (std::size_t i = 0; i < 8; ++i) {
    sc[i] = 0.3 * static_cast<double>(i);
    for (std::size_t ch = 0; ch < 3; ++ch) cc[i * 3 + ch] = 0.1 * static_cast<double>((i + ch) % 9);
  }
  for (std::size_t i = 0; i < 16; ++i) {
    sf[i] = sc[i / 2];
    for (std::size_t ch = 0; ch < 3; ++ch) cf[i * 3 + ch] = cc[(i / 2) * 3 + ch];
  }
  const CompositeResult a = composite(sc, cc, dc, coarse);
  const CompositeResult b = composite(sf, cf, df, fine);
  for (std::size_t ch = 0; ch < 3; ++ch) CHECK(std::abs(a.rgb[ch] - b.rgb[ch]) < 1e-6);
  CHECK(std::abs(a.opacity[0] - b.opacity[0]) < 1e-6);
}

TEST_CASE("composite: validation errors") {
  const RenderConfig cfg = ray_config(3, 0.0, 1.0);
  CHECK_THROWS_AS(composite(Tensor({1, 3}, 1.0), Tensor({1, 3, 3}, 0.5), Tensor({1, 3}, {0.1, 0.1, 0.5}), cfg),
                  ValidationError);
  CHECK_THROWS_AS(composite(Tensor({1, 3}, -1.0), Tensor({1, 3, 3}, 0.5), Tensor({1, 3}, {0.1, 0.2, 0.5}), cfg),
                  ValidationError);
}

TEST_CASE("composite_backward matches finite differences") {
  RenderConfig cfg = ray_config(6, 1.0, 2.5);
  cfg.background = Background::white;
  cfg.raw_height = cfg.output_height = 2;
  cfg.raw_width = cfg.output_width = 2;
  CameraPose p;
  const Tensor depths = sample_along_rays(generate_rays(p, 2, 2, 1.0, 2.5), cfg, 0);
  Tensor sig = random_tensor({4, 6}, 1, 0.0, 3.0);
  Tensor col = random_tensor({4, 6, 3}, 2, 0.0, 1.0);
  const Tensor g = random_tensor({4, 3}, 3);
  auto loss = [&] {
    const CompositeResult r = composite(sig, col, depths, cfg);
    double s = 0.0;
    for (std::size_t i = 0; i < 12; ++i) s += g[i] * r.rgb[i];
    return s;
  };
  const CompositeResult r = composite(sig, col, depths, cfg);
  Tensor gs, gc;
  composite_backward(sig, col, depths, cfg, r, g, gs, gc);
  CHECK(relative_error(gs.storage(), numeric_gradient(sig.data(), sig.size(), loss)) < 1e-4);
  CHECK(relative_error(gc.storage(), numeric_gradient(col.data(), col.size(), loss)) < 1e-4);
}

namespace {

struct Scene {
  GeneratorParams params;
  LatentCode w;
  CameraPose pose;
  RenderConfig cfg;
};

Scene small_scene(bool upsampler, bool stratified, bool pose_cond = false, bool view = false) {
  GeneratorConfig g;
  g.channels = 4;
  g.resolution = 8;
  g.latent_dim = 16;
  g.decoder_hidden = 8;
  g.upsampler = upsampler;
  g.pose_conditioning = pose_cond;
  g.view_dependent = view;
  Scene s;
  s.params = GeneratorParams::initialize(g, 17);
  if (upsampler) s.params.upsampler_weight = random_tensor({3, 3, 3, 3}, 5, -0.02, 0.02);
  const Tensor w = random_tensor({16}, 18);
  s.w.values = Eigen::Map<const Eigen::RowVectorXd>(w.data(), 16);
  s.pose.intrinsics = Intrinsics{1.6, 1.6, 0.5, 0.5, 0.0};
  s.pose.extrinsics = look_at({0.3, 0.2, 2.5}, {0, 0, 0}, {0, 1, 0});
  s.cfg.n_samples = 10;
  s.cfg.near = 1.5;
  s.cfg.far = 3.5;
  s.cfg.stratified = stratified;
  s.cfg.raw_height = s.cfg.raw_width = upsampler ? 4 : 8;
  s.cfg.output_height = s.cfg.output_width = 8;
  return s;
}

}  // namespace

TEST_CASE("render: shapes and determinism") {
  Scene s = small_scene(true, true);
  const RenderOutput a = render(s.params, s.w, s.pose, s.cfg, 4);
  const RenderOutput b = render(s.params, s.w, s.pose, s.cfg, 4);
  CHECK(a.rgb.shape() == Shape{8, 8, 3});
  CHECK(a.depth.shape() == Shape{8, 8});
  CHECK(a.opacity.shape() == Shape{8, 8});
  CHECK(a.rgb == b.rgb);
  CHECK(a.depth == b.depth);
  for (double v : a.rgb.storage()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("render: depth stays in [near, far] where opacity is positive") {
  Scene s = small_scene(true, false);
  const RenderOutput out = render(s.params, s.w, s.pose, s.cfg, 0);
  for (std::size_t i = 0; i < out.depth.size(); ++i) {
    if (out.opacity[i] > 1e-3) {
      CHECK(out.depth[i] >= s.cfg.near - 1e-9);
      CHECK(out.depth[i] <= s.cfg.far + 1e-9);
    }
  }
}

TEST_CASE("render_backward: gradient of mean(rgb) with respect to w on an 8x8 render") {
  for (int variant = 0; variant < 4; ++variant) {
    Scene s = small_scene(variant == 1, variant == 2, variant == 3, variant == 3);
    auto loss = [&] { return render(s.params, s.w, s.pose, s.cfg, 3).rgb.sum() / 192.0; };
    RenderTrace trace;
    render(s.params, s.w, s.pose, s.cfg, 3, &trace);
    Eigen::RowVectorXd gw = Eigen::RowVectorXd::Zero(16);
    auto grads = GeneratorParams::zeros(s.params.config);
    render_backward(s.params, s.cfg, trace, Tensor({8, 8, 3}, 1.0 / 192.0), &gw, &grads);
    CAPTURE(variant);
    CHECK(relative_error(std::vector<double>(gw.data(), gw.data() + 16), numeric_gradient(s.w.values.data(), 16, loss)) <
          1e-4);
    auto pr = s.params.parameters();
    auto gr = grads.parameters();
    for (std::size_t i = 0; i < pr.size(); ++i) {
      if (pr[i].tensor->empty()) continue;
      const auto idx = testsupport::spread_indices(pr[i].tensor->size(), 30, i + 100);
      std::vector<double> num, ana;
      testsupport::numeric_gradient_subset(pr[i].tensor->data(), idx, loss, num);
      for (std::size_t j : idx) ana.push_back((*gr[i].tensor)[j]);
      CAPTURE(pr[i].name);
      CHECK(relative_error(ana, num, 1e-9) < 1e-4);
    }
  }
}
