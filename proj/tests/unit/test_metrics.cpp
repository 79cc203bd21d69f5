#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "avatar/errors.hpp"
#include "avatar/metrics.hpp"
#include "avatar/training.hpp"
#include "support.hpp"

using namespace avatar;
namespace fs = std::filesystem;

namespace {

// SSIM by explicit 11x11 windows, written without the separable filter.
double naive_ssim(const Tensor& a, const Tensor& b) {
  const std::size_t h = a.dim(0), w = a.dim(1), c = a.dim(2);
  const long r = static_cast<long>(kSsimWindow / 2);
  std::vector<double> g1(kSsimWindow);
  double norm = 0.0;
  for (long i = -r; i <= r; ++i) norm += std::exp(-static_cast<double>(i * i) / (2.0 * kSsimSigma * kSsimSigma));
  for (long i = -r; i <= r; ++i) {
    g1[static_cast<std::size_t>(i + r)] = std::exp(-static_cast<double>(i * i) / (2.0 * kSsimSigma * kSsimSigma)) / norm;
  }
  auto reflect = [](long i, long n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (long y = 0; y < static_cast<long>(h); ++y) {
      for (long x = 0; x < static_cast<long>(w); ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (long dy = -r; dy <= r; ++dy) {
          for (long dx = -r; dx <= r; ++dx) {
            const double wt = g1[static_cast<std::size_t>(dy + r)] * g1[static_cast<std::size_t>(dx + r)];
            const auto yy = static_cast<std::size_t>(reflect(y + dy, static_cast<long>(h)));
            const auto xx = static_cast<std::size_t>(reflect(x + dx, static_cast<long>(w)));
            const double va = a[(yy * w + xx) * c + ch];
            const double vb = b[(yy * w + xx) * c + ch];
            mx += wt * va;
            my += wt * vb;
            sxx += wt * va * va;
            syy += wt * vb * vb;
            sxy += wt * va * vb;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        sum += ((2 * mx * my + kSsimC1) * (2 * cov + kSsimC2)) / ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
      }
    }
    total += sum / static_cast<double>(h * w);
  }
  return total / static_cast<double>(c);
}

}  // namespace

TEST_CASE("psnr: closed forms, cap, symmetry") {
  const Tensor a = testsupport::random_tensor({8, 8, 3}, 1, 0.2, 0.8);
  Tensor b = a;
  for (double& v : b.storage()) v += 0.1;
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, a) == kPsnrCap);
  const Tensor c = testsupport::random_tensor({8, 8, 3}, 2, 0.0, 1.0);
  CHECK(psnr(a, c) == psnr(c, a));
  CHECK_THROWS_AS(psnr(a, Tensor({8, 7, 3})), ShapeError);
}

TEST_CASE("psnr strictly decreases with uniform noise amplitude") {
  const Tensor a({16, 16, 3}, 0.5);
  const Tensor noise = testsupport::random_tensor({16, 16, 3}, 9, -1.0, 1.0);
  double previous = kPsnrCap + 1.0;
  for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2, 0.4}) {
    Tensor b = a;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += amp * noise[i];
    const double p = psnr(a, b);
    CHECK(p < previous);
    previous = p;
  }
}

TEST_CASE("ssim: identity, symmetry, inversion, kernel") {
  const auto k = ssim_kernel();
  REQUIRE(k.size() == 11);
  double s = 0.0;
  for (double v : k) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(k[5] > k[4]);
  CHECK(k[0] == doctest::Approx(k[10]).epsilon(1e-15));

  const Tensor a = testsupport::random_tensor({20, 24, 3}, 3, 0.0, 1.0);
  CHECK(std::abs(ssim(a, a) - 1.0) < 1e-9);
  const Tensor b = testsupport::random_tensor({20, 24, 3}, 4, 0.0, 1.0);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));
  Tensor inv = a;
  for (double& v : inv.storage()) v = 1.0 - v;
  CHECK(ssim(a, inv) < 0.0);
}

TEST_CASE("ssim matches the naive sliding-window oracle") {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const Tensor a = testsupport::random_tensor({17, 23, 3}, 10 + seed, 0.0, 1.0);
    Tensor b = a;
    const Tensor n = testsupport::random_tensor({17, 23, 3}, 20 + seed, -0.2, 0.2);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += n[i];
    CHECK(std::abs(ssim(a, b) - naive_ssim(a, b)) < 1e-6);
  }
}

TEST_CASE("reflect_index does not repeat the edge") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-3, 5) == 3);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);
  CHECK(reflect_index(2, 5) == 2);
  CHECK(reflect_index(-4, 1) == 0);
}

TEST_CASE("evaluate_images: rows, means, outputs") {
  std::vector<Tensor> preds, targets;
  std::vector<int64_t> ids{4, 9, 11};
  for (int i = 0; i < 3; ++i) {
    targets.push_back(testsupport::random_tensor({12, 12, 3}, 30 + i, 0.0, 1.0));
    Tensor p = targets.back();
    for (double& v : p.storage()) v = std::clamp(v + 0.05 * (i + 1), 0.0, 1.0);
    preds.push_back(p);
  }
  const EvalReport r = evaluate_images(preds, targets, ids);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[1].frame_id == 9);
  CHECK(r.psnr == doctest::Approx((r.rows[0].psnr + r.rows[1].psnr + r.rows[2].psnr) / 3.0));
  CHECK(std::isnan(r.gram_offdiag_max));
  CHECK(r.summary_json()["gram_offdiag_max"].is_null());

  const fs::path dir = fs::temp_directory_path() / "avatar_test_metrics";
  fs::create_directories(dir);
  r.write_csv(dir / "m.csv");
  r.write_jsonl(dir / "m.jsonl");
  std::ifstream csv(dir / "m.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "frame_id,psnr,ssim,perceptual");
  CHECK(lines[4].rfind("mean,", 0) == 0);
  std::ifstream jl(dir / "m.jsonl");
  std::size_t count = 0;
  while (std::getline(jl, line)) {
    CHECK(nlohmann::json::parse(line).contains("ssim"));
    ++count;
  }
  CHECK(count == 3);
  fs::remove_all(dir);
}

TEST_CASE("evaluate: row count equals the test split, pure, baseline scores") {
  SyntheticSceneSpec spec = default_scene_spec();
  spec.height = spec.width = 16;
  spec.gt_samples = 16;
  const SyntheticDataset synth = synth_generate(spec, 20);
  TrainConfig cfg;
  cfg.generator.channels = 4;
  cfg.generator.resolution = 8;
  cfg.generator.latent_dim = 8;
  cfg.k = 4;
  cfg.render.n_samples = 6;
  cfg.render.raw_height = cfg.render.raw_width = 8;
  cfg.render.output_height = cfg.render.output_width = 16;
  const Model model = initialize_model(cfg, Modality::expression);
  const DatasetSplit split = split_dataset(20);
  const EvalReport a = evaluate(model, synth.dataset, split.test);
  const EvalReport b = evaluate(model, synth.dataset, split.test);
  CHECK(a.rows.size() == split.test.size());
  CHECK(a.summary_json() == b.summary_json());
  CHECK(a.gram_offdiag_max < 1e-12);

  cfg.render.output_height = cfg.render.output_width = 8;
  const Model small = initialize_model(cfg, Modality::expression);
  CHECK_THROWS_AS(evaluate(small, synth.dataset, split.test), ConfigError);

  const EvalReport base = evaluate_mean_baseline(synth.dataset, split);
  CHECK(base.rows.size() == split.test.size());
  CHECK(base.psnr > 10.0);
}

TEST_CASE("multiview consistency: zero angle has zero reprojection error") {
  TrainConfig cfg;
  cfg.generator.channels = 4;
  cfg.generator.resolution = 8;
  cfg.generator.latent_dim = 8;
  cfg.generator.synth_bias_std = 2.0;  // dense enough to pass the opacity mask
  cfg.render.n_samples = 24;
  cfg.render.raw_height = cfg.render.raw_width = cfg.render.output_height = cfg.render.output_width = 16;
  GeneratorParams gen = GeneratorParams::initialize(cfg.generator, 3);
  for (double& v : gen.decoder_b2.storage()) v = 0.0;
  gen.decoder_b2[0] = 20.0;  // saturated density
  CameraPose pose;
  pose.intrinsics = Intrinsics{2.0, 2.0, 0.5, 0.5, 0.0};
  pose.extrinsics = look_at({0, 0, 2.5}, {0, 0, 0}, {0, 1, 0});
  LatentCode w;
  w.values = Eigen::RowVectorXd::Zero(8);
  const ConsistencyResult r = multiview_consistency(gen, w, pose, cfg.render, 0.0);
  CHECK(r.valid_pixels > 0);
  CHECK(r.reprojection_error < 1e-9);
}
