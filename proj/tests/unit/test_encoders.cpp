#include <doctest.h>

#include <cmath>

#include "avatar/encoders.hpp"
#include "avatar/errors.hpp"
#include "support.hpp"

using namespace avatar;
using testsupport::numeric_gradient;
using testsupport::random_tensor;
using testsupport::relative_error;

namespace {

EncoderConfig all_branches(std::size_t k) {
  EncoderConfig c;
  c.k = k;
  c.image = c.expression = c.audio = true;
  c.image_channels = {4, 6, 8, 8};
  c.expression_hidden = 16;
  c.audio_channels = 6;
  return c;
}

DrivingSignal signal_for(Modality m, uint64_t seed) {
  switch (m) {
    case Modality::image: return ImageSignal{random_tensor({12, 10, 3}, seed, 0.0, 1.0)};
    case Modality::expression: return ExpressionSignal{random_tensor({kExpressionDim}, seed)};
    case Modality::audio: return AudioSignal{random_tensor({kAudioWindow, kAudioFeatures}, seed)};
  }
  throw std::logic_error("unreachable");
}

Tensor& signal_tensor(DrivingSignal& s) {
  if (auto* i = std::get_if<ImageSignal>(&s)) return i->image;
  if (auto* e = std::get_if<ExpressionSignal>(&s)) return e->coefficients;
  return std::get<AudioSignal>(s).window;
}

}  // namespace

TEST_CASE("modality names round trip") {
  for (Modality m : {Modality::image, Modality::expression, Modality::audio}) CHECK(parse_modality(to_string(m)) == m);
  CHECK(parse_modality("rgb") == Modality::image);
  CHECK(parse_modality("3dmm") == Modality::expression);
  CHECK_THROWS_AS(parse_modality("video"), ConfigError);
}

TEST_CASE("encode: zero expression with zero weights gives the head bias") {
  EncoderConfig c;
  c.k = 5;
  c.expression = true;
  EncoderParams p = EncoderParams::zeros(c);
  p.expression->b3 = Tensor({5}, {0.1, -0.2, 0.3, -0.4, 0.5});
  const Coefficient a = encode(p, ExpressionSignal{Tensor({kExpressionDim}, 0.0)});
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(a.alpha[i] == p.expression->b3[static_cast<std::size_t>(i)]);
}

TEST_CASE("encode: output length k, deterministic, every branch") {
  const EncoderParams p = EncoderParams::initialize(all_branches(7), 3);
  for (Modality m : {Modality::image, Modality::expression, Modality::audio}) {
    const DrivingSignal s = signal_for(m, 11);
    const Coefficient a = encode(p, s);
    const Coefficient b = encode(p, s);
    CHECK(a.alpha.size() == 7);
    CHECK(a.alpha == b.alpha);
    CHECK(a.alpha.allFinite());
  }
}

TEST_CASE("encode: missing branch and bad shapes") {
  EncoderConfig c;
  c.k = 3;
  c.expression = true;
  const EncoderParams p = EncoderParams::initialize(c, 1);
  CHECK_THROWS_AS(encode(p, signal_for(Modality::audio, 1)), ConfigError);
  CHECK_THROWS_AS(encode(p, signal_for(Modality::image, 1)), ConfigError);
  CHECK_THROWS_AS(encode(p, ExpressionSignal{Tensor({75}, 0.0)}), ShapeError);
  EncoderConfig ca;
  ca.k = 3;
  ca.audio = true;
  CHECK_THROWS_AS(encode(EncoderParams::initialize(ca, 1), AudioSignal{Tensor({16, 28}, 0.0)}), ShapeError);
}

TEST_CASE("encode_backward: ||alpha||^2 gradients in inputs and weights") {
  EncoderParams p = EncoderParams::initialize(all_branches(4), 5);
  for (Modality m : {Modality::image, Modality::expression, Modality::audio}) {
    DrivingSignal s = signal_for(m, 21);
    Tensor& input = signal_tensor(s);
    auto loss = [&] { return encode(p, s).alpha.squaredNorm(); };
    EncodeTrace trace;
    const Coefficient a = encode(p, s, &trace);
    EncoderParams grads = EncoderParams::zeros(p.config);
    Tensor gin = Tensor::zeros_like(input);
    encode_backward(p, trace, 2.0 * a.alpha, &grads, &gin);
    CAPTURE(to_string(m));
    CHECK(relative_error(gin.storage(), numeric_gradient(input.data(), input.size(), loss)) < 1e-4);

    auto pr = p.parameters();
    auto gr = grads.parameters();
    const std::string prefix = std::string("encoder.") + to_string(m) + ".";
    for (std::size_t i = 0; i < pr.size(); ++i) {
      if (pr[i].name.rfind(prefix, 0) != 0) {
        // Other branches receive no gradient.
        CHECK(gr[i].tensor->sum() == 0.0);
        continue;
      }
      const auto idx = testsupport::spread_indices(pr[i].tensor->size(), 25, i);
      std::vector<double> num, ana;
      testsupport::numeric_gradient_subset(pr[i].tensor->data(), idx, loss, num);
      for (std::size_t j : idx) ana.push_back((*gr[i].tensor)[j]);
      CAPTURE(pr[i].name);
      CHECK(relative_error(ana, num, 1e-10) < 1e-4);
    }
  }
}

TEST_CASE("branches are independent: zeroing one never changes another") {
  EncoderParams p = EncoderParams::initialize(all_branches(6), 8);
  const DrivingSignal img = signal_for(Modality::image, 1);
  const DrivingSignal expr = signal_for(Modality::expression, 2);
  const DrivingSignal aud = signal_for(Modality::audio, 3);
  const auto a_img = encode(p, img).alpha;
  const auto a_aud = encode(p, aud).alpha;
  for (auto& r : p.parameters()) {
    if (r.name.rfind("encoder.expr.", 0) == 0) r.tensor->fill(0.0);
  }
  CHECK(encode(p, img).alpha == a_img);
  CHECK(encode(p, aud).alpha == a_aud);
  CHECK(encode(p, expr).alpha.isZero(0.0));
}

TEST_CASE("encode then compose lands in the span of B") {
  const EncoderParams p = EncoderParams::initialize(all_branches(5), 4);
  const PersonalBasis b = PersonalBasis::random_orthonormal(5, 12, 2);
  const LatentCode w = compose_latent(encode(p, signal_for(Modality::expression, 3)), b);
  const LatentCode again = compose_latent(project_to_subspace(w, b), b);
  CHECK((w.values - again.values).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("reenact equals render of the composed latent") {
  const EncoderParams p = EncoderParams::initialize(all_branches(3), 4);
  GeneratorConfig g;
  g.channels = 4;
  g.resolution = 8;
  g.latent_dim = 8;
  g.decoder_hidden = 8;
  const GeneratorParams gen = GeneratorParams::initialize(g, 1);
  const PersonalBasis b = PersonalBasis::random_orthonormal(3, 8, 2);
  CameraPose pose;
  pose.intrinsics = Intrinsics{1.5, 1.5, 0.5, 0.5, 0.0};
  pose.extrinsics = look_at({0, 0, 2.5}, {0, 0, 0}, {0, 1, 0});
  RenderConfig cfg;
  cfg.n_samples = 8;
  cfg.raw_height = cfg.raw_width = cfg.output_height = cfg.output_width = 6;
  const DrivingSignal s = signal_for(Modality::image, 5);
  const RenderOutput a = reenact(p, b, gen, s, pose, cfg);
  const RenderOutput r = render(gen, compose_latent(encode(p, s), b), pose, cfg, 0);
  CHECK(a.rgb.shape() == Shape{6, 6, 3});
  CHECK(a.rgb == r.rgb);
}
