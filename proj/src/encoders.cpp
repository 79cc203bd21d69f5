#include "avatar/encoders.hpp"

#include <cmath>
#include <random>

#include "avatar/errors.hpp"
#include "avatar/nn.hpp"

namespace avatar {

namespace {

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

Tensor to_channel_first(const Tensor& hwc) {
  const std::size_t h = hwc.dim(0);
  const std::size_t w = hwc.dim(1);
  const std::size_t c = hwc.dim(2);
  Tensor out({c, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) out[(k * h + y) * w + x] = hwc[(y * w + x) * c + k];
    }
  }
  return out;
}

Tensor to_channel_last(const Tensor& chw) {
  const std::size_t c = chw.dim(0);
  const std::size_t h = chw.dim(1);
  const std::size_t w = chw.dim(2);
  Tensor out({h, w, c});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(y * w + x) * c + k] = chw[(k * h + y) * w + x];
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& m) {
  const std::size_t r = m.dim(0);
  const std::size_t c = m.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m[i * c + j];
  }
  return out;
}

Eigen::RowVectorXd to_row(const Tensor& t) {
  return Eigen::Map<const Eigen::RowVectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
}

Tensor from_row(const Eigen::RowVectorXd& v) {
  return Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

[[noreturn]] void missing_branch(Modality m) {
  throw ConfigError(std::string("encode: encoder has no ") + to_string(m) + " branch");
}

}  // namespace

const char* to_string(Modality modality) {
  switch (modality) {
    case Modality::image: return "image";
    case Modality::expression: return "expr";
    case Modality::audio: return "audio";
  }
  return "?";
}

Modality parse_modality(const std::string& name) {
  if (name == "image" || name == "rgb") return Modality::image;
  if (name == "expr" || name == "expression" || name == "3dmm") return Modality::expression;
  if (name == "audio") return Modality::audio;
  throw ConfigError("unknown modality '" + name + "' (expected image, expr or audio)");
}

Modality modality_of(const DrivingSignal& signal) {
  return std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ImageSignal>) return Modality::image;
        else if constexpr (std::is_same_v<T, ExpressionSignal>) return Modality::expression;
        else return Modality::audio;
      },
      signal);
}

void EncoderConfig::validate() const {
  if (k == 0) throw ConfigError("encoder: k must be positive");
  for (std::size_t c : image_channels) {
    if (c == 0) throw ConfigError("encoder: image channel widths must be positive");
  }
  if (image_grid == 0) throw ConfigError("encoder: image_grid must be positive");
  if (expression_hidden == 0 || audio_channels == 0) throw ConfigError("encoder: hidden widths must be positive");
}

EncoderParams EncoderParams::zeros(const EncoderConfig& config) {
  config.validate();
  EncoderParams p;
  p.config = config;
  if (config.image) {
    ImageBranch b;
    std::size_t in = 3;
    for (std::size_t i = 0; i < 4; ++i) {
      b.conv_weight[i] = Tensor({config.image_channels[i], in, 3, 3});
      b.conv_bias[i] = Tensor({config.image_channels[i]});
      in = config.image_channels[i];
    }
    b.head_weight = Tensor({config.k, in * config.image_grid * config.image_grid});
    b.head_bias = Tensor({config.k});
    p.image = std::move(b);
  }
  if (config.expression) {
    const std::size_t h = config.expression_hidden;
    p.expression = ExpressionBranch{Tensor({h, kExpressionDim}), Tensor({h}), Tensor({h, h}), Tensor({h}),
                                    Tensor({config.k, h}), Tensor({config.k})};
  }
  if (config.audio) {
    const std::size_t ch = config.audio_channels;
    p.audio = AudioBranch{Tensor({ch, kAudioFeatures, 3}), Tensor({ch}), Tensor({ch, ch, 3}), Tensor({ch}),
                          Tensor({config.k, ch}), Tensor({config.k})};
  }
  return p;
}

EncoderParams EncoderParams::initialize(const EncoderConfig& config, uint64_t seed) {
  EncoderParams p = zeros(config);
  std::mt19937_64 rng(seed);
  if (p.image) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < 4; ++i) {
      nn::init_normal(p.image->conv_weight[i], rng, std::sqrt(2.0) * fan_in_std(in * 9));
      in = config.image_channels[i];
    }
    nn::init_normal(p.image->head_weight, rng, fan_in_std(in * config.image_grid * config.image_grid));
  }
  if (p.expression) {
    nn::init_normal(p.expression->w1, rng, std::sqrt(2.0) * fan_in_std(kExpressionDim));
    nn::init_normal(p.expression->w2, rng, std::sqrt(2.0) * fan_in_std(config.expression_hidden));
    nn::init_normal(p.expression->w3, rng, fan_in_std(config.expression_hidden));
  }
  if (p.audio) {
    nn::init_normal(p.audio->conv1_weight, rng, std::sqrt(2.0) * fan_in_std(kAudioFeatures * 3));
    nn::init_normal(p.audio->conv2_weight, rng, std::sqrt(2.0) * fan_in_std(config.audio_channels * 3));
    nn::init_normal(p.audio->head_weight, rng, fan_in_std(config.audio_channels));
  }
  return p;
}

std::vector<ParamRef> EncoderParams::parameters() {
  std::vector<ParamRef> refs;
  auto add = [&refs](std::string name, Tensor& t) { refs.push_back({std::move(name), ParamGroup::encoder, &t}); };
  if (image) {
    for (std::size_t i = 0; i < 4; ++i) {
      add("encoder.image.conv" + std::to_string(i) + ".weight", image->conv_weight[i]);
      add("encoder.image.conv" + std::to_string(i) + ".bias", image->conv_bias[i]);
    }
    add("encoder.image.head.weight", image->head_weight);
    add("encoder.image.head.bias", image->head_bias);
  }
  if (expression) {
    add("encoder.expr.fc1.weight", expression->w1);
    add("encoder.expr.fc1.bias", expression->b1);
    add("encoder.expr.fc2.weight", expression->w2);
    add("encoder.expr.fc2.bias", expression->b2);
    add("encoder.expr.fc3.weight", expression->w3);
    add("encoder.expr.fc3.bias", expression->b3);
  }
  if (audio) {
    add("encoder.audio.conv1.weight", audio->conv1_weight);
    add("encoder.audio.conv1.bias", audio->conv1_bias);
    add("encoder.audio.conv2.weight", audio->conv2_weight);
    add("encoder.audio.conv2.bias", audio->conv2_bias);
    add("encoder.audio.head.weight", audio->head_weight);
    add("encoder.audio.head.bias", audio->head_bias);
  }
  return refs;
}

Coefficient encode(const EncoderParams& params, const DrivingSignal& signal, EncodeTrace* trace) {
  EncodeTrace local;
  EncodeTrace& t = trace != nullptr ? *trace : local;
  t = EncodeTrace{};
  t.modality = modality_of(signal);

  Tensor alpha;
  switch (t.modality) {
    case Modality::image: {
      if (!params.image) missing_branch(t.modality);
      const Tensor& img = std::get<ImageSignal>(signal).image;
      require_image(img, "encode image");
      const auto& b = *params.image;
      Tensor x = to_channel_first(img);
      for (std::size_t i = 0; i < 4; ++i) {
        t.inputs.push_back(x);
        t.pre.push_back(nn::conv2d_s2(x, b.conv_weight[i], b.conv_bias[i]));
        x = nn::silu(t.pre.back());
      }
      t.inputs.push_back(x);
      Tensor pooled = nn::adaptive_average(x, params.config.image_grid);
      t.inputs.push_back(pooled);
      alpha = nn::linear(pooled, b.head_weight, b.head_bias);
      break;
    }
    case Modality::expression: {
      if (!params.expression) missing_branch(t.modality);
      const Tensor& beta = std::get<ExpressionSignal>(signal).coefficients;
      require_shape(beta, {kExpressionDim}, "encode expression");
      const auto& b = *params.expression;
      t.inputs.push_back(beta);
      t.pre.push_back(nn::linear(beta, b.w1, b.b1));
      t.inputs.push_back(nn::silu(t.pre.back()));
      t.pre.push_back(nn::linear(t.inputs.back(), b.w2, b.b2));
      t.inputs.push_back(nn::silu(t.pre.back()));
      alpha = nn::linear(t.inputs.back(), b.w3, b.b3);
      break;
    }
    case Modality::audio: {
      if (!params.audio) missing_branch(t.modality);
      const Tensor& window = std::get<AudioSignal>(signal).window;
      require_shape(window, {kAudioWindow, kAudioFeatures}, "encode audio");
      const auto& b = *params.audio;
      t.inputs.push_back(transpose2d(window));
      t.pre.push_back(nn::conv1d(t.inputs.back(), b.conv1_weight, b.conv1_bias));
      t.inputs.push_back(nn::silu(t.pre.back()));
      t.pre.push_back(nn::conv1d(t.inputs.back(), b.conv2_weight, b.conv2_bias));
      t.inputs.push_back(nn::silu(t.pre.back()));
      t.inputs.push_back(nn::global_average(t.inputs.back()));
      alpha = nn::linear(t.inputs.back(), b.head_weight, b.head_bias);
      break;
    }
  }
  return Coefficient{to_row(alpha)};
}

void encode_backward(const EncoderParams& params, const EncodeTrace& t, const Eigen::RowVectorXd& grad_alpha,
                     EncoderParams* grad_params, Tensor* grad_input) {
  const Tensor g_alpha = from_row(grad_alpha);
  switch (t.modality) {
    case Modality::image: {
      if (!params.image) missing_branch(t.modality);
      const auto& b = *params.image;
      ImageBranch* gb = grad_params != nullptr && grad_params->image ? &*grad_params->image : nullptr;
      Tensor g = nn::linear_backward(t.inputs[5], b.head_weight, g_alpha, gb ? &gb->head_weight : nullptr,
                                     gb ? &gb->head_bias : nullptr);
      g = nn::adaptive_average_backward(t.inputs[4], params.config.image_grid, g);
      for (std::size_t i = 4; i-- > 0;) {
        g = nn::silu_backward(t.pre[i], g);
        g = nn::conv2d_s2_backward(t.inputs[i], b.conv_weight[i], g, gb ? &gb->conv_weight[i] : nullptr,
                                   gb ? &gb->conv_bias[i] : nullptr);
      }
      if (grad_input != nullptr) *grad_input = to_channel_last(g);
      break;
    }
    case Modality::expression: {
      if (!params.expression) missing_branch(t.modality);
      const auto& b = *params.expression;
      ExpressionBranch* gb = grad_params != nullptr && grad_params->expression ? &*grad_params->expression : nullptr;
      Tensor g = nn::linear_backward(t.inputs[2], b.w3, g_alpha, gb ? &gb->w3 : nullptr, gb ? &gb->b3 : nullptr);
      g = nn::silu_backward(t.pre[1], g);
      g = nn::linear_backward(t.inputs[1], b.w2, g, gb ? &gb->w2 : nullptr, gb ? &gb->b2 : nullptr);
      g = nn::silu_backward(t.pre[0], g);
      g = nn::linear_backward(t.inputs[0], b.w1, g, gb ? &gb->w1 : nullptr, gb ? &gb->b1 : nullptr);
      if (grad_input != nullptr) *grad_input = g;
      break;
    }
    case Modality::audio: {
      if (!params.audio) missing_branch(t.modality);
      const auto& b = *params.audio;
      AudioBranch* gb = grad_params != nullptr && grad_params->audio ? &*grad_params->audio : nullptr;
      Tensor g = nn::linear_backward(t.inputs[3], b.head_weight, g_alpha, gb ? &gb->head_weight : nullptr,
                                     gb ? &gb->head_bias : nullptr);
      g = nn::global_average_backward(t.inputs[2], g);
      g = nn::silu_backward(t.pre[1], g);
      g = nn::conv1d_backward(t.inputs[1], b.conv2_weight, g, gb ? &gb->conv2_weight : nullptr,
                              gb ? &gb->conv2_bias : nullptr);
      g = nn::silu_backward(t.pre[0], g);
      g = nn::conv1d_backward(t.inputs[0], b.conv1_weight, g, gb ? &gb->conv1_weight : nullptr,
                              gb ? &gb->conv1_bias : nullptr);
      if (grad_input != nullptr) *grad_input = transpose2d(g);
      break;
    }
  }
}

RenderOutput reenact(const EncoderParams& params, const PersonalBasis& basis, const GeneratorParams& generator,
                     const DrivingSignal& signal, const CameraPose& pose, const RenderConfig& config) {
  const Coefficient alpha = encode(params, signal);
  return render(generator, compose_latent(alpha, basis), pose, config, 0);
}

}  // namespace avatar
