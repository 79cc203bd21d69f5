#pragma once

// Encoders mapping driving signals to subspace coefficients:
//   image      {H, W, 3}  -> 4 stride-2 conv blocks -> average to a grid x grid map -> linear -> k
//   expression {76}       -> 128 -> 128 -> k perceptron
//   audio      {16, 29}   -> 2 temporal convs -> global average -> linear -> k
// All hidden layers use SiLU.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "avatar/generator.hpp"
#include "avatar/renderer.hpp"
#include "avatar/subspace.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

inline constexpr std::size_t kExpressionDim = 76;
inline constexpr std::size_t kAudioWindow = 16;
inline constexpr std::size_t kAudioFeatures = 29;

enum class Modality { image, expression, audio };

/// "image", "expr", "audio".
const char* to_string(Modality modality);
Modality parse_modality(const std::string& name);

struct ImageSignal {
  Tensor image;  // {H, W, 3} in [0, 1]
};
struct ExpressionSignal {
  Tensor coefficients;  // {76}
};
struct AudioSignal {
  Tensor window;  // {16, 29}: 16 consecutive clips x 29 features
};

using DrivingSignal = std::variant<ImageSignal, ExpressionSignal, AudioSignal>;

Modality modality_of(const DrivingSignal& signal);

struct EncoderConfig {
  std::size_t k = 8;
  bool image = false;
  bool expression = false;
  bool audio = false;
  std::array<std::size_t, 4> image_channels{16, 32, 64, 64};
  std::size_t image_grid = 4;  // the last feature map is pooled to grid x grid cells before the head
  std::size_t expression_hidden = 128;
  std::size_t audio_channels = 32;

  void validate() const;
};

struct ImageBranch {
  std::array<Tensor, 4> conv_weight;  // {c_out, c_in, 3, 3}
  std::array<Tensor, 4> conv_bias;
  Tensor head_weight;  // {k, c_last * grid * grid}
  Tensor head_bias;    // {k}
};

struct ExpressionBranch {
  Tensor w1, b1;  // 76 -> hidden
  Tensor w2, b2;  // hidden -> hidden
  Tensor w3, b3;  // hidden -> k
};

struct AudioBranch {
  Tensor conv1_weight, conv1_bias;  // {ch, 29, 3}
  Tensor conv2_weight, conv2_bias;  // {ch, ch, 3}
  Tensor head_weight, head_bias;    // {k, ch}
};

struct EncoderParams {
  EncoderConfig config;
  std::optional<ImageBranch> image;
  std::optional<ExpressionBranch> expression;
  std::optional<AudioBranch> audio;

  static EncoderParams zeros(const EncoderConfig& config);
  static EncoderParams initialize(const EncoderConfig& config, uint64_t seed);

  std::vector<ParamRef> parameters();
};

/// Activations cached by encode() for encode_backward().
struct EncodeTrace {
  Modality modality = Modality::image;
  std::vector<Tensor> inputs;  // input to each layer, in order
  std::vector<Tensor> pre;     // pre-activation of each hidden layer
};

Coefficient encode(const EncoderParams& params, const DrivingSignal& signal, EncodeTrace* trace = nullptr);

/// Accumulates parameter gradients into `grad_params` and the signal gradient
/// (same shape as the signal tensor) into `grad_input`, when non-null.
void encode_backward(const EncoderParams& params, const EncodeTrace& trace, const Eigen::RowVectorXd& grad_alpha,
                     EncoderParams* grad_params, Tensor* grad_input);

/// render(generator, encode(signal) * B, pose). Rendering uses seed 0.
RenderOutput reenact(const EncoderParams& params, const PersonalBasis& basis, const GeneratorParams& generator,
                     const DrivingSignal& signal, const CameraPose& pose, const RenderConfig& config);

}  // namespace avatar
