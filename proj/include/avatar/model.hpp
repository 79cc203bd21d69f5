#pragma once

// A trained avatar: encoder for one driving modality, personal basis and
// generator, plus the render settings it was trained with.

#include <vector>

#include "avatar/encoders.hpp"
#include "avatar/generator.hpp"
#include "avatar/renderer.hpp"
#include "avatar/subspace.hpp"

namespace avatar {

struct Model {
  Modality modality = Modality::image;
  EncoderParams encoder;
  PersonalBasis basis;
  GeneratorParams generator;
  RenderConfig render;

  /// Encoder tensors, then "basis", then generator tensors.
  std::vector<ParamRef> parameters();

  LatentCode latent(const DrivingSignal& signal) const;

  /// Render settings for inference: the training settings without sample jitter.
  RenderConfig inference_render() const;

  /// The reconstruction / reenactment path: encode, compose, render.
  RenderOutput drive(const DrivingSignal& signal, const CameraPose& pose) const;
};

}  // namespace avatar
