#include "avatar/model.hpp"

#include "avatar/errors.hpp"

namespace avatar {

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> refs = encoder.parameters();
  refs.push_back({"basis", ParamGroup::basis, &basis.tensor()});
  for (auto& r : generator.parameters()) refs.push_back(r);
  return refs;
}

LatentCode Model::latent(const DrivingSignal& signal) const {
  if (modality_of(signal) != modality) {
    throw ConfigError(std::string("model is driven by ") + to_string(modality) + ", got a " +
                      to_string(modality_of(signal)) + " signal");
  }
  return compose_latent(encode(encoder, signal), basis);
}

RenderConfig Model::inference_render() const {
  RenderConfig c = render;
  c.stratified = false;
  return c;
}

RenderOutput Model::drive(const DrivingSignal& signal, const CameraPose& pose) const {
  return avatar::render(generator, latent(signal), pose, inference_render(), 0);
}

}  // namespace avatar
