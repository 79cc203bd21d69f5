#pragma once

// Two-stage training of encoder, personal basis and generator.
//
// Stage 1 (iteration < freeze_iters): only the encoder and the basis move.
// Stage 2: the generator submodules enabled by the train_* flags join.
//
// Objective per step: mean over the batch of
//   ||render - target||^2 / N + lambda_perceptual * perceptual(render, target)
// plus lambda_ortho * ||B B^T - I||_F^2 in the penalty ortho mode.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avatar/checkpoint.hpp"
#include "avatar/data.hpp"
#include "avatar/metrics.hpp"
#include "avatar/model.hpp"
#include "avatar/perceptual.hpp"

namespace avatar {

/// penalty: soft ||B B^T - I||^2 term. retraction: QR re-orthonormalization of
/// B after every update. none: unconstrained basis.
enum class OrthoMode { penalty, retraction, none };

const char* to_string(OrthoMode mode);
OrthoMode parse_ortho_mode(const std::string& name);

inline constexpr double kAdamEpsilon = 1e-8;

struct TrainConfig {
  std::size_t total_iters = 2000;
  std::size_t freeze_iters = 500;  // generator frozen while iteration < freeze_iters
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 2;
  double lambda_perceptual = 5.0;
  double lambda_ortho = 1.0;
  OrthoMode ortho_mode = OrthoMode::penalty;
  std::size_t k = 8;
  uint64_t seed = 0;
  std::size_t eval_every = 500;  // 0 disables periodic evaluation
  std::string perceptual = kDefaultPerceptual;
  // Stage-2 unfreezing per generator submodule.
  bool train_synthesizer = true;
  bool train_decoder = true;
  bool train_upsampler = true;
  GeneratorConfig generator;
  RenderConfig render;
  EncoderConfig encoder;  // architecture widths; k and the active branch come from the run

  /// 200k iterations, 50k frozen, lr 3e-4, betas 0.9 / 0.999, batch 2,
  /// lambda_perceptual 5, k = 50.
  static TrainConfig full_scale();

  void validate() const;
};

/// Flat key-value form: TrainConfig field names plus "gen.*", "render.*" and "enc.*".
nlohmann::json to_json(const TrainConfig& config);

/// Applies every key of a flat document on top of `base`. Unknown keys and
/// ill-typed values throw ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig base = {});

/// One `key=value` override; the value is parsed as JSON when possible and as a
/// bare string otherwise.
void apply_override(TrainConfig& config, const std::string& assignment);

/// Reads a flat JSON config file on top of the defaults.
TrainConfig load_train_config(const std::filesystem::path& path);

/// Fresh model for a modality: seeded generator, orthonormal basis, one encoder branch.
Model initialize_model(const TrainConfig& config, Modality modality);

struct LossRecord {
  std::size_t iteration = 0;  // iteration count after the step
  double l2 = 0.0;
  double perceptual = 0.0;
  double ortho = 0.0;
  double total = 0.0;  // l2 + perceptual + ortho
};

struct AdamMoments {
  Tensor m;
  Tensor v;
  uint64_t steps = 0;  // updates applied to this tensor (bias correction)
};

struct TrainState {
  TrainConfig config;
  Model model;
  std::size_t iteration = 0;
  std::map<std::string, AdamMoments> adam;
  std::vector<LossRecord> history;

  static TrainState initialize(const TrainConfig& config, Modality modality);
};

struct LossParts {
  double l2 = 0.0;
  double perceptual = 0.0;
};

/// MSE plus lambda * perceptual. When grad_pred is non-null it receives the
/// gradient of l2 + perceptual with respect to pred.
LossParts reconstruction_loss_parts(const Tensor& pred, const Tensor& target, double lambda_perceptual,
                                    const PerceptualFn& perceptual, Tensor* grad_pred);

double reconstruction_loss(const Tensor& pred, const Tensor& target, double lambda_perceptual);

/// Whether the named tensor is updated at the state's current iteration.
bool is_trainable(const TrainState& state, const ParamRef& param);

struct StepGradients {
  LossRecord loss;
  Model grads;             // parameters() align index by index with the model's
  bool generator = false;  // generator gradients were computed (some generator tensor is trainable)
};

/// Batch loss and its gradient with respect to every model tensor, exactly as
/// train_step sees them; the state is not modified.
StepGradients step_gradients(const TrainState& state, std::span<const FrameSample* const> batch);

/// One optimization step on a batch. Throws DivergenceError, before touching
/// any parameter, when the loss or a gradient is non-finite.
LossRecord train_step(TrainState& state, std::span<const FrameSample* const> batch);

/// Indices of the training frames consumed by step `iteration`: a seeded
/// permutation per epoch, walked batch by batch.
std::vector<std::size_t> batch_indices(const TrainConfig& config, std::span<const std::size_t> train_indices,
                                       std::size_t iteration);

struct EvalRecord {
  LossRecord loss;
  EvalReport report;
  nlohmann::json to_json() const;
};

struct TrainOptions {
  std::filesystem::path out_dir;        // empty: write nothing
  std::size_t checkpoint_every = 0;     // 0: only at evaluations and the end
  std::function<void(const EvalRecord&)> on_eval;
  std::ostream* log = nullptr;
};

/// Continues `state` until config.total_iters. With an out_dir, writes
/// checkpoint.bin and appends to metrics.jsonl. On divergence the checkpoint of
/// the last good state is written (when out_dir is set) before rethrowing.
TrainState train(const Dataset& dataset, TrainState state, const TrainOptions& options = {});

TrainState train(const Dataset& dataset, const TrainConfig& config, Modality modality,
                 const TrainOptions& options = {});

Checkpoint to_checkpoint(const TrainState& state);
TrainState from_checkpoint(const Checkpoint& checkpoint);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace avatar
