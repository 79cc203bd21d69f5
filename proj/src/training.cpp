#include "avatar/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "avatar/errors.hpp"

namespace avatar {

using json = nlohmann::json;

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t mix(uint64_t a, uint64_t b, uint64_t c = 0) { return splitmix(splitmix(splitmix(a) ^ b) ^ c); }

}  // namespace

// ---------------------------------------------------------------------------
// Config

const char* to_string(OrthoMode mode) {
  switch (mode) {
    case OrthoMode::penalty: return "penalty";
    case OrthoMode::retraction: return "retraction";
    case OrthoMode::none: return "none";
  }
  return "?";
}

OrthoMode parse_ortho_mode(const std::string& name) {
  if (name == "penalty" || name == "on") return OrthoMode::penalty;
  if (name == "retraction" || name == "qr") return OrthoMode::retraction;
  if (name == "none" || name == "off") return OrthoMode::none;
  throw ConfigError("unknown ortho mode '" + name + "' (expected penalty, retraction or none)");
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.total_iters = 200000;
  c.freeze_iters = 50000;
  c.learning_rate = 3e-4;
  c.beta1 = 0.9;
  c.beta2 = 0.999;
  c.batch_size = 2;
  c.lambda_perceptual = 5.0;
  c.k = 50;
  c.eval_every = 10000;
  return c;
}

void TrainConfig::validate() const {
  if (freeze_iters > total_iters) throw ConfigError("freeze_iters must not exceed total_iters");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(lambda_perceptual >= 0.0) || !(lambda_ortho >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (k == 0) throw ConfigError("k must be at least 1");
  if (k > generator.latent_dim) {
    throw ConfigError("k = " + std::to_string(k) + " exceeds the latent dimension " +
                      std::to_string(generator.latent_dim));
  }
  perceptual_metric(perceptual);
  generator.validate();
  render.validate();
  encoder.validate();
}

namespace {

using Setter = std::function<void(TrainConfig&, const json&)>;

std::size_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got " + v.dump());
  }
  return v.get<std::size_t>();
}

double as_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' expects a number, got " + v.dump());
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' expects true or false, got " + v.dump());
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' expects a string, got " + v.dump());
  return v.get<std::string>();
}

const std::map<std::string, Setter>& setters() {
#define COUNT(key, field) {key, [](TrainConfig& c, const json& v) { c.field = as_count(v, key); }}
#define NUMBER(key, field) {key, [](TrainConfig& c, const json& v) { c.field = as_number(v, key); }}
#define FLAG(key, field) {key, [](TrainConfig& c, const json& v) { c.field = as_bool(v, key); }}
  static const std::map<std::string, Setter> table{
      COUNT("total_iters", total_iters),
      COUNT("freeze_iters", freeze_iters),
      NUMBER("learning_rate", learning_rate),
      NUMBER("beta1", beta1),
      NUMBER("beta2", beta2),
      COUNT("batch_size", batch_size),
      NUMBER("lambda_perceptual", lambda_perceptual),
      NUMBER("lambda_ortho", lambda_ortho),
      {"ortho_mode", [](TrainConfig& c, const json& v) { c.ortho_mode = parse_ortho_mode(as_string(v, "ortho_mode")); }},
      COUNT("k", k),
      {"seed", [](TrainConfig& c, const json& v) { c.seed = as_count(v, "seed"); }},
      COUNT("eval_every", eval_every),
      {"perceptual", [](TrainConfig& c, const json& v) { c.perceptual = as_string(v, "perceptual"); }},
      FLAG("train_synthesizer", train_synthesizer),
      FLAG("train_decoder", train_decoder),
      FLAG("train_upsampler", train_upsampler),
      COUNT("gen.channels", generator.channels),
      COUNT("gen.resolution", generator.resolution),
      COUNT("gen.latent_dim", generator.latent_dim),
      COUNT("gen.style_layers", generator.style_layers),
      FLAG("gen.pose_conditioning", generator.pose_conditioning),
      COUNT("gen.decoder_hidden", generator.decoder_hidden),
      FLAG("gen.view_dependent", generator.view_dependent),
      FLAG("gen.upsampler", generator.upsampler),
      NUMBER("gen.extent", generator.extent),
      NUMBER("gen.synth_weight_std", generator.synth_weight_std),
      NUMBER("gen.synth_bias_std", generator.synth_bias_std),
      COUNT("render.n_samples", render.n_samples),
      NUMBER("render.near", render.near),
      NUMBER("render.far", render.far),
      FLAG("render.stratified", render.stratified),
      {"render.background",
       [](TrainConfig& c, const json& v) {
         const std::string s = as_string(v, "render.background");
         if (s == "black") {
           c.render.background = Background::black;
         } else if (s == "white") {
           c.render.background = Background::white;
         } else {
           throw ConfigError("render.background must be black or white");
         }
       }},
      COUNT("render.raw_height", render.raw_height),
      COUNT("render.raw_width", render.raw_width),
      COUNT("render.output_height", render.output_height),
      COUNT("render.output_width", render.output_width),
      {"enc.image_channels",
       [](TrainConfig& c, const json& v) {
         if (!v.is_array() || v.size() != c.encoder.image_channels.size()) {
           throw ConfigError("config key 'enc.image_channels' expects 4 widths, got " + v.dump());
         }
         for (std::size_t i = 0; i < v.size(); ++i) c.encoder.image_channels[i] = as_count(v[i], "enc.image_channels");
       }},
      COUNT("enc.image_grid", encoder.image_grid),
      COUNT("enc.expression_hidden", encoder.expression_hidden),
      COUNT("enc.audio_channels", encoder.audio_channels),
  };
#undef COUNT
#undef NUMBER
#undef FLAG
  return table;
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {
      {"total_iters", c.total_iters},
      {"freeze_iters", c.freeze_iters},
      {"learning_rate", c.learning_rate},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"batch_size", c.batch_size},
      {"lambda_perceptual", c.lambda_perceptual},
      {"lambda_ortho", c.lambda_ortho},
      {"ortho_mode", to_string(c.ortho_mode)},
      {"k", c.k},
      {"seed", c.seed},
      {"eval_every", c.eval_every},
      {"perceptual", c.perceptual},
      {"train_synthesizer", c.train_synthesizer},
      {"train_decoder", c.train_decoder},
      {"train_upsampler", c.train_upsampler},
      {"gen.channels", c.generator.channels},
      {"gen.resolution", c.generator.resolution},
      {"gen.latent_dim", c.generator.latent_dim},
      {"gen.style_layers", c.generator.style_layers},
      {"gen.pose_conditioning", c.generator.pose_conditioning},
      {"gen.decoder_hidden", c.generator.decoder_hidden},
      {"gen.view_dependent", c.generator.view_dependent},
      {"gen.upsampler", c.generator.upsampler},
      {"gen.extent", c.generator.extent},
      {"gen.synth_weight_std", c.generator.synth_weight_std},
      {"gen.synth_bias_std", c.generator.synth_bias_std},
      {"render.n_samples", c.render.n_samples},
      {"render.near", c.render.near},
      {"render.far", c.render.far},
      {"render.stratified", c.render.stratified},
      {"render.background", c.render.background == Background::white ? "white" : "black"},
      {"render.raw_height", c.render.raw_height},
      {"render.raw_width", c.render.raw_width},
      {"render.output_height", c.render.output_height},
      {"render.output_width", c.render.output_width},
      {"enc.image_channels", c.encoder.image_channels},
      {"enc.image_grid", c.encoder.image_grid},
      {"enc.expression_hidden", c.encoder.expression_hidden},
      {"enc.audio_channels", c.encoder.audio_channels},
  };
}

TrainConfig train_config_from_json(const json& doc, TrainConfig base) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object of key-value pairs");
  const auto& table = setters();
  for (const auto& [key, value] : doc.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(base, value);
  }
  return base;
}

void apply_override(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  config = train_config_from_json(json{{key, value}}, config);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return train_config_from_json(doc);
}

// ---------------------------------------------------------------------------
// Model and state

Model initialize_model(const TrainConfig& config, Modality modality) {
  config.validate();
  Model m;
  m.modality = modality;
  m.render = config.render;
  m.generator = GeneratorParams::initialize(config.generator, mix(config.seed, 1));
  m.basis = PersonalBasis::random_orthonormal(config.k, config.generator.latent_dim, mix(config.seed, 2));
  EncoderConfig ec = config.encoder;
  ec.k = config.k;
  ec.image = modality == Modality::image;
  ec.expression = modality == Modality::expression;
  ec.audio = modality == Modality::audio;
  m.encoder = EncoderParams::initialize(ec, mix(config.seed, 3));
  return m;
}

TrainState TrainState::initialize(const TrainConfig& config, Modality modality) {
  TrainState s;
  s.config = config;
  s.model = initialize_model(config, modality);
  for (const auto& p : s.model.parameters()) {
    s.adam[p.name] = AdamMoments{Tensor::zeros_like(*p.tensor), Tensor::zeros_like(*p.tensor), 0};
  }
  return s;
}

// ---------------------------------------------------------------------------
// Loss

LossParts reconstruction_loss_parts(const Tensor& pred, const Tensor& target, double lambda_perceptual,
                                    const PerceptualFn& perceptual, Tensor* grad_pred) {
  require_same_shape(pred, target, "reconstruction_loss");
  const double n = static_cast<double>(pred.size());
  LossParts parts;
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    sq += d * d;
  }
  parts.l2 = sq / n;
  if (grad_pred != nullptr) {
    *grad_pred = Tensor::zeros_like(pred);
    for (std::size_t i = 0; i < pred.size(); ++i) (*grad_pred)[i] = 2.0 * (pred[i] - target[i]) / n;
  }
  if (lambda_perceptual != 0.0) {
    Tensor gp;
    parts.perceptual = lambda_perceptual * perceptual(pred, target, grad_pred != nullptr ? &gp : nullptr);
    if (grad_pred != nullptr) {
      for (std::size_t i = 0; i < pred.size(); ++i) (*grad_pred)[i] += lambda_perceptual * gp[i];
    }
  }
  return parts;
}

double reconstruction_loss(const Tensor& pred, const Tensor& target, double lambda_perceptual) {
  const LossParts p =
      reconstruction_loss_parts(pred, target, lambda_perceptual, perceptual_metric(kDefaultPerceptual), nullptr);
  return p.l2 + p.perceptual;
}

// ---------------------------------------------------------------------------
// Optimization

bool is_trainable(const TrainState& state, const ParamRef& param) {
  const TrainConfig& c = state.config;
  switch (param.group) {
    case ParamGroup::encoder:
    case ParamGroup::basis: return true;
    case ParamGroup::synthesizer: return state.iteration >= c.freeze_iters && c.train_synthesizer;
    case ParamGroup::decoder: return state.iteration >= c.freeze_iters && c.train_decoder;
    case ParamGroup::upsampler: return state.iteration >= c.freeze_iters && c.train_upsampler;
  }
  return false;
}

namespace {

void adam_update(Tensor& param, const Tensor& grad, AdamMoments& mom, const TrainConfig& c) {
  ++mom.steps;
  const double b1c = 1.0 - std::pow(c.beta1, static_cast<double>(mom.steps));
  const double b2c = 1.0 - std::pow(c.beta2, static_cast<double>(mom.steps));
  double* p = param.data();
  double* m = mom.m.data();
  double* v = mom.v.data();
  const double* g = grad.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    p[i] -= c.learning_rate * (m[i] / b1c) / (std::sqrt(v[i] / b2c) + kAdamEpsilon);
  }
}

Model zero_gradients(const Model& model, bool with_generator) {
  Model g;
  g.modality = model.modality;
  g.encoder = EncoderParams::zeros(model.encoder.config);
  g.basis = PersonalBasis(model.basis.k(), model.basis.d());
  g.generator = with_generator ? GeneratorParams::zeros(model.generator.config) : model.generator;
  return g;
}

}  // namespace

StepGradients step_gradients(const TrainState& state, std::span<const FrameSample* const> batch) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const TrainConfig& cfg = state.config;
  const Model& model = state.model;
  const PerceptualFn& perceptual = perceptual_metric(cfg.perceptual);

  StepGradients out;
  out.generator = state.iteration >= cfg.freeze_iters &&
                  (cfg.train_synthesizer || cfg.train_decoder || cfg.train_upsampler);
  out.grads = zero_gradients(model, out.generator);
  Model& grads = out.grads;
  auto grad_basis = grads.basis.rows();
  const auto basis = model.basis.rows();

  LossRecord& rec = out.loss;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (std::size_t slot = 0; slot < batch.size(); ++slot) {
    const FrameSample& frame = *batch[slot];
    EncodeTrace etrace;
    const Coefficient alpha = encode(model.encoder, frame.signal(model.modality), &etrace);
    const LatentCode w = compose_latent(alpha, model.basis);

    RenderTrace rtrace;
    const uint64_t render_seed = mix(cfg.seed, state.iteration, slot);
    const RenderOutput rendered = render(model.generator, w, frame.pose, model.render, render_seed, &rtrace);

    Tensor grad_pred;
    const LossParts parts =
        reconstruction_loss_parts(rendered.rgb, frame.image, cfg.lambda_perceptual, perceptual, &grad_pred);
    rec.l2 += parts.l2 * inv_batch;
    rec.perceptual += parts.perceptual * inv_batch;
    for (double& g : grad_pred.storage()) g *= inv_batch;

    Eigen::RowVectorXd grad_w = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(model.basis.d()));
    render_backward(model.generator, model.render, rtrace, grad_pred, &grad_w,
                    out.generator ? &grads.generator : nullptr);
    const Eigen::RowVectorXd grad_alpha = grad_w * basis.transpose();
    grad_basis.noalias() += alpha.alpha.transpose() * grad_w;
    encode_backward(model.encoder, etrace, grad_alpha, &grads.encoder, nullptr);
  }

  if (cfg.ortho_mode == OrthoMode::penalty && cfg.lambda_ortho > 0.0) {
    rec.ortho = cfg.lambda_ortho * ortho_penalty(model.basis);
    grad_basis += cfg.lambda_ortho * ortho_penalty_grad(model.basis);
  }
  rec.total = rec.l2 + rec.perceptual + rec.ortho;
  rec.iteration = state.iteration + 1;
  return out;
}

LossRecord train_step(TrainState& state, std::span<const FrameSample* const> batch) {
  const TrainConfig& cfg = state.config;
  Model& model = state.model;
  StepGradients step = step_gradients(state, batch);
  const LossRecord& rec = step.loss;
  Model& grads = step.grads;

  auto params = model.parameters();
  auto grad_refs = grads.parameters();
  if (!std::isfinite(rec.total)) {
    throw DivergenceError("non-finite loss at iteration " + std::to_string(state.iteration), state.iteration);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (is_trainable(state, params[i]) && !grad_refs[i].tensor->all_finite()) {
      throw DivergenceError("non-finite gradient for " + params[i].name + " at iteration " +
                                std::to_string(state.iteration),
                            state.iteration);
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_trainable(state, params[i])) continue;
    adam_update(*params[i].tensor, *grad_refs[i].tensor, state.adam.at(params[i].name), cfg);
  }
  if (cfg.ortho_mode == OrthoMode::retraction) orthonormalize_rows(model.basis);

  ++state.iteration;
  state.history.push_back(rec);
  return rec;
}

std::vector<std::size_t> batch_indices(const TrainConfig& config, std::span<const std::size_t> train_indices,
                                       std::size_t iteration) {
  const std::size_t n = train_indices.size();
  if (n == 0) throw DatasetError("no training frames");
  std::vector<std::size_t> out;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm;
  for (std::size_t slot = 0; slot < config.batch_size; ++slot) {
    const std::size_t position = iteration * config.batch_size + slot;
    const std::size_t epoch = position / n;
    if (epoch != cached_epoch) {
      perm.assign(train_indices.begin(), train_indices.end());
      std::mt19937_64 rng(mix(config.seed, epoch, 0x5eedull));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[position % n]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

json EvalRecord::to_json() const {
  json j = {{"iteration", loss.iteration},
            {"l2", loss.l2},
            {"perceptual", loss.perceptual},
            {"ortho", loss.ortho},
            {"total", loss.total}};
  const json eval = report.summary_json();
  j["eval_psnr"] = eval["psnr"];
  j["eval_ssim"] = eval["ssim"];
  j["eval_perceptual"] = eval["perceptual"];
  j["gram_offdiag_max"] = eval["gram_offdiag_max"];
  j["gram_diag_deviation"] = eval["gram_diag_deviation"];
  return j;
}

namespace {

void check_dataset(const Dataset& dataset, const TrainState& state) {
  if (dataset.frames.empty()) throw DatasetError("training needs a non-empty dataset");
  const Modality m = state.model.modality;
  if (!dataset.manifest.has(m)) {
    throw ConfigError(std::string("dataset does not provide the ") + to_string(m) + " modality");
  }
  const RenderConfig& rc = state.model.render;
  for (const auto& f : dataset.frames) {
    if (f.image.dim(0) != rc.output_height || f.image.dim(1) != rc.output_width) {
      throw ConfigError("dataset frames are " + std::to_string(f.image.dim(1)) + "x" + std::to_string(f.image.dim(0)) +
                        " but render.output is " + std::to_string(rc.output_width) + "x" +
                        std::to_string(rc.output_height));
    }
  }
}

}  // namespace

TrainState train(const Dataset& dataset, TrainState state, const TrainOptions& options) {
  state.config.validate();
  check_dataset(dataset, state);
  const TrainConfig& cfg = state.config;
  const DatasetSplit split = split_dataset(dataset.frames.size());
  const bool writes = !options.out_dir.empty();
  const std::filesystem::path ckpt = options.out_dir / "checkpoint.bin";
  std::ofstream metrics;
  if (writes) {
    std::filesystem::create_directories(options.out_dir);
    metrics.open(options.out_dir / "metrics.jsonl", std::ios::app);
    if (!metrics) throw IoError("cannot write " + (options.out_dir / "metrics.jsonl").string());
  }

  std::vector<const FrameSample*> batch;
  while (state.iteration < cfg.total_iters) {
    batch.clear();
    for (std::size_t i : batch_indices(cfg, split.train, state.iteration)) batch.push_back(&dataset.frames[i]);
    LossRecord rec;
    try {
      rec = train_step(state, batch);
    } catch (const DivergenceError&) {
      if (writes) save_checkpoint(ckpt, state);
      throw;
    }

    const bool last = state.iteration == cfg.total_iters;
    const bool eval_now = last || (cfg.eval_every > 0 && state.iteration % cfg.eval_every == 0);
    if (eval_now) {
      EvalRecord er{rec, evaluate(state.model, dataset, split.test)};
      if (writes) metrics << er.to_json().dump() << '\n' << std::flush;
      if (options.log != nullptr) {
        *options.log << "iter " << state.iteration << "  loss " << rec.total << " (l2 " << rec.l2 << ", perceptual "
                     << rec.perceptual << ", ortho " << rec.ortho << ")  held-out psnr " << er.report.psnr
                     << "  gram offdiag " << er.report.gram_offdiag_max << '\n';
      }
      if (options.on_eval) options.on_eval(er);
    }
    const bool ckpt_now = last || eval_now ||
                          (options.checkpoint_every > 0 && state.iteration % options.checkpoint_every == 0);
    if (writes && ckpt_now) save_checkpoint(ckpt, state);
  }
  return state;
}

TrainState train(const Dataset& dataset, const TrainConfig& config, Modality modality, const TrainOptions& options) {
  return train(dataset, TrainState::initialize(config, modality), options);
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint to_checkpoint(const TrainState& state) {
  Checkpoint ck;
  ck.meta["format"] = "avatar-checkpoint";
  ck.meta["config"] = to_json(state.config);
  ck.meta["modality"] = to_string(state.model.modality);
  ck.meta["iteration"] = state.iteration;
  json steps = json::object();
  for (const auto& [name, mom] : state.adam) steps[name] = mom.steps;
  ck.meta["adam_steps"] = steps;
  json history = json::array();
  for (const auto& r : state.history) history.push_back({r.iteration, r.l2, r.perceptual, r.ortho, r.total});
  ck.meta["history"] = history;
  ck.meta["basis_shape"] = {state.model.basis.k(), state.model.basis.d()};

  Model& model = const_cast<Model&>(state.model);  // parameters() hands out mutable refs; we only read
  for (const auto& p : model.parameters()) ck.tensors[p.name] = *p.tensor;
  for (const auto& [name, mom] : state.adam) {
    ck.tensors["adam.m/" + name] = mom.m;
    ck.tensors["adam.v/" + name] = mom.v;
  }
  return ck;
}

TrainState from_checkpoint(const Checkpoint& ck) {
  TrainState state;
  try {
    const TrainConfig config = train_config_from_json(ck.meta.at("config"));
    state = TrainState::initialize(config, parse_modality(ck.meta.at("modality").get<std::string>()));
    state.iteration = ck.meta.at("iteration").get<std::size_t>();
    for (const auto& row : ck.meta.at("history")) {
      state.history.push_back({row.at(0).get<std::size_t>(), row.at(1).get<double>(), row.at(2).get<double>(),
                               row.at(3).get<double>(), row.at(4).get<double>()});
    }
    for (auto& p : state.model.parameters()) {
      const Tensor& t = ck.tensor(p.name);
      if (t.shape() != p.tensor->shape()) {
        throw IoError("checkpoint tensor '" + p.name + "' has shape " + shape_string(t.shape()) + ", config implies " +
                      shape_string(p.tensor->shape()));
      }
      *p.tensor = t;
      AdamMoments& mom = state.adam.at(p.name);
      mom.m = ck.tensor("adam.m/" + p.name);
      mom.v = ck.tensor("adam.v/" + p.name);
      mom.steps = ck.meta.at("adam_steps").at(p.name).get<uint64_t>();
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  write_checkpoint(path, to_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

}  // namespace avatar
