#pragma once

// Command implementations behind the `avatar` executable. Each command writes
// only under its output directory and records a provenance.json there (config
// snapshot, seed, input hashes). Nothing time- or host-dependent is recorded,
// so reruns with the same inputs and seed reproduce the same bytes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avatar/metrics.hpp"
#include "avatar/training.hpp"

namespace avatar {

/// Configuration flags shared by the training commands.
struct ConfigArgs {
  std::filesystem::path config;         // optional flat JSON file
  std::vector<std::string> overrides;   // key=value, applied after the file
  std::optional<uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<std::string> ortho;     // penalty | retraction | none (on/off accepted)
};

/// Defaults, then the config file, then overrides, then the dedicated flags.
TrainConfig resolve_config(const ConfigArgs& args);

/// Which frames a command works on.
enum class FrameSelection { test, train, all };
FrameSelection parse_frame_selection(const std::string& name);
std::vector<std::size_t> select_frames(const Dataset& dataset, FrameSelection which);

void write_provenance(const std::filesystem::path& out, const nlohmann::json& record);

struct SynthDataArgs {
  std::filesystem::path spec;  // empty: built-in default scene
  std::size_t n_frames = 200;
  std::optional<uint64_t> seed;
  std::filesystem::path out;
};
void cmd_synth_data(const SynthDataArgs& args);

struct TrainArgs {
  ConfigArgs config;
  std::filesystem::path data;
  Modality modality = Modality::image;
  std::filesystem::path out;
  bool resume = false;  // continue from out/checkpoint.bin when present
  std::size_t checkpoint_every = 0;
};
/// Writes checkpoint.bin, metrics.jsonl, config.json, eval.jsonl and
/// summary.json (held-out split) and provenance.json.
TrainState cmd_train(const TrainArgs& args, std::ostream* log);

/// Reconstruction is reenactment driven by the image modality.
struct ReenactArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::optional<Modality> modality;  // must match the checkpoint when given
  FrameSelection frames = FrameSelection::test;
  std::filesystem::path out;
};
/// Writes frames/<frame_id>.png plus eval.jsonl / summary.json against the
/// ground truth. Returns the written image paths.
std::vector<std::filesystem::path> cmd_reenact(const ReenactArgs& args);

struct RenderArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  int64_t frame_id = 0;
  std::size_t orbit = 0;          // number of views evenly spaced about the up axis
  std::optional<double> radius;   // orbit camera distance; default keeps the frame's
  std::filesystem::path out;
};
/// Writes own_pose.png and orbit_<index>.png. Orbit view 0 is the frame's own
/// camera (rotation by zero), rescaled only when a radius is given.
std::vector<std::filesystem::path> cmd_render(const RenderArgs& args);

struct EvaluateArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  FrameSelection frames = FrameSelection::test;
  bool csv = false;
  std::filesystem::path out;
};
/// Writes eval.jsonl, summary.json, optionally eval.csv, and baseline.json
/// (mean training image against the same frames).
EvalReport cmd_evaluate(const EvaluateArgs& args);

struct AblateArgs {
  ConfigArgs config;
  std::filesystem::path data;
  Modality modality = Modality::image;
  std::vector<std::size_t> ks;
  std::vector<std::string> ortho;
  std::filesystem::path out;
};

struct AblationCell {
  std::size_t k = 0;
  OrthoMode ortho = OrthoMode::penalty;
  bool ok = false;
  std::string error;
  EvalReport report;
};

/// Trains one model per (k, ortho) cell into out/k<k>_<ortho>/ with the shared
/// seed and budget, then writes ablation.csv and ablation.json. Failed cells
/// are recorded and the sweep continues.
std::vector<AblationCell> cmd_ablate(const AblateArgs& args, std::ostream* log);

}  // namespace avatar
