#include "avatar/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "avatar/errors.hpp"
#include "avatar/image_io.hpp"

namespace avatar {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kToolVersion = "avatar 1.0";

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_report(const fs::path& out, const EvalReport& report) {
  report.write_jsonl(out / "eval.jsonl");
  report.write_summary(out / "summary.json");
}

std::string frame_file(int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.png", static_cast<long long>(id));
  return buf;
}

std::size_t find_frame(const Dataset& dataset, int64_t frame_id) {
  for (std::size_t i = 0; i < dataset.frames.size(); ++i) {
    if (dataset.frames[i].frame_id == frame_id) return i;
  }
  const std::string range = dataset.frames.empty()
                                ? std::string("the dataset is empty")
                                : "valid frame ids are " + std::to_string(dataset.frames.front().frame_id) + " to " +
                                      std::to_string(dataset.frames.back().frame_id);
  throw DatasetError("frame " + std::to_string(frame_id) + " not found; " + range, {frame_id});
}

const char* selection_name(FrameSelection s) {
  switch (s) {
    case FrameSelection::test: return "test";
    case FrameSelection::train: return "train";
    case FrameSelection::all: return "all";
  }
  return "?";
}

struct TrainedRun {
  TrainState state;
  EvalReport report;
};

// Shared by `train` and each ablation cell.
TrainedRun train_into(const Dataset& dataset, const fs::path& data_dir, const std::string& dataset_hash,
                      const TrainConfig& config, Modality modality, const fs::path& out, bool resume,
                      std::size_t checkpoint_every, std::ostream* log) {
  if (!dataset.manifest.has(modality)) {
    throw ConfigError(std::string("dataset ") + data_dir.string() + " does not provide the " + to_string(modality) +
                      " modality");
  }
  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoint.bin";
  TrainState state;
  if (resume && fs::exists(ckpt)) {
    state = load_checkpoint(ckpt);
    if (state.model.modality != modality) throw ConfigError("checkpoint in " + out.string() + " has another modality");
    if (to_json(state.config) != to_json(config)) {
      // Only the iteration budget may change on resume.
      TrainConfig same = config;
      same.total_iters = state.config.total_iters;
      if (to_json(state.config) != to_json(same)) throw ConfigError("resume: config differs from the checkpoint's");
      state.config.total_iters = config.total_iters;
    }
  } else {
    fs::remove(out / "metrics.jsonl");
    state = TrainState::initialize(config, modality);
  }
  write_json_file(out / "config.json", to_json(config));

  TrainOptions options;
  options.out_dir = out;
  options.checkpoint_every = checkpoint_every;
  options.log = log;
  state = train(dataset, std::move(state), options);

  const DatasetSplit split = split_dataset(dataset.frames.size());
  EvalReport report = evaluate(state.model, dataset, split.test);
  write_report(out, report);
  write_provenance(out, {{"command", "train"},
                         {"tool", kToolVersion},
                         {"seed", config.seed},
                         {"modality", to_string(modality)},
                         {"config", to_json(config)},
                         {"dataset", data_dir.generic_string()},
                         {"dataset_hash", dataset_hash},
                         {"checkpoint_hash", hash_file(ckpt)}});
  return {std::move(state), std::move(report)};
}

}  // namespace

TrainConfig resolve_config(const ConfigArgs& args) {
  TrainConfig config = args.config.empty() ? TrainConfig{} : load_train_config(args.config);
  for (const auto& o : args.overrides) apply_override(config, o);
  if (args.seed) config.seed = *args.seed;
  if (args.k) config.k = *args.k;
  if (args.ortho) config.ortho_mode = parse_ortho_mode(*args.ortho);
  config.validate();
  return config;
}

FrameSelection parse_frame_selection(const std::string& name) {
  if (name == "test") return FrameSelection::test;
  if (name == "train") return FrameSelection::train;
  if (name == "all") return FrameSelection::all;
  throw ConfigError("unknown frame selection '" + name + "' (expected test, train or all)");
}

std::vector<std::size_t> select_frames(const Dataset& dataset, FrameSelection which) {
  if (which == FrameSelection::all) {
    std::vector<std::size_t> all(dataset.frames.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  const DatasetSplit split = split_dataset(dataset.frames.size());
  return which == FrameSelection::test ? split.test : split.train;
}

void write_provenance(const fs::path& out, const json& record) { write_json_file(out / "provenance.json", record); }

void cmd_synth_data(const SynthDataArgs& args) {
  if (args.n_frames == 0) throw ConfigError("synth-data: --frames must be at least 1");
  SyntheticSceneSpec spec = args.spec.empty() ? default_scene_spec() : scene_spec_from_json(read_json_file(args.spec));
  if (args.seed) spec.seed = *args.seed;
  spec.validate();
  const SyntheticDataset synth = synth_generate(spec, args.n_frames);
  fs::remove_all(args.out);
  write_synthetic(args.out, synth);
  const json spec_json = to_json(spec);
  write_json_file(args.out / "scene_spec.json", spec_json);
  write_provenance(args.out, {{"command", "synth-data"},
                              {"tool", kToolVersion},
                              {"seed", spec.seed},
                              {"n_frames", args.n_frames},
                              {"spec_hash", hash_bytes(spec_json.dump())}});
}

TrainState cmd_train(const TrainArgs& args, std::ostream* log) {
  const TrainConfig config = resolve_config(args.config);
  const Dataset dataset = load_dataset(args.data);
  return train_into(dataset, args.data, hash_directory(args.data), config, args.modality, args.out, args.resume,
                    args.checkpoint_every, log)
      .state;
}

std::vector<fs::path> cmd_reenact(const ReenactArgs& args) {
  const TrainState state = load_checkpoint(args.checkpoint);
  const Model& model = state.model;
  if (args.modality && *args.modality != model.modality) {
    throw ConfigError(std::string("checkpoint is driven by ") + to_string(model.modality) + ", not " +
                      to_string(*args.modality));
  }
  const Dataset dataset = load_dataset(args.data);
  if (!dataset.manifest.has(model.modality)) {
    throw ConfigError(std::string("dataset does not provide the ") + to_string(model.modality) + " modality");
  }
  const auto indices = select_frames(dataset, args.frames);
  fs::create_directories(args.out / "frames");
  std::vector<fs::path> written;
  std::vector<Tensor> preds, targets;
  std::vector<int64_t> ids;
  for (std::size_t i : indices) {
    const FrameSample& f = dataset.frames[i];
    Tensor rgb = model.drive(f.signal(model.modality), f.pose).rgb;
    const fs::path path = args.out / "frames" / frame_file(f.frame_id);
    write_png(path, rgb);
    written.push_back(path);
    preds.push_back(std::move(rgb));
    targets.push_back(f.image);
    ids.push_back(f.frame_id);
  }
  write_report(args.out, evaluate_images(preds, targets, ids));
  write_provenance(args.out, {{"command", "reenact"},
                              {"tool", kToolVersion},
                              {"modality", to_string(model.modality)},
                              {"frames", selection_name(args.frames)},
                              {"config", to_json(state.config)},
                              {"checkpoint_hash", hash_file(args.checkpoint)},
                              {"dataset_hash", hash_directory(args.data)}});
  return written;
}

std::vector<fs::path> cmd_render(const RenderArgs& args) {
  const TrainState state = load_checkpoint(args.checkpoint);
  const Model& model = state.model;
  const Dataset dataset = load_dataset(args.data);
  const FrameSample& f = dataset.frames[find_frame(dataset, args.frame_id)];
  if (args.radius && !(*args.radius > 0.0)) throw ConfigError("render: --radius must be positive");

  const LatentCode w = model.latent(f.signal(model.modality));
  const RenderConfig rc = model.inference_render();
  fs::create_directories(args.out);
  std::vector<fs::path> written;
  const fs::path own = args.out / "own_pose.png";
  write_png(own, render(model.generator, w, f.pose, rc, 0).rgb);
  written.push_back(own);
  json views = json::array();
  for (std::size_t v = 0; v < args.orbit; ++v) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(v) / static_cast<double>(args.orbit);
    CameraPose pose = f.pose;
    pose.extrinsics = orbit_about_up(f.pose.extrinsics, angle, args.radius.value_or(0.0));
    char name[32];
    std::snprintf(name, sizeof(name), "orbit_%03zu.png", v);
    write_png(args.out / name, render(model.generator, w, pose, rc, 0).rgb);
    written.push_back(args.out / name);
    views.push_back({{"file", name}, {"angle", angle}, {"camera", flatten_camera(pose)}});
  }
  write_provenance(args.out, {{"command", "render"},
                              {"tool", kToolVersion},
                              {"frame_id", args.frame_id},
                              {"orbit", args.orbit},
                              {"radius", args.radius ? json(*args.radius) : json(nullptr)},
                              {"views", views},
                              {"config", to_json(state.config)},
                              {"checkpoint_hash", hash_file(args.checkpoint)},
                              {"dataset_hash", hash_directory(args.data)}});
  return written;
}

EvalReport cmd_evaluate(const EvaluateArgs& args) {
  const TrainState state = load_checkpoint(args.checkpoint);
  const Dataset dataset = load_dataset(args.data);
  const auto indices = select_frames(dataset, args.frames);
  const EvalReport report = evaluate(state.model, dataset, indices);
  fs::create_directories(args.out);
  write_report(args.out, report);
  if (args.csv) report.write_csv(args.out / "eval.csv");

  DatasetSplit baseline_split = split_dataset(dataset.frames.size());
  baseline_split.test = indices;
  write_json_file(args.out / "baseline.json", evaluate_mean_baseline(dataset, baseline_split).summary_json());
  write_provenance(args.out, {{"command", "evaluate"},
                              {"tool", kToolVersion},
                              {"frames", selection_name(args.frames)},
                              {"config", to_json(state.config)},
                              {"checkpoint_hash", hash_file(args.checkpoint)},
                              {"dataset_hash", hash_directory(args.data)}});
  return report;
}

std::vector<AblationCell> cmd_ablate(const AblateArgs& args, std::ostream* log) {
  if (args.ks.empty() || args.ortho.empty()) throw ConfigError("ablate: need at least one k and one ortho setting");
  const TrainConfig base = resolve_config(args.config);
  std::vector<OrthoMode> modes;
  for (const auto& o : args.ortho) modes.push_back(parse_ortho_mode(o));
  const Dataset dataset = load_dataset(args.data);
  const std::string dataset_hash = hash_directory(args.data);
  fs::create_directories(args.out);

  std::vector<AblationCell> cells;
  for (std::size_t k : args.ks) {
    for (OrthoMode mode : modes) {
      AblationCell cell;
      cell.k = k;
      cell.ortho = mode;
      const fs::path dir = args.out / ("k" + std::to_string(k) + "_" + to_string(mode));
      try {
        TrainConfig cfg = base;
        cfg.k = k;
        cfg.ortho_mode = mode;
        cfg.validate();
        if (log != nullptr) *log << "== cell k=" << k << " ortho=" << to_string(mode) << '\n';
        cell.report = train_into(dataset, args.data, dataset_hash, cfg, args.modality, dir, false, 0, log).report;
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
        if (log != nullptr) *log << "cell k=" << k << " ortho=" << to_string(mode) << " failed: " << e.what() << '\n';
      }
      cells.push_back(std::move(cell));
    }
  }

  std::ofstream csv(args.out / "ablation.csv");
  if (!csv) throw IoError("cannot write " + (args.out / "ablation.csv").string());
  csv.precision(10);
  csv << "k,ortho,status,psnr,ssim,perceptual,gram_offdiag_max,gram_diag_deviation\n";
  json rows = json::array();
  for (const auto& c : cells) {
    csv << c.k << ',' << to_string(c.ortho) << ',' << (c.ok ? "ok" : "failed");
    json row = {{"k", c.k}, {"ortho", to_string(c.ortho)}, {"status", c.ok ? "ok" : "failed"}};
    if (c.ok) {
      csv << ',' << c.report.psnr << ',' << c.report.ssim << ',' << c.report.perceptual << ','
          << c.report.gram_offdiag_max << ',' << c.report.gram_diag_deviation;
      row.update(c.report.summary_json());
    } else {
      csv << ",,,,,";
      row["error"] = c.error;
    }
    csv << '\n';
    rows.push_back(row);
  }
  write_json_file(args.out / "ablation.json", rows);
  write_provenance(args.out, {{"command", "ablate"},
                              {"tool", kToolVersion},
                              {"seed", base.seed},
                              {"modality", to_string(args.modality)},
                              {"config", to_json(base)},
                              {"ks", args.ks},
                              {"ortho", args.ortho},
                              {"dataset_hash", dataset_hash}});
  return cells;
}

}  // namespace avatar
