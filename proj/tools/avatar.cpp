// avatar: command-line front end for synthesis, training, reenactment,
// novel-view rendering, evaluation and ablation.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "avatar/commands.hpp"
#include "avatar/errors.hpp"

using namespace avatar;

namespace {

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config, "flat JSON training config")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
  cmd->add_option("--seed", args.seed, "random seed");
  cmd->add_option("--k", args.k, "number of basis vectors");
  cmd->add_option("--ortho", args.ortho, "basis constraint: penalty, retraction or none");
}

template <typename T>
std::vector<T> split_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

std::size_t parse_count(const std::string& s) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw ConfigError("not a count: '" + s + "'");
  return static_cast<std::size_t>(v);
}

std::string identity(const std::string& s) { return s; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized generative-prior avatars: synthesize data, train, reenact, render, evaluate."};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress training progress");

  SynthDataArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "generate the procedural identity dataset");
  synth_cmd->add_option("--spec", synth.spec, "scene spec JSON (default: built-in scene)")->check(CLI::ExistingFile);
  synth_cmd->add_option("--frames", synth.n_frames, "number of frames")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth.seed, "scene seed");
  synth_cmd->add_option("--out", synth.out, "output dataset directory")->required();

  TrainArgs train_args;
  std::string train_modality = "image";
  auto* train_cmd = app.add_subcommand("train", "train encoder, basis and generator");
  train_cmd->add_option("--data", train_args.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--modality", train_modality, "driving signal: image, expr or audio");
  train_cmd->add_option("--out", train_args.out, "output directory")->required();
  train_cmd->add_flag("--resume", train_args.resume, "continue from <out>/checkpoint.bin when present");
  train_cmd->add_option("--checkpoint-every", train_args.checkpoint_every, "extra checkpoint interval");
  add_config_flags(train_cmd, train_args.config);

  ReenactArgs reenact;
  std::string reenact_modality, reenact_frames = "test";
  auto* reenact_cmd =
      app.add_subcommand("reenact", "render frames from their driving signals (image modality: reconstruction)");
  reenact_cmd->alias("reconstruct");
  reenact_cmd->add_option("--checkpoint", reenact.checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  reenact_cmd->add_option("--data", reenact.data, "dataset supplying signals and cameras")
      ->required()
      ->check(CLI::ExistingDirectory);
  reenact_cmd->add_option("--modality", reenact_modality, "expected driving modality (checked against the checkpoint)");
  reenact_cmd->add_option("--frames", reenact_frames, "test, train or all");
  reenact_cmd->add_option("--out", reenact.out, "output directory")->required();

  RenderArgs render_args;
  auto* render_cmd = app.add_subcommand("render", "render one frame's avatar under its pose and an orbit");
  render_cmd->add_option("--checkpoint", render_args.checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  render_cmd->add_option("--data", render_args.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  render_cmd->add_option("--frame", render_args.frame_id, "frame id")->required();
  render_cmd->add_option("--orbit", render_args.orbit, "number of orbit views");
  render_cmd->add_option("--radius", render_args.radius, "orbit camera distance from the origin");
  render_cmd->add_option("--out", render_args.out, "output directory")->required();

  EvaluateArgs eval_args;
  std::string eval_frames = "test";
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on held-out frames");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_args.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--frames", eval_frames, "test, train or all");
  eval_cmd->add_flag("--csv", eval_args.csv, "also write eval.csv");
  eval_cmd->add_option("--out", eval_args.out, "output directory")->required();

  AblateArgs ablate;
  std::string ablate_modality = "image", ks = "2,4,8,16", orthos = "penalty";
  auto* ablate_cmd = app.add_subcommand("ablate", "sweep basis size and orthogonality constraint");
  ablate_cmd->add_option("--data", ablate.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate_cmd->add_option("--modality", ablate_modality, "driving signal: image, expr or audio");
  ablate_cmd->add_option("--ks", ks, "comma-separated basis sizes");
  ablate_cmd->add_option("--orthos", orthos, "comma-separated constraints: penalty, retraction, none (on/off)");
  ablate_cmd->add_option("--out", ablate.out, "output directory")->required();
  ablate_cmd->add_option("--config", ablate.config.config, "flat JSON training config")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--set", ablate.config.overrides, "config override key=value (repeatable)");
  ablate_cmd->add_option("--seed", ablate.config.seed, "random seed shared by every cell");

  CLI11_PARSE(app, argc, argv);
  std::ostream* log = quiet ? nullptr : &std::cout;

  try {
    if (synth_cmd->parsed()) {
      cmd_synth_data(synth);
      std::cout << "wrote " << synth.n_frames << " frames to " << synth.out << '\n';
    } else if (train_cmd->parsed()) {
      train_args.modality = parse_modality(train_modality);
      const TrainState s = cmd_train(train_args, log);
      std::cout << "trained " << s.iteration << " iterations; outputs in " << train_args.out << '\n';
    } else if (reenact_cmd->parsed()) {
      if (!reenact_modality.empty()) reenact.modality = parse_modality(reenact_modality);
      reenact.frames = parse_frame_selection(reenact_frames);
      const auto files = cmd_reenact(reenact);
      std::cout << "wrote " << files.size() << " frames to " << reenact.out << '\n';
    } else if (render_cmd->parsed()) {
      const auto files = cmd_render(render_args);
      std::cout << "wrote " << files.size() << " images to " << render_args.out << '\n';
    } else if (eval_cmd->parsed()) {
      eval_args.frames = parse_frame_selection(eval_frames);
      const EvalReport r = cmd_evaluate(eval_args);
      std::cout << r.summary_json().dump() << '\n';
    } else if (ablate_cmd->parsed()) {
      ablate.modality = parse_modality(ablate_modality);
      ablate.ks = split_list<std::size_t>(ks, parse_count);
      ablate.ortho = split_list<std::string>(orthos, identity);
      const auto cells = cmd_ablate(ablate, log);
      std::size_t failed = 0;
      for (const auto& c : cells) {
        if (!c.ok) ++failed;
        std::cout << "k=" << c.k << " ortho=" << to_string(c.ortho) << ' '
                  << (c.ok ? "psnr " + std::to_string(c.report.psnr) : "FAILED: " + c.error) << '\n';
      }
      if (failed > 0) return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
