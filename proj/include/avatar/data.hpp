#pragma once

// Dataset layout on disk:
//
//   manifest.json          format_version, n_frames, height, width, fps, near, far,
//                          extent, background, modalities, optional "audio" block
//   frames/NNNNNN.png      8-bit RGB frames, NNNNNN = zero-padded frame id
//   cameras.jsonl          one camera record per frame (see camera.hpp)
//   expression.jsonl       optional: {"frame_id": id, "expression": [76 floats]}
//   audio_features.npy     optional: NPY v1.0, dtype '<f8', shape (T_clips, 29),
//                          one row per 20 ms clip starting at t = 0
//   factors.jsonl          synthetic datasets only: {"frame_id": id, "factors": [m floats]}
//   provenance.json        written by the CLI: spec hash, seed, frame count
//
// Frame timestamps are frame_id / fps seconds.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "avatar/camera.hpp"
#include "avatar/encoders.hpp"
#include "avatar/renderer.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

inline constexpr double kClipDuration = 0.020;

struct AudioFeatureTrack {
  Tensor features;  // {T_clips, 29}
  double clip_duration = kClipDuration;

  std::size_t clips() const { return features.empty() ? 0 : features.dim(0); }
};

/// centered: 8 clips before through 7 after the frame's clip.
/// causal: the frame's clip and the 15 before it.
enum class WindowAlignment { centered, causal };

/// Index of the clip containing `time`, clamped to [0, n_clips).
std::size_t clip_index(double time, double clip_duration, std::size_t n_clips);

/// One {16, 29} window per frame time, around the clip that clip_index assigns
/// to it. Out-of-range clip indices replicate the nearest edge clip.
std::vector<Tensor> window_audio(const AudioFeatureTrack& track, std::span<const double> frame_times,
                                 WindowAlignment alignment = WindowAlignment::centered);

struct FrameSample {
  int64_t frame_id = 0;
  double timestamp = 0.0;
  Tensor image;  // {H, W, 3}
  CameraPose pose;
  std::optional<Tensor> expression;    // {76}
  std::optional<Tensor> audio_window;  // {16, 29}

  /// Driving signal for the requested modality; throws ConfigError if absent.
  DrivingSignal signal(Modality modality) const;
};

struct Manifest {
  int format_version = 1;
  std::size_t n_frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  double fps = 25.0;
  double near = 1.5;
  double far = 3.5;
  double extent = 1.0;
  Background background = Background::black;
  std::vector<Modality> modalities{Modality::image};
  WindowAlignment audio_alignment = WindowAlignment::centered;

  bool has(Modality m) const;
};

struct Dataset {
  Manifest manifest;
  std::vector<FrameSample> frames;  // ordered by frame_id
  std::optional<AudioFeatureTrack> audio;
};

/// Held-out split: the last 10% of frames by time (at least one), the rest train.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
DatasetSplit split_dataset(std::size_t n_frames);

Dataset load_dataset(const std::filesystem::path& root);
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);

/// Per-pixel mean of the given frames' images.
Tensor mean_image(const Dataset& dataset, std::span<const std::size_t> indices);

/// Stable FNV-1a hash over every file of a dataset directory (sorted paths).
std::string hash_directory(const std::filesystem::path& root);
std::string hash_file(const std::filesystem::path& path);
std::string hash_bytes(std::string_view bytes);

// --- NPY (v1.0, little-endian float64, C order) --------------------------------
void write_npy(const std::filesystem::path& path, const Tensor& t);
Tensor read_npy(const std::filesystem::path& path);

// --- Synthetic identity ------------------------------------------------------------

/// Anisotropic Gaussian density blob with a constant color.
struct Blob {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d scale = Eigen::Vector3d::Constant(0.1);  // per-axis standard deviation
  Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);
  double density = 10.0;  // peak sigma
  // Linear factor -> deformation maps, each {3, m}.
  Eigen::MatrixXd center_map;
  Eigen::MatrixXd scale_map;
};

struct SyntheticSceneSpec {
  std::size_t factors = 16;  // m
  std::vector<Blob> blobs;
  // Orbit: camera on a sphere around the origin, looking at it.
  double radius = 2.7;
  double yaw_amplitude = 0.35;    // radians
  double pitch_amplitude = 0.15;  // radians
  double yaw_period = 3.1;        // seconds
  double pitch_period = 4.3;      // seconds
  double focal = 2.0;             // normalized focal length
  // Factor dynamics: twice-smoothed mean-reverting random walk squashed by tanh.
  double factor_timescale = 0.1;  // seconds
  double factor_gain = 2.0;
  std::size_t height = 64;
  std::size_t width = 64;
  double fps = 25.0;
  double near = 1.7;
  double far = 3.7;
  double extent = 1.0;
  Background background = Background::black;
  std::size_t gt_samples = 128;  // quadrature samples for ground-truth renders
  uint64_t seed = 7;

  /// Throws ValidationError when the scene description is malformed or a blob can leave the
  /// render cube for some factor vector in [-1, 1]^m.
  void validate() const;
};

/// The face-like scene used by the acceptance fixture.
SyntheticSceneSpec default_scene_spec();

nlohmann::json to_json(const SyntheticSceneSpec& spec);
SyntheticSceneSpec scene_spec_from_json(const nlohmann::json& j);

/// Density and color of the analytic field at one point.
void analytic_field(const SyntheticSceneSpec& spec, const Eigen::VectorXd& factors, const Eigen::Vector3d& point,
                    double& sigma, Eigen::Vector3d& color);

/// Ground-truth render of the analytic field through the shared quadrature.
RenderOutput render_analytic(const SyntheticSceneSpec& spec, const Eigen::VectorXd& factors, const CameraPose& pose,
                             std::size_t n_samples);

/// Camera pose of the synthetic orbit at time t.
CameraPose synthetic_pose(const SyntheticSceneSpec& spec, double time);

struct SyntheticDataset {
  Dataset dataset;
  std::vector<Eigen::VectorXd> factors;  // per frame, m values in (-1, 1)
  Eigen::MatrixXd audio_encoding;        // {29, m}
};

/// Generates frames with 8-bit quantized images, expression = factors padded
/// with zeros to 76, and an audio track that linearly encodes the factors.
SyntheticDataset synth_generate(const SyntheticSceneSpec& spec, std::size_t n_frames);

/// write_dataset plus factors.jsonl.
void write_synthetic(const std::filesystem::path& root, const SyntheticDataset& synthetic);

}  // namespace avatar
