#include "avatar/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "avatar/errors.hpp"
#include "avatar/image_io.hpp"

namespace avatar {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Blob containment is checked on the box center +- kContainmentSigmas * scale.
constexpr double kContainmentSigmas = 2.5;

// ---------------------------------------------------------------------------
// Audio windows

namespace {

long containing_clip(double time, double clip_duration) {
  // The small bias keeps exact multiples (frame times that land on a clip
  // boundary, e.g. 25 fps against 20 ms clips) in the clip they start.
  return static_cast<long>(std::floor(time / clip_duration + 1e-9));
}

}  // namespace

std::size_t clip_index(double time, double clip_duration, std::size_t n_clips) {
  if (n_clips == 0) throw ValidationError("clip_index: empty track");
  const long c = containing_clip(time, clip_duration);
  return static_cast<std::size_t>(std::clamp<long>(c, 0, static_cast<long>(n_clips) - 1));
}

std::vector<Tensor> window_audio(const AudioFeatureTrack& track, std::span<const double> frame_times,
                                 WindowAlignment alignment) {
  const std::size_t n_clips = track.clips();
  if (n_clips == 0) throw ValidationError("window_audio: empty audio track");
  if (track.features.rank() != 2 || track.features.dim(1) != kAudioFeatures) {
    throw ShapeError("window_audio: audio features must be T x 29, got " + shape_string(track.features.shape()));
  }
  const long first_offset = alignment == WindowAlignment::centered ? -static_cast<long>(kAudioWindow / 2)
                                                                   : -static_cast<long>(kAudioWindow - 1);
  std::vector<Tensor> windows;
  windows.reserve(frame_times.size());
  for (double t : frame_times) {
    const auto center = static_cast<long>(clip_index(t, track.clip_duration, n_clips));
    Tensor window({kAudioWindow, kAudioFeatures});
    for (std::size_t row = 0; row < kAudioWindow; ++row) {
      const long idx = std::clamp<long>(center + first_offset + static_cast<long>(row), 0, static_cast<long>(n_clips) - 1);
      std::copy_n(track.features.data() + static_cast<std::size_t>(idx) * kAudioFeatures, kAudioFeatures,
                  window.data() + row * kAudioFeatures);
    }
    windows.push_back(std::move(window));
  }
  return windows;
}

// ---------------------------------------------------------------------------
// Frames and manifest

DrivingSignal FrameSample::signal(Modality modality) const {
  switch (modality) {
    case Modality::image: return ImageSignal{image};
    case Modality::expression:
      if (!expression) throw ConfigError("frame " + std::to_string(frame_id) + " has no expression coefficients");
      return ExpressionSignal{*expression};
    case Modality::audio:
      if (!audio_window) throw ConfigError("frame " + std::to_string(frame_id) + " has no audio window");
      return AudioSignal{*audio_window};
  }
  throw ConfigError("unknown modality");
}

bool Manifest::has(Modality m) const { return std::find(modalities.begin(), modalities.end(), m) != modalities.end(); }

DatasetSplit split_dataset(std::size_t n_frames) {
  if (n_frames < 2) throw DatasetError("dataset needs at least two frames for a train/test split");
  const std::size_t n_test = std::max<std::size_t>(1, n_frames / 10);
  DatasetSplit split;
  for (std::size_t i = 0; i < n_frames; ++i) (i < n_frames - n_test ? split.train : split.test).push_back(i);
  return split;
}

namespace {

std::string frame_filename(int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.png", static_cast<long long>(id));
  return buf;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }
  return rows;
}

const char* to_string(Background b) { return b == Background::white ? "white" : "black"; }

Background parse_background(const std::string& s) {
  if (s == "black") return Background::black;
  if (s == "white") return Background::white;
  throw ConfigError("unknown background '" + s + "'");
}

json manifest_to_json(const Manifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["n_frames"] = m.n_frames;
  j["height"] = m.height;
  j["width"] = m.width;
  j["fps"] = m.fps;
  j["near"] = m.near;
  j["far"] = m.far;
  j["extent"] = m.extent;
  j["background"] = to_string(m.background);
  json mods = json::array();
  for (Modality mod : m.modalities) mods.push_back(to_string(mod));
  j["modalities"] = mods;
  if (m.has(Modality::audio)) {
    j["audio"] = {{"file", "audio_features.npy"},
                  {"clip_duration", kClipDuration},
                  {"alignment", m.audio_alignment == WindowAlignment::causal ? "causal" : "centered"}};
  }
  return j;
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  m.format_version = j.value("format_version", 1);
  if (m.format_version != 1) throw DatasetError("unsupported dataset format_version " + std::to_string(m.format_version));
  m.n_frames = j.at("n_frames").get<std::size_t>();
  m.height = j.at("height").get<std::size_t>();
  m.width = j.at("width").get<std::size_t>();
  m.fps = j.value("fps", 25.0);
  m.near = j.at("near").get<double>();
  m.far = j.at("far").get<double>();
  m.extent = j.value("extent", 1.0);
  m.background = parse_background(j.value("background", std::string("black")));
  m.modalities.clear();
  for (const auto& mod : j.at("modalities")) m.modalities.push_back(parse_modality(mod.get<std::string>()));
  if (j.contains("audio")) {
    m.audio_alignment =
        j["audio"].value("alignment", std::string("centered")) == "causal" ? WindowAlignment::causal : WindowAlignment::centered;
  }
  return m;
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  try {
    ds.manifest = manifest_from_json(read_json_file(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw DatasetError("manifest.json: " + std::string(e.what()));
  }

  // Frames, ordered by id.
  const fs::path frame_dir = root / "frames";
  if (!fs::is_directory(frame_dir)) throw DatasetError("dataset has no frames/ directory: " + root.string());
  static const std::regex kFramePattern(R"((\d+)\.png)");
  std::map<int64_t, fs::path> frame_files;
  for (const auto& entry : fs::directory_iterator(frame_dir)) {
    std::smatch match;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, match, kFramePattern)) frame_files[std::stoll(match[1].str())] = entry.path();
  }
  if (frame_files.empty()) throw DatasetError("dataset has no frames");

  std::map<int64_t, CameraPose> cameras;
  for (auto& rec : read_cameras(root / "cameras.jsonl")) cameras[rec.frame_id] = rec.pose;
  if (cameras.size() != frame_files.size()) {
    std::vector<int64_t> missing;
    for (const auto& [id, path] : frame_files) {
      if (!cameras.count(id)) missing.push_back(id);
    }
    std::string msg = "image/camera count mismatch: " + std::to_string(frame_files.size()) + " frames, " +
                      std::to_string(cameras.size()) + " cameras";
    if (!missing.empty()) {
      msg += "; frames without camera:";
      for (int64_t id : missing) msg += " " + std::to_string(id);
    }
    throw DatasetError(msg, missing);
  }
  std::vector<int64_t> missing;
  for (const auto& [id, path] : frame_files) {
    if (!cameras.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "frames without camera:";
    for (int64_t id : missing) msg += " " + std::to_string(id);
    throw DatasetError(msg, missing);
  }
  if (ds.manifest.n_frames != frame_files.size()) {
    throw DatasetError("manifest lists " + std::to_string(ds.manifest.n_frames) + " frames, found " +
                       std::to_string(frame_files.size()));
  }

  for (const auto& [id, path] : frame_files) {
    FrameSample f;
    f.frame_id = id;
    f.timestamp = static_cast<double>(id) / ds.manifest.fps;
    f.image = read_png(path);
    if (f.image.dim(0) != ds.manifest.height || f.image.dim(1) != ds.manifest.width) {
      throw DatasetError("frame " + std::to_string(id) + " has resolution " + std::to_string(f.image.dim(1)) + "x" +
                             std::to_string(f.image.dim(0)) + ", manifest says " + std::to_string(ds.manifest.width) +
                             "x" + std::to_string(ds.manifest.height),
                         {id});
    }
    f.pose = cameras.at(id);
    ds.frames.push_back(std::move(f));
  }

  if (ds.manifest.has(Modality::expression)) {
    std::map<int64_t, Tensor> expr;
    for (const auto& row : read_jsonl(root / "expression.jsonl")) {
      auto values = row.at("expression").get<std::vector<double>>();
      if (values.size() != kExpressionDim) {
        throw DatasetError("expression for frame " + std::to_string(row.at("frame_id").get<int64_t>()) + " has " +
                           std::to_string(values.size()) + " values, expected 76");
      }
      expr[row.at("frame_id").get<int64_t>()] = Tensor({kExpressionDim}, std::move(values));
    }
    std::vector<int64_t> lacking;
    for (auto& f : ds.frames) {
      auto it = expr.find(f.frame_id);
      if (it == expr.end()) {
        lacking.push_back(f.frame_id);
      } else {
        f.expression = it->second;
      }
    }
    if (!lacking.empty()) throw DatasetError("frames without expression coefficients", lacking);
  }

  if (ds.manifest.has(Modality::audio)) {
    AudioFeatureTrack track;
    track.features = read_npy(root / "audio_features.npy");
    if (track.features.rank() != 2 || track.features.dim(1) != kAudioFeatures) {
      throw DatasetError("audio_features.npy must have shape (T, 29), got " + shape_string(track.features.shape()));
    }
    std::vector<double> times;
    for (const auto& f : ds.frames) times.push_back(f.timestamp);
    auto windows = window_audio(track, times, ds.manifest.audio_alignment);
    for (std::size_t i = 0; i < ds.frames.size(); ++i) ds.frames[i].audio_window = std::move(windows[i]);
    ds.audio = std::move(track);
  }
  return ds;
}

void write_dataset(const fs::path& root, const Dataset& ds) {
  fs::create_directories(root / "frames");
  std::vector<CameraRecord> cams;
  for (const auto& f : ds.frames) {
    write_png(root / "frames" / frame_filename(f.frame_id), f.image);
    cams.push_back({f.frame_id, f.pose});
  }
  write_cameras(root / "cameras.jsonl", cams);
  Manifest m = ds.manifest;
  m.n_frames = ds.frames.size();
  write_text(root / "manifest.json", manifest_to_json(m).dump(2) + "\n");

  if (m.has(Modality::expression)) {
    std::ostringstream out;
    for (const auto& f : ds.frames) {
      if (!f.expression) throw DatasetError("frame " + std::to_string(f.frame_id) + " lacks expression", {f.frame_id});
      out << json{{"frame_id", f.frame_id}, {"expression", f.expression->storage()}}.dump() << '\n';
    }
    write_text(root / "expression.jsonl", out.str());
  }
  if (m.has(Modality::audio)) {
    if (!ds.audio) throw DatasetError("manifest lists audio but the dataset has no audio track");
    write_npy(root / "audio_features.npy", ds.audio->features);
  }
}

Tensor mean_image(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DatasetError("mean_image: no frames");
  Tensor mean = Tensor::zeros_like(dataset.frames.at(indices[0]).image);
  for (std::size_t i : indices) {
    const Tensor& img = dataset.frames.at(i).image;
    require_same_shape(mean, img, "mean_image");
    for (std::size_t p = 0; p < mean.size(); ++p) mean[p] += img[p];
  }
  for (double& v : mean.storage()) v /= static_cast<double>(indices.size());
  return mean;
}

namespace {

constexpr uint64_t kFnvOffset = 1469598103934665603ull;

uint64_t fnv1a(uint64_t h, const char* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

std::string hash_bytes(std::string_view bytes) { return hex64(fnv1a(kFnvOffset, bytes.data(), bytes.size())); }

std::string hash_file(const fs::path& path) { return hash_bytes(slurp(path)); }

std::string hash_directory(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  uint64_t h = kFnvOffset;
  for (const auto& file : files) {
    const std::string rel = fs::relative(file, root).generic_string();
    h = fnv1a(h, rel.data(), rel.size() + 1);
    const std::string bytes = slurp(file);
    h = fnv1a(h, bytes.data(), bytes.size());
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------
// NPY

void write_npy(const fs::path& path, const Tensor& t) {
  std::string shape = "(";
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i > 0) shape += ", ";
    shape += std::to_string(t.dim(i));
  }
  if (t.rank() == 1) shape += ",";
  shape += ")";
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape + ", }";
  const std::size_t prefix = 10;
  const std::size_t total = ((prefix + header.size() + 1 + 63) / 64) * 64;
  header.append(total - prefix - header.size() - 1, ' ');
  header += '\n';

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("\x93NUMPY", 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_npy(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0 || magic[6] != 1) {
    throw IoError(path.string() + ": not an NPY v1 file");
  }
  unsigned char len_bytes[2];
  in.read(reinterpret_cast<char*>(len_bytes), 2);
  const std::size_t len = len_bytes[0] | (static_cast<std::size_t>(len_bytes[1]) << 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (header.find("'<f8'") == std::string::npos) throw IoError(path.string() + ": only little-endian float64 is supported");
  if (header.find("'fortran_order': False") == std::string::npos) throw IoError(path.string() + ": fortran order unsupported");
  const auto open = header.find('(', header.find("'shape'"));
  const auto close = header.find(')', open);
  if (open == std::string::npos || close == std::string::npos) throw IoError(path.string() + ": malformed shape");
  Shape shape;
  std::stringstream dims(header.substr(open + 1, close - open - 1));
  std::string item;
  while (std::getline(dims, item, ',')) {
    if (item.find_first_not_of(' ') == std::string::npos) continue;
    shape.push_back(std::stoull(item));
  }
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw IoError(path.string() + ": truncated data");
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic identity

void SyntheticSceneSpec::validate() const {
  if (factors == 0) throw ValidationError("scene spec: need at least one factor");
  if (factors > kExpressionDim) throw ValidationError("scene spec: at most 76 factors fit the expression vector");
  if (blobs.empty()) throw ValidationError("scene spec: no blobs");
  if (height == 0 || width == 0) throw ValidationError("scene spec: resolution must be positive");
  if (!(fps > 0.0) || !(radius > 0.0) || !(focal > 0.0) || !(extent > 0.0)) {
    throw ValidationError("scene spec: fps, radius, focal and extent must be positive");
  }
  if (!(near >= 0.0 && near < far)) throw ValidationError("scene spec: require 0 <= near < far");
  if (gt_samples < 2) throw ValidationError("scene spec: gt_samples must be at least 2");
  if (!(factor_timescale > 0.0)) throw ValidationError("scene spec: factor_timescale must be positive");
  for (std::size_t b = 0; b < blobs.size(); ++b) {
    const Blob& blob = blobs[b];
    const std::string tag = "scene spec: blob " + std::to_string(b);
    if (blob.center_map.rows() != 3 || blob.center_map.cols() != static_cast<Eigen::Index>(factors) ||
        blob.scale_map.rows() != 3 || blob.scale_map.cols() != static_cast<Eigen::Index>(factors)) {
      throw ValidationError(tag + ": deformation maps must be 3 x m");
    }
    if (!(blob.density >= 0.0)) throw ValidationError(tag + ": density must be non-negative");
    if ((blob.color.array() < 0.0).any() || (blob.color.array() > 1.0).any()) {
      throw ValidationError(tag + ": color must lie in [0, 1]");
    }
    // Worst case over factors in [-1, 1]^m is the row-wise L1 norm of each map.
    const Eigen::Vector3d center_reach = blob.center_map.cwiseAbs().rowwise().sum();
    const Eigen::Vector3d scale_reach = blob.scale_map.cwiseAbs().rowwise().sum();
    const Eigen::Vector3d min_scale = blob.scale - scale_reach;
    if ((min_scale.array() <= 0.0).any()) throw ValidationError(tag + ": deformation can drive a scale to zero");
    const Eigen::Vector3d max_scale = blob.scale + scale_reach;
    const Eigen::Vector3d reach = blob.center.cwiseAbs() + center_reach + kContainmentSigmas * max_scale;
    if ((reach.array() > extent).any()) {
      throw ValidationError(tag + ": deformation can move the blob outside the render cube (reach " +
                            std::to_string(reach.maxCoeff()) + " > extent " + std::to_string(extent) + ")");
    }
  }
}

SyntheticSceneSpec default_scene_spec() {
  SyntheticSceneSpec spec;
  const auto m = static_cast<Eigen::Index>(spec.factors);
  auto blob = [m](Eigen::Vector3d c, Eigen::Vector3d s, Eigen::Vector3d col, double density) {
    Blob b;
    b.center = c;
    b.scale = s;
    b.color = col;
    b.density = density;
    b.center_map = Eigen::MatrixXd::Zero(3, m);
    b.scale_map = Eigen::MatrixXd::Zero(3, m);
    return b;
  };
  enum { kHead, kHair, kEyeL, kEyeR, kBrowL, kBrowR, kNose, kMouth };
  spec.blobs = {
      blob({0.0, 0.0, 0.0}, {0.30, 0.36, 0.28}, {0.86, 0.67, 0.53}, 6.0),
      blob({0.0, 0.18, -0.07}, {0.32, 0.24, 0.28}, {0.28, 0.18, 0.10}, 8.0),
      blob({-0.12, 0.08, 0.36}, {0.07, 0.05, 0.05}, {0.05, 0.05, 0.09}, 40.0),
      blob({0.12, 0.08, 0.36}, {0.07, 0.05, 0.05}, {0.05, 0.05, 0.09}, 40.0),
      blob({-0.12, 0.19, 0.36}, {0.08, 0.03, 0.04}, {0.22, 0.13, 0.08}, 40.0),
      blob({0.12, 0.19, 0.36}, {0.08, 0.03, 0.04}, {0.22, 0.13, 0.08}, 40.0),
      blob({0.0, -0.03, 0.40}, {0.05, 0.08, 0.05}, {0.93, 0.58, 0.48}, 30.0),
      blob({0.0, -0.19, 0.34}, {0.13, 0.045, 0.045}, {0.72, 0.10, 0.14}, 40.0),
  };
  auto& b = spec.blobs;
  b[kMouth].scale_map(1, 0) = 0.0366;   // mouth open
  b[kMouth].center_map(0, 1) = 0.165;   // mouth corner shift
  b[kEyeL].scale_map(1, 2) = 0.040;     // blink, left
  b[kEyeR].scale_map(1, 3) = 0.040;     // blink, right
  b[kBrowL].center_map(1, 4) = 0.143;   // brow raise, left
  b[kBrowR].center_map(1, 5) = 0.137;   // brow raise, right
  b[kEyeL].center_map(0, 6) = 0.088;    // gaze, horizontal
  b[kEyeR].center_map(0, 6) = 0.088;
  b[kEyeL].center_map(1, 7) = 0.060;    // gaze, vertical
  b[kEyeR].center_map(1, 7) = 0.060;
  b[kMouth].center_map(1, 8) = 0.063;   // jaw
  b[kHead].scale_map(0, 9) = 0.0245;    // cheeks
  b[kHair].center_map(1, 10) = 0.10;    // hair bounce
  b[kHair].scale_map(1, 10) = 0.04;
  b[kHair].center_map(0, 11) = 0.14;    // hair sway
  b[kNose].scale_map(1, 12) = 0.056;    // nose scrunch
  b[kNose].center_map(1, 12) = 0.045;
  b[kMouth].scale_map(0, 13) = 0.092;   // mouth width
  b[kHead].scale_map(1, 14) = 0.035;    // face length
  b[kMouth].center_map(2, 15) = 0.164;  // pout
  spec.near = 1.9;
  spec.far = 3.5;
  return spec;
}

namespace {

json vec3_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ValidationError("scene spec: expected a 3-vector");
  return {v[0], v[1], v[2]};
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows, cols);
  if (j.is_null()) return m;
  if (static_cast<Eigen::Index>(j.size()) != rows) throw ValidationError("scene spec: deformation map must have 3 rows");
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = j.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ValidationError("scene spec: deformation map must have m columns");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace

json to_json(const SyntheticSceneSpec& spec) {
  json j;
  j["factors"] = spec.factors;
  j["radius"] = spec.radius;
  j["yaw_amplitude"] = spec.yaw_amplitude;
  j["pitch_amplitude"] = spec.pitch_amplitude;
  j["yaw_period"] = spec.yaw_period;
  j["pitch_period"] = spec.pitch_period;
  j["focal"] = spec.focal;
  j["factor_timescale"] = spec.factor_timescale;
  j["factor_gain"] = spec.factor_gain;
  j["height"] = spec.height;
  j["width"] = spec.width;
  j["fps"] = spec.fps;
  j["near"] = spec.near;
  j["far"] = spec.far;
  j["extent"] = spec.extent;
  j["background"] = to_string(spec.background);
  j["gt_samples"] = spec.gt_samples;
  j["seed"] = spec.seed;
  json blobs = json::array();
  for (const auto& b : spec.blobs) {
    blobs.push_back({{"center", vec3_json(b.center)},
                     {"scale", vec3_json(b.scale)},
                     {"color", vec3_json(b.color)},
                     {"density", b.density},
                     {"center_map", matrix_json(b.center_map)},
                     {"scale_map", matrix_json(b.scale_map)}});
  }
  j["blobs"] = blobs;
  return j;
}

SyntheticSceneSpec scene_spec_from_json(const json& j) {
  static const std::set<std::string> kKeys{"factors",  "radius", "yaw_amplitude", "pitch_amplitude", "yaw_period",
                                           "pitch_period", "focal", "factor_timescale", "factor_gain", "height",
                                           "width", "fps", "near", "far", "extent", "background", "gt_samples",
                                           "seed", "blobs"};
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.count(key)) throw ValidationError("scene spec: unknown key '" + key + "'");
  }
  SyntheticSceneSpec spec = default_scene_spec();
  try {
    spec.factors = j.value("factors", spec.factors);
    spec.radius = j.value("radius", spec.radius);
    spec.yaw_amplitude = j.value("yaw_amplitude", spec.yaw_amplitude);
    spec.pitch_amplitude = j.value("pitch_amplitude", spec.pitch_amplitude);
    spec.yaw_period = j.value("yaw_period", spec.yaw_period);
    spec.pitch_period = j.value("pitch_period", spec.pitch_period);
    spec.focal = j.value("focal", spec.focal);
    spec.factor_timescale = j.value("factor_timescale", spec.factor_timescale);
    spec.factor_gain = j.value("factor_gain", spec.factor_gain);
    spec.height = j.value("height", spec.height);
    spec.width = j.value("width", spec.width);
    spec.fps = j.value("fps", spec.fps);
    spec.near = j.value("near", spec.near);
    spec.far = j.value("far", spec.far);
    spec.extent = j.value("extent", spec.extent);
    spec.background = parse_background(j.value("background", std::string(to_string(spec.background))));
    spec.gt_samples = j.value("gt_samples", spec.gt_samples);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("blobs")) {
      spec.blobs.clear();
      const auto m = static_cast<Eigen::Index>(spec.factors);
      for (const auto& jb : j.at("blobs")) {
        Blob b;
        b.center = vec3_from(jb.at("center"));
        b.scale = vec3_from(jb.at("scale"));
        b.color = vec3_from(jb.at("color"));
        b.density = jb.at("density").get<double>();
        b.center_map = matrix_from(jb.value("center_map", json()), 3, m);
        b.scale_map = matrix_from(jb.value("scale_map", json()), 3, m);
        spec.blobs.push_back(std::move(b));
      }
    } else if (spec.factors != default_scene_spec().factors) {
      throw ValidationError("scene spec: changing 'factors' requires explicit blobs with matching maps");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scene spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

namespace {

struct PosedBlob {
  Eigen::Vector3d center;
  Eigen::Vector3d inv_scale;
  Eigen::Vector3d color;
  double density;
};

std::vector<PosedBlob> deform(const SyntheticSceneSpec& spec, const Eigen::VectorXd& factors) {
  if (static_cast<std::size_t>(factors.size()) != spec.factors) {
    throw ShapeError("synthetic scene: factor vector has " + std::to_string(factors.size()) + " entries, expected " +
                     std::to_string(spec.factors));
  }
  std::vector<PosedBlob> out;
  out.reserve(spec.blobs.size());
  for (const auto& b : spec.blobs) {
    const Eigen::Vector3d scale = b.scale + b.scale_map * factors;
    out.push_back({b.center + b.center_map * factors, scale.cwiseInverse(), b.color, b.density});
  }
  return out;
}

void eval_blobs(const std::vector<PosedBlob>& blobs, const Eigen::Vector3d& p, double& sigma, Eigen::Vector3d& color) {
  sigma = 0.0;
  color.setZero();
  for (const auto& b : blobs) {
    const Eigen::Vector3d z = (p - b.center).cwiseProduct(b.inv_scale);
    const double s = b.density * std::exp(-0.5 * z.squaredNorm());
    sigma += s;
    color += s * b.color;
  }
  if (sigma > 0.0) color /= sigma;
}

}  // namespace

void analytic_field(const SyntheticSceneSpec& spec, const Eigen::VectorXd& factors, const Eigen::Vector3d& point,
                    double& sigma, Eigen::Vector3d& color) {
  eval_blobs(deform(spec, factors), point, sigma, color);
}

RenderOutput render_analytic(const SyntheticSceneSpec& spec, const Eigen::VectorXd& factors, const CameraPose& pose,
                             std::size_t n_samples) {
  const auto blobs = deform(spec, factors);
  RenderConfig cfg;
  cfg.n_samples = n_samples;
  cfg.near = spec.near;
  cfg.far = spec.far;
  cfg.background = spec.background;
  cfg.raw_height = cfg.output_height = spec.height;
  cfg.raw_width = cfg.output_width = spec.width;
  const RayBundle rays = generate_rays(pose, spec.height, spec.width, spec.near, spec.far);
  const Tensor depths = sample_along_rays(rays, cfg, 0);
  const std::size_t n = rays.count();
  Tensor sigmas({n, n_samples});
  Tensor colors({n, n_samples, 3});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < n_samples; ++i) {
      const Eigen::Vector3d p = rays.origins[r] + depths[r * n_samples + i] * rays.directions[r];
      double sigma = 0.0;
      Eigen::Vector3d color;
      eval_blobs(blobs, p, sigma, color);
      sigmas[r * n_samples + i] = sigma;
      for (int c = 0; c < 3; ++c) colors[(r * n_samples + i) * 3 + static_cast<std::size_t>(c)] = color[c];
    }
  }
  const CompositeResult comp = composite(sigmas, colors, depths, cfg);
  RenderOutput out;
  out.rgb = Tensor(Shape{spec.height, spec.width, 3}, comp.rgb.storage());
  out.depth = Tensor(Shape{spec.height, spec.width}, comp.depth.storage());
  out.opacity = Tensor(Shape{spec.height, spec.width}, comp.opacity.storage());
  return out;
}

CameraPose synthetic_pose(const SyntheticSceneSpec& spec, double time) {
  // Orbit phases are derived from the seed so different identities move differently.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double yaw_phase = phase(rng);
  const double pitch_phase = phase(rng);
  const double yaw = spec.yaw_amplitude * std::sin(2.0 * std::numbers::pi * time / spec.yaw_period + yaw_phase);
  const double pitch = spec.pitch_amplitude * std::sin(2.0 * std::numbers::pi * time / spec.pitch_period + pitch_phase);
  const Eigen::Vector3d eye = spec.radius * Eigen::Vector3d(std::sin(yaw) * std::cos(pitch), std::sin(pitch),
                                                            std::cos(yaw) * std::cos(pitch));
  CameraPose pose;
  pose.intrinsics = Intrinsics{spec.focal, spec.focal, 0.5, 0.5, 0.0};
  pose.extrinsics = look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY());
  return pose;
}

SyntheticDataset synth_generate(const SyntheticSceneSpec& spec, std::size_t n_frames) {
  spec.validate();
  if (n_frames == 0) throw ValidationError("synth_generate: n_frames must be positive");
  const auto m = static_cast<Eigen::Index>(spec.factors);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Factor trajectories: mean-reverting walk x, low-passed into y, squashed.
  const double dt = 1.0 / spec.fps;
  const double a = std::exp(-dt / spec.factor_timescale);
  const double noise = std::sqrt(1.0 - a * a);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  auto advance = [&] {
    for (Eigen::Index i = 0; i < m; ++i) {
      x[i] = a * x[i] + noise * normal(rng);
      y[i] = a * y[i] + (1.0 - a) * x[i];
    }
  };
  const auto burn_in = static_cast<std::size_t>(std::ceil(5.0 * spec.factor_timescale / dt));
  for (std::size_t i = 0; i < burn_in; ++i) advance();

  SyntheticDataset out;
  out.factors.reserve(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    advance();
    out.factors.push_back((spec.factor_gain * y).array().tanh().matrix());
  }

  out.audio_encoding = Eigen::MatrixXd(static_cast<Eigen::Index>(kAudioFeatures), m);
  for (Eigen::Index r = 0; r < out.audio_encoding.rows(); ++r) {
    for (Eigen::Index c = 0; c < m; ++c) out.audio_encoding(r, c) = normal(rng);
  }

  Dataset& ds = out.dataset;
  ds.manifest.n_frames = n_frames;
  ds.manifest.height = spec.height;
  ds.manifest.width = spec.width;
  ds.manifest.fps = spec.fps;
  ds.manifest.near = spec.near;
  ds.manifest.far = spec.far;
  ds.manifest.extent = spec.extent;
  ds.manifest.background = spec.background;
  ds.manifest.modalities = {Modality::image, Modality::expression, Modality::audio};

  for (std::size_t f = 0; f < n_frames; ++f) {
    FrameSample s;
    s.frame_id = static_cast<int64_t>(f);
    s.timestamp = static_cast<double>(f) / spec.fps;
    s.pose = synthetic_pose(spec, s.timestamp);
    s.image = quantize_8bit(render_analytic(spec, out.factors[f], s.pose, spec.gt_samples).rgb);
    Tensor expr({kExpressionDim});
    for (Eigen::Index i = 0; i < m; ++i) expr[static_cast<std::size_t>(i)] = out.factors[f][i];
    s.expression = std::move(expr);
    ds.frames.push_back(std::move(s));
  }

  // Audio: one clip per 20 ms over the frames' time span; each clip encodes the
  // factors linearly interpolated to the clip center.
  const double duration = static_cast<double>(n_frames) / spec.fps;
  const auto n_clips = static_cast<std::size_t>(std::llround(duration / kClipDuration));
  AudioFeatureTrack track;
  track.features = Tensor({std::max<std::size_t>(n_clips, 1), kAudioFeatures});
  for (std::size_t c = 0; c < track.clips(); ++c) {
    const double t = (static_cast<double>(c) + 0.5) * kClipDuration;
    const double pos = std::clamp(t * spec.fps, 0.0, static_cast<double>(n_frames - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(pos));
    const std::size_t i1 = std::min(i0 + 1, n_frames - 1);
    const double w = pos - static_cast<double>(i0);
    const Eigen::VectorXd f = (1.0 - w) * out.factors[i0] + w * out.factors[i1];
    const Eigen::VectorXd feat = out.audio_encoding * f;
    for (std::size_t k = 0; k < kAudioFeatures; ++k) track.features[c * kAudioFeatures + k] = feat[static_cast<Eigen::Index>(k)];
  }
  std::vector<double> times;
  for (const auto& s : ds.frames) times.push_back(s.timestamp);
  auto windows = window_audio(track, times, ds.manifest.audio_alignment);
  for (std::size_t f = 0; f < n_frames; ++f) ds.frames[f].audio_window = std::move(windows[f]);
  ds.audio = std::move(track);
  return out;
}

void write_synthetic(const fs::path& root, const SyntheticDataset& synthetic) {
  write_dataset(root, synthetic.dataset);
  std::ostringstream out;
  for (std::size_t f = 0; f < synthetic.factors.size(); ++f) {
    const auto& v = synthetic.factors[f];
    out << json{{"frame_id", synthetic.dataset.frames[f].frame_id}, {"factors", std::vector<double>(v.data(), v.data() + v.size())}}.dump()
        << '\n';
  }
  write_text(root / "factors.jsonl", out.str());
}

}  // namespace avatar
