#include "avatar/camera.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <json.hpp>

#include "avatar/errors.hpp"

namespace avatar {

namespace {

constexpr double kRotationTolerance = 1e-6;

using json = nlohmann::json;

}  // namespace

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ValidationError("intrinsics: focal lengths must be positive (fx=" + std::to_string(fx) +
                          ", fy=" + std::to_string(fy) + ")");
  }
  if (!(cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0)) {
    throw ValidationError("intrinsics: principal point must lie in [0, 1]");
  }
  if (!std::isfinite(skew)) throw ValidationError("intrinsics: skew is not finite");
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Intrinsics Intrinsics::from_matrix(const Eigen::Matrix3d& k) {
  if (k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0 || k(2, 2) != 1.0) {
    throw ValidationError("intrinsics: matrix must be upper triangular with K[2][2] = 1");
  }
  Intrinsics in{k(0, 0), k(1, 1), k(0, 2), k(1, 2), k(0, 1)};
  in.validate();
  return in;
}

void Extrinsics::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw ValidationError("extrinsics: non-finite entries");
  }
  const double ortho_err = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > kRotationTolerance) {
    throw ValidationError("extrinsics: rotation is not orthonormal (max |R^T R - I| = " + std::to_string(ortho_err) +
                          ")");
  }
  const double det = rotation.determinant();
  if (std::abs(det - 1.0) > kRotationTolerance) {
    throw ValidationError("extrinsics: rotation determinant is " + std::to_string(det) + ", expected +1");
  }
}

Eigen::Matrix4d Extrinsics::matrix() const {
  Eigen::Matrix4d e = Eigen::Matrix4d::Identity();
  e.topLeftCorner<3, 3>() = rotation;
  e.topRightCorner<3, 1>() = translation;
  return e;
}

Extrinsics Extrinsics::from_matrix(const Eigen::Matrix4d& e) {
  if (e(3, 0) != 0.0 || e(3, 1) != 0.0 || e(3, 2) != 0.0 || e(3, 3) != 1.0) {
    throw ValidationError("extrinsics: bottom row must be [0, 0, 0, 1]");
  }
  Extrinsics ex;
  ex.rotation = e.topLeftCorner<3, 3>();
  ex.translation = e.topRightCorner<3, 1>();
  ex.validate();
  return ex;
}

CameraVector flatten_camera(const CameraPose& pose) {
  pose.validate();
  CameraVector out{};
  const Eigen::Matrix4d e = pose.extrinsics.matrix();
  const Eigen::Matrix3d k = pose.intrinsics.matrix();
  std::size_t n = 0;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out[n++] = e(r, c);
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out[n++] = k(r, c);
  }
  return out;
}

CameraPose unflatten_camera(std::span<const double, kCameraVectorSize> values) {
  Eigen::Matrix4d e;
  Eigen::Matrix3d k;
  std::size_t n = 0;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) e(r, c) = values[n++];
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) k(r, c) = values[n++];
  }
  return CameraPose{Intrinsics::from_matrix(k), Extrinsics::from_matrix(e)};
}

RayBundle generate_rays(const CameraPose& pose, std::size_t height, std::size_t width, double near, double far) {
  pose.validate();
  if (height == 0 || width == 0) throw ValidationError("generate_rays: image must be at least 1x1");
  if (!(near >= 0.0 && near < far)) throw ValidationError("generate_rays: require 0 <= near < far");

  const Eigen::Matrix3d k_inv = pose.intrinsics.matrix().inverse();
  const Eigen::Matrix3d& rot = pose.extrinsics.rotation;

  RayBundle rays;
  rays.height = height;
  rays.width = width;
  rays.near = near;
  rays.far = far;
  rays.origins.assign(height * width, pose.extrinsics.translation);
  rays.directions.resize(height * width);
  for (std::size_t row = 0; row < height; ++row) {
    const double v = (static_cast<double>(row) + 0.5) / static_cast<double>(height);
    for (std::size_t col = 0; col < width; ++col) {
      const double u = (static_cast<double>(col) + 0.5) / static_cast<double>(width);
      // Back-project in the image-down, +Z-forward frame, then flip Y and Z.
      const Eigen::Vector3d cv = k_inv * Eigen::Vector3d(u, v, 1.0);
      const Eigen::Vector3d cam(cv.x(), -cv.y(), -cv.z());
      rays.directions[row * width + col] = (rot * cam).normalized();
    }
  }
  return rays;
}

Extrinsics look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d delta = target - eye;
  if (delta.norm() <= 1e-12) throw ValidationError("look_at: eye and target coincide");
  const Eigen::Vector3d forward = delta.normalized();
  const Eigen::Vector3d side = forward.cross(up);
  if (side.norm() <= 1e-9 * std::max(1.0, up.norm())) {
    throw ValidationError("look_at: up vector is parallel to the viewing direction (degenerate basis)");
  }
  const Eigen::Vector3d right = side.normalized();
  const Eigen::Vector3d true_up = right.cross(forward);

  Extrinsics ex;
  ex.rotation.col(0) = right;
  ex.rotation.col(1) = true_up;
  ex.rotation.col(2) = -forward;
  ex.translation = eye;
  ex.validate();
  return ex;
}

Extrinsics orbit_about_up(const Extrinsics& pose, double angle, double radius) {
  Extrinsics out = pose;
  if (angle != 0.0) {
    const Eigen::Matrix3d spin = Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitY()).toRotationMatrix();
    out.rotation = spin * pose.rotation;
    out.translation = spin * pose.translation;
  }
  if (radius > 0.0) {
    const double current = out.translation.norm();
    if (current <= 0.0) throw ValidationError("orbit_about_up: camera sits at the orbit center");
    out.translation *= radius / current;
  }
  return out;
}

bool project_point(const CameraPose& pose, std::size_t height, std::size_t width, const Eigen::Vector3d& world,
                   Eigen::Vector2d& pixel) {
  const Eigen::Vector3d cam = pose.extrinsics.rotation.transpose() * (world - pose.extrinsics.translation);
  if (cam.z() >= 0.0) return false;
  const Eigen::Vector3d cv(cam.x(), -cam.y(), -cam.z());
  const Eigen::Vector3d uv = pose.intrinsics.matrix() * (cv / cv.z());
  pixel.x() = uv.x() * static_cast<double>(width) - 0.5;
  pixel.y() = uv.y() * static_cast<double>(height) - 0.5;
  return true;
}

std::vector<CameraRecord> read_cameras(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open camera file " + path.string());
  std::vector<CameraRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      const auto k = j.at("K").get<std::vector<double>>();
      const auto e = j.at("E").get<std::vector<double>>();
      if (k.size() != 9 || e.size() != 16) throw ShapeError("K needs 9 values and E needs 16");
      CameraVector flat{};
      std::copy(e.begin(), e.end(), flat.begin());
      std::copy(k.begin(), k.end(), flat.begin() + 16);
      records.push_back({j.at("frame_id").get<int64_t>(), unflatten_camera(flat)});
    } catch (const json::exception& ex) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    } catch (const Error& ex) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return records;
}

void write_cameras(const std::filesystem::path& path, std::span<const CameraRecord> records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write camera file " + path.string());
  for (const auto& rec : records) {
    const CameraVector flat = flatten_camera(rec.pose);
    json j;
    j["frame_id"] = rec.frame_id;
    j["K"] = std::vector<double>(flat.begin() + 16, flat.end());
    j["E"] = std::vector<double>(flat.begin(), flat.begin() + 16);
    out << j.dump() << '\n';
  }
}

}  // namespace avatar
