#pragma once

// Pinhole camera model.
//
// Conventions used throughout the library:
//  * Extrinsics are camera-to-world: `rotation` columns are the camera axes
//    expressed in world coordinates and `translation` is the camera center.
//  * The camera looks down its local -Z axis; +X is right and +Y is up.
//  * Intrinsics are normalized by the image size: fx and cx are in units of the
//    image width, fy and cy in units of the image height, so one pose renders
//    at any resolution. Image rows grow downward.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace avatar {

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  double skew = 0.0;

  void validate() const;
  Eigen::Matrix3d matrix() const;
  static Intrinsics from_matrix(const Eigen::Matrix3d& k);
};

struct Extrinsics {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  void validate() const;
  /// 4x4 homogeneous camera-to-world matrix with bottom row [0, 0, 0, 1].
  Eigen::Matrix4d matrix() const;
  static Extrinsics from_matrix(const Eigen::Matrix4d& e);

  Eigen::Vector3d center() const { return translation; }
  Eigen::Vector3d forward() const { return -rotation.col(2); }
};

struct CameraPose {
  Intrinsics intrinsics;
  Extrinsics extrinsics;

  void validate() const {
    intrinsics.validate();
    extrinsics.validate();
  }
};

inline constexpr std::size_t kCameraVectorSize = 25;
using CameraVector = std::array<double, kCameraVectorSize>;

/// Row-major flattened 4x4 extrinsic matrix followed by the row-major 3x3
/// intrinsic matrix. Values are passed through unnormalized.
CameraVector flatten_camera(const CameraPose& pose);

/// Inverse of flatten_camera. Validates the result.
CameraPose unflatten_camera(std::span<const double, kCameraVectorSize> values);

struct RayBundle {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Eigen::Vector3d> origins;     // row-major, height * width
  std::vector<Eigen::Vector3d> directions;  // unit length
  double near = 0.0;
  double far = 1.0;

  std::size_t count() const noexcept { return origins.size(); }
};

/// One ray through every pixel center.
RayBundle generate_rays(const CameraPose& pose, std::size_t height, std::size_t width, double near, double far);

/// Camera at `eye` whose forward (-Z) axis points at `target`.
Extrinsics look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up);

/// Rotates a camera-to-world pose about the world +Y axis through the origin.
/// When `radius` is positive the camera center is rescaled to that distance
/// from the origin. angle == 0 and radius <= 0 returns the pose unchanged.
Extrinsics orbit_about_up(const Extrinsics& pose, double angle, double radius = 0.0);

/// Projects a world point into continuous pixel coordinates (column, row).
/// Returns false for points behind the camera.
bool project_point(const CameraPose& pose, std::size_t height, std::size_t width, const Eigen::Vector3d& world,
                   Eigen::Vector2d& pixel);

// cameras.jsonl: one JSON object per line,
//   {"frame_id": <int>, "K": [9 floats, row-major], "E": [16 floats, row-major]}
// K uses normalized intrinsics, E is camera-to-world.
struct CameraRecord {
  int64_t frame_id = 0;
  CameraPose pose;
};

std::vector<CameraRecord> read_cameras(const std::filesystem::path& path);
void write_cameras(const std::filesystem::path& path, std::span<const CameraRecord> records);

}  // namespace avatar
