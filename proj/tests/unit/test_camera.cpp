#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "avatar/camera.hpp"
#include "avatar/errors.hpp"

using namespace avatar;

namespace {

CameraPose identity_pose() {
  CameraPose p;
  p.intrinsics = Intrinsics{1.0, 1.0, 0.0, 0.0, 0.0};
  return p;
}

Eigen::Matrix3d random_rotation(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

}  // namespace

TEST_CASE("flatten_camera: identity pose gives flattened identities") {
  // fx = fy = 1 with the principal point at the origin makes K the identity.
  const CameraVector v = flatten_camera(identity_pose());
  REQUIRE(v.size() == 25);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(v[r * 4 + c] == (r == c ? 1.0 : 0.0));
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) CHECK(v[16 + r * 3 + c] == (r == c ? 1.0 : 0.0));
  }
}

TEST_CASE("flatten_camera: translation lands at positions 3, 7, 11") {
  CameraPose p;
  p.extrinsics.translation = {0.0, 0.0, 2.0};
  const CameraVector v = flatten_camera(p);
  CHECK(v[3] == 0.0);
  CHECK(v[7] == 0.0);
  CHECK(v[11] == 2.0);
  CHECK(v[15] == 1.0);
}

TEST_CASE("flatten_camera: rejects a non-orthonormal rotation") {
  CameraPose p;
  p.extrinsics.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(flatten_camera(p), ValidationError);
  p.extrinsics.rotation = -Eigen::Matrix3d::Identity();  // det = -1
  CHECK_THROWS_AS(flatten_camera(p), ValidationError);
}

TEST_CASE("flatten/unflatten round trip is the identity") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    CameraPose p;
    p.extrinsics.rotation = random_rotation(seed);
    p.extrinsics.translation = {0.3 * seed, -1.0, 2.5};
    p.intrinsics = Intrinsics{1.5 + 0.1 * seed, 1.7, 0.45, 0.55, 0.0};
    const CameraVector v = flatten_camera(p);
    const CameraVector again = flatten_camera(unflatten_camera(v));
    CHECK(v == again);
  }
}

TEST_CASE("generate_rays: on-axis pixel looks down -Z") {
  CameraPose p;
  p.intrinsics = Intrinsics{1.0, 1.0, 0.5, 0.5, 0.0};
  const RayBundle rays = generate_rays(p, 1, 1, 0.5, 2.0);
  REQUIRE(rays.count() == 1);
  CHECK(rays.directions[0].isApprox(Eigen::Vector3d(0, 0, -1), 1e-12));
  CHECK(rays.origins[0].isZero());
}

TEST_CASE("generate_rays: unit directions, shared origin, rotation equivariance") {
  CameraPose p;
  p.intrinsics = Intrinsics{1.2, 0.9, 0.4, 0.6, 0.0};
  p.extrinsics.translation = {0.5, -0.2, 3.0};
  const RayBundle base = generate_rays(p, 7, 9, 1.0, 4.0);
  const Eigen::Matrix3d r = random_rotation(42);
  CameraPose rotated = p;
  rotated.extrinsics.rotation = r * p.extrinsics.rotation;
  const RayBundle turned = generate_rays(rotated, 7, 9, 1.0, 4.0);
  REQUIRE(base.count() == 63);
  for (std::size_t i = 0; i < base.count(); ++i) {
    CHECK(std::abs(base.directions[i].norm() - 1.0) < 1e-6);
    CHECK(base.origins[i] == p.extrinsics.translation);
    CHECK((turned.directions[i] - r * base.directions[i]).norm() < 1e-12);
  }
}

TEST_CASE("generate_rays: degenerate intrinsics and bad ranges are rejected") {
  CameraPose p;
  p.intrinsics.fx = 0.0;
  CHECK_THROWS_AS(generate_rays(p, 4, 4, 0.1, 1.0), ValidationError);
  p.intrinsics.fx = 1.0;
  p.intrinsics.fy = -1.0;
  CHECK_THROWS_AS(generate_rays(p, 4, 4, 0.1, 1.0), ValidationError);
  p.intrinsics.fy = 1.0;
  CHECK_THROWS_AS(generate_rays(p, 4, 4, 1.0, 1.0), ValidationError);
  CHECK_THROWS_AS(generate_rays(p, 0, 4, 0.1, 1.0), ValidationError);
}

TEST_CASE("pixel rows grow downward and columns to the right") {
  CameraPose p;
  const RayBundle rays = generate_rays(p, 2, 2, 0.1, 1.0);
  CHECK(rays.directions[0].y() > 0.0);  // top row looks up
  CHECK(rays.directions[2].y() < 0.0);
  CHECK(rays.directions[0].x() < 0.0);  // left column looks left
  CHECK(rays.directions[1].x() > 0.0);
}

TEST_CASE("look_at: orthonormal, right-handed, forward points at the target") {
  const Extrinsics e = look_at({0, 0, 1}, {0, 0, 0}, {0, 1, 0});
  CHECK((e.rotation.transpose() * e.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(std::abs(e.rotation.determinant() - 1.0) < 1e-12);
  CHECK(e.forward().isApprox(Eigen::Vector3d(0, 0, -1), 1e-12));
  CHECK_NOTHROW(e.validate());
}

TEST_CASE("look_at: degenerate inputs throw") {
  CHECK_THROWS_AS(look_at({1, 2, 3}, {1, 2, 3}, {0, 1, 0}), ValidationError);
  CHECK_THROWS_AS(look_at({0, 2, 0}, {0, 0, 0}, {0, 1, 0}), ValidationError);
}

TEST_CASE("look_at on a circle keeps the camera center at radius r") {
  const double r = 2.7;
  for (int i = 0; i < 36; ++i) {
    const double a = 2.0 * std::numbers::pi * i / 36.0;
    const Eigen::Vector3d eye(r * std::sin(a), 0.3, r * std::cos(a));
    const Extrinsics e = look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY());
    CHECK(std::abs(e.center().norm() - eye.norm()) < 1e-6);
    CHECK((e.forward() + eye.normalized()).norm() < 1e-9);
    CHECK_NOTHROW(e.validate());
  }
}

TEST_CASE("orbit_about_up: zero angle is exact, rotation preserves radius") {
  const Extrinsics e = look_at({0.4, 0.2, 2.5}, {0, 0, 0}, {0, 1, 0});
  const Extrinsics same = orbit_about_up(e, 0.0);
  CHECK(same.rotation == e.rotation);
  CHECK(same.translation == e.translation);
  const Extrinsics moved = orbit_about_up(e, 0.7);
  CHECK(std::abs(moved.center().norm() - e.center().norm()) < 1e-12);
  CHECK(std::abs(moved.center().y() - e.center().y()) < 1e-12);
  const Extrinsics far = orbit_about_up(e, 0.7, 4.0);
  CHECK(std::abs(far.center().norm() - 4.0) < 1e-12);
}

TEST_CASE("project_point inverts ray generation at pixel centers") {
  CameraPose p;
  p.intrinsics = Intrinsics{1.3, 1.1, 0.48, 0.52, 0.0};
  p.extrinsics = look_at({0.5, 0.4, 2.6}, {0, 0, 0}, {0, 1, 0});
  const std::size_t h = 5, w = 6;
  const RayBundle rays = generate_rays(p, h, w, 1.0, 4.0);
  for (std::size_t i = 0; i < rays.count(); ++i) {
    Eigen::Vector2d px;
    REQUIRE(project_point(p, h, w, rays.origins[i] + 2.0 * rays.directions[i], px));
    CHECK(std::abs(px.x() - static_cast<double>(i % w)) < 1e-9);
    CHECK(std::abs(px.y() - static_cast<double>(i / w)) < 1e-9);
  }
  Eigen::Vector2d px;
  CHECK_FALSE(project_point(p, h, w, p.extrinsics.center() - p.extrinsics.forward(), px));
}

TEST_CASE("camera file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "avatar_cameras_test.jsonl";
  std::vector<CameraRecord> recs;
  for (int i = 0; i < 3; ++i) {
    CameraPose p;
    p.extrinsics = look_at({0.1 * i, 0.2, 2.0}, {0, 0, 0}, {0, 1, 0});
    p.intrinsics = Intrinsics{2.0, 2.0, 0.5, 0.5, 0.0};
    recs.push_back({i, p});
  }
  write_cameras(path, recs);
  const auto back = read_cameras(path);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[i].frame_id == i);
    CHECK(flatten_camera(back[i].pose) == flatten_camera(recs[i].pose));
  }
  std::filesystem::remove(path);
}
