#include "avl/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "avl/errors.hpp"
#include "avl/rng.hpp"

namespace avl {

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

Pose::Pose() : position_(Vec3::Zero()), orientation_(Quat::Identity()) {}

// Already-unit input is kept bit-exact so serialized poses round-trip.
Pose::Pose(const Vec3& position, const Quat& orientation)
    : position_(position),
      orientation_(std::abs(orientation.squaredNorm() - 1.0) <= 1e-15 ? orientation
                                                                       : orientation.normalized()) {}

Pose Pose::from_yaw_pitch(const Vec3& position, double yaw_deg,
                          double pitch_deg) {
  const double yaw = deg2rad(yaw_deg);
  const double pitch = deg2rad(pitch_deg);
  const Vec3 forward(std::cos(pitch) * std::cos(yaw),
                     std::cos(pitch) * std::sin(yaw), std::sin(pitch));
  const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return Pose(position, Quat(r));
}

Vec3 Pose::forward() const { return orientation_ * Vec3::UnitZ(); }

Pose Pose::inverse() const {
  const Quat qi = orientation_.conjugate();
  return Pose(-(qi * position_), qi);
}

Vec3 Pose::to_camera(const Vec3& world_point) const {
  return orientation_.conjugate() * (world_point - position_);
}

Vec3 Pose::to_world(const Vec3& camera_point) const {
  return orientation_ * camera_point + position_;
}

Pose pose_compose(const Pose& a, const Pose& b) {
  return Pose(a.position() + a.orientation() * b.position(),
              a.orientation() * b.orientation());
}

double rotation_geodesic_deg(const Quat& a, const Quat& b) {
  const Quat d = a.conjugate() * b;
  const double v = d.vec().norm();
  const double w = std::abs(d.w());
  return rad2deg(2.0 * std::atan2(v, w));
}

CameraModel::CameraModel(double fx, double fy, double cx, double cy,
                         int width, int height, double near_m, double far_m)
    : fx_(fx),
      fy_(fy),
      cx_(cx),
      cy_(cy),
      width_(width),
      height_(height),
      near_(near_m),
      far_(far_m) {
  if (!(fx > 0.0 && fy > 0.0)) throw ConfigError("camera: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("camera: image size must be positive");
  if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height)) {
    throw ConfigError("camera: principal point outside the image");
  }
  if (!(near_m > 0.0 && near_m < far_m)) throw ConfigError("camera: need 0 < near < far");
}

CameraModel CameraModel::default_camera() {
  return CameraModel(400.0, 400.0, 320.0, 240.0, 640, 480, 0.1, 15.0);
}

double CameraModel::horizontal_fov_deg() const {
  return rad2deg(std::atan(cx_ / fx_) + std::atan((width_ - cx_) / fx_));
}

double CameraModel::half_diagonal_fov_deg() const {
  const double x = std::max(cx_, width_ - cx_) / fx_;
  const double y = std::max(cy_, height_ - cy_) / fy_;
  return rad2deg(std::atan(std::hypot(x, y)));
}

std::optional<Vec2> project(const Vec3& point, const Pose& camera_pose,
                            const CameraModel& cam) {
  const Vec3 pc = camera_pose.to_camera(point);
  if (pc.z() < cam.near_m() || pc.z() > cam.far_m()) return std::nullopt;
  const Vec2 px = project_camera_point(pc, cam);
  if (!cam.in_image(px)) return std::nullopt;
  return px;
}

double angle_between_deg(const Vec3& a, const Vec3& b) {
  return rad2deg(std::atan2(a.cross(b).norm(), a.dot(b)));
}

double principal_axis_angle_deg(const Pose& camera_pose, const Vec3& point) {
  const Vec3 ray = point - camera_pose.position();
  if (ray.squaredNorm() == 0.0) {
    throw DegenerateInputError("principal_axis_angle: point coincides with camera center");
  }
  return angle_between_deg(camera_pose.forward(), ray);
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) return Mat3::Identity() + skew(omega);
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Eigen::Matrix<double, 2, 6> pose_projection_jacobian(const Vec3& pc, const CameraModel& cam) {
  const double iz = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> dpi;
  dpi << cam.fx() * iz, 0.0, -cam.fx() * pc.x() * iz * iz,
         0.0, cam.fy() * iz, -cam.fy() * pc.y() * iz * iz;
  // d pc / d rotation = [pc]x, d pc / d translation = -I.
  Eigen::Matrix<double, 2, 6> j;
  j.leftCols<3>() = dpi * skew(pc);
  j.rightCols<3>() = -dpi;
  return j;
}

Pose retract(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  const Mat3 r = pose.rotation();
  return Pose(pose.position() + r * delta.tail<3>(),
              Quat(r * so3_exp(delta.head<3>())));
}

std::vector<ViewpointCandidate> sample_viewpoints(const Vec3& position,
                                                  int n, double pitch_min_deg,
                                                  double pitch_max_deg,
                                                  std::uint64_t seed) {
  if (n <= 0) throw EmptyRequestError("sample_viewpoints: n must be at least 1");
  if (pitch_min_deg > pitch_max_deg) {
    throw ConfigError("sample_viewpoints: pitch_min exceeds pitch_max");
  }
  Rng rng(seed);
  const double bin = 360.0 / n;
  std::vector<ViewpointCandidate> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double yaw = (i + rng.uniform()) * bin;
    if (yaw >= 360.0) yaw = std::nextafter(360.0, 0.0);
    const double pitch = pitch_min_deg == pitch_max_deg
                             ? pitch_min_deg
                             : rng.uniform(pitch_min_deg, pitch_max_deg);
    out.push_back({Pose::from_yaw_pitch(position, yaw, pitch), yaw, pitch, i});
  }
  return out;
}

}  // namespace avl
