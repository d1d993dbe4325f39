#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace avl {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

// Rigid camera pose. `orientation` rotates camera-frame vectors into the
// world frame and `position` is the camera center in world coordinates.
// World frame is z-up; camera frame is +x right, +y down, +z forward.
class Pose {
 public:
  Pose();
  Pose(const Vec3& position, const Quat& orientation);

  static Pose identity() { return Pose(); }

  // Camera looking along the direction given by yaw (about world z, from +x
  // toward +y) and pitch (positive looks up), both in degrees.
  static Pose from_yaw_pitch(const Vec3& position, double yaw_deg,
                             double pitch_deg);

  const Vec3& position() const { return position_; }
  const Quat& orientation() const { return orientation_; }
  Mat3 rotation() const { return orientation_.toRotationMatrix(); }

  // Unit forward (optical) axis expressed in the world frame.
  Vec3 forward() const;

  Pose inverse() const;

  Vec3 to_camera(const Vec3& world_point) const;
  Vec3 to_world(const Vec3& camera_point) const;

 private:
  Vec3 position_;
  Quat orientation_;
};

// a∘b: apply b first, then a.
Pose pose_compose(const Pose& a, const Pose& b);

// Geodesic angle between two orientations in degrees, in [0, 180].
double rotation_geodesic_deg(const Quat& a, const Quat& b);

// Pinhole camera without distortion.
class CameraModel {
 public:
  // Throws ConfigError when an intrinsic is out of range.
  CameraModel(double fx, double fy, double cx, double cy, int width,
              int height, double near_m, double far_m);

  // 640x480, fx = fy = 400, principal point at the image center,
  // depth clip [0.1, 15] m.
  static CameraModel default_camera();

  double fx() const { return fx_; }
  double fy() const { return fy_; }
  double cx() const { return cx_; }
  double cy() const { return cy_; }
  int width() const { return width_; }
  int height() const { return height_; }
  double near_m() const { return near_; }
  double far_m() const { return far_; }

  double horizontal_fov_deg() const;
  // Angle between the optical axis and the farthest image corner.
  double half_diagonal_fov_deg() const;

  bool in_image(const Vec2& px) const {
    return px.x() >= 0.0 && px.x() < width_ && px.y() >= 0.0 &&
           px.y() < height_;
  }

  bool operator==(const CameraModel&) const = default;

 private:
  double fx_, fy_, cx_, cy_;
  int width_, height_;
  double near_, far_;
};

// Pixel of a world point, or nullopt when the point lies outside the depth
// clip range or the image rectangle.
std::optional<Vec2> project(const Vec3& point, const Pose& camera_pose,
                            const CameraModel& cam);

// Pixel of a camera-frame point with positive depth; no clipping.
inline Vec2 project_camera_point(const Vec3& pc, const CameraModel& cam) {
  return {cam.fx() * pc.x() / pc.z() + cam.cx(),
          cam.fy() * pc.y() / pc.z() + cam.cy()};
}

// Jacobian of the pixel of camera-frame point `pc` with respect to a
// right-multiplied local pose perturbation T_wc * Exp([rotation; translation]).
Eigen::Matrix<double, 2, 6> pose_projection_jacobian(const Vec3& pc, const CameraModel& cam);

// Pose perturbed on the right by the local increment [rotation; translation].
Pose retract(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta);

// Angle in degrees between the optical axis and the camera-to-point ray.
// Throws DegenerateInputError if the point coincides with the camera center.
double principal_axis_angle_deg(const Pose& camera_pose, const Vec3& point);

// Angle in degrees between two nonzero vectors, robust near 0 and 180.
double angle_between_deg(const Vec3& a, const Vec3& b);

// SO(3) exponential of a rotation vector.
Mat3 so3_exp(const Vec3& omega);
Mat3 skew(const Vec3& v);

struct ViewpointCandidate {
  Pose pose;
  double yaw_deg = 0.0;
  double pitch_deg = 0.0;
  int index = 0;
};

inline constexpr double kDefaultPitchMinDeg = -10.0;
inline constexpr double kDefaultPitchMaxDeg = 45.0;

// n orientations at `position`: yaw stratified over n equal bins on
// [0, 360) with uniform jitter inside each bin, pitch uniform on
// [pitch_min, pitch_max]. Throws EmptyRequestError for n == 0 and
// ConfigError when pitch_min > pitch_max.
std::vector<ViewpointCandidate> sample_viewpoints(const Vec3& position,
                                                  int n, double pitch_min_deg,
                                                  double pitch_max_deg,
                                                  std::uint64_t seed);

double deg2rad(double deg);
double rad2deg(double rad);

}  // namespace avl
