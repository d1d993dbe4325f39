#pragma once

#include <array>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "avl/geom.hpp"
#include "avl/mapping.hpp"
#include "avl/rng.hpp"
#include "avl/scene.hpp"

namespace avl {

// One 2D-3D association handed to the pose estimator.
struct Correspondence {
  int landmark_id = 0;
  Vec3 map_point = Vec3::Zero();  // from the landmark map
  Vec2 pixel = Vec2::Zero();
  bool is_outlier = false;  // diagnostics only; never read by the estimator
};

struct NoiseConfig {
  double pixel_sigma_base = 1.0;   // px, scaled by (2 - quality)
  double outlier_rate_base = 0.1;  // scaled by (2 - quality) / 2
  // Matching against the map degrades when a landmark is seen from outside
  // the cone of its mapping views: the correspondence is lost with
  // probability view_drop_rate * min(1, excess / view_drop_ramp_deg).
  // Off by default.
  double view_drop_rate = 0.0;
  double view_drop_ramp_deg = 20.0;
  // The same for scale: excess is the log ratio by which the viewing
  // distance falls outside the mapped distance range. Both losses are
  // independent. Off by default.
  double scale_drop_rate = 0.0;
  double scale_drop_ramp = 0.7;
  // Features farther than this from their surface normal are not detected.
  double max_incidence_deg = 180.0;
};

struct RansacConfig {
  int iterations = 200;
  double inlier_threshold_px = 3.0;
  int min_inliers = 6;
  int refine_iterations = 30;
};

struct OracleConfig {
  NoiseConfig noise;
  RansacConfig ransac;
};

inline constexpr double kFailureError = std::numeric_limits<double>::infinity();

struct LocalizationResult {
  bool success = false;
  Pose estimated_pose;  // valid iff success
  int inlier_count = 0;
  std::vector<int> inliers;  // indices into the correspondence list
  double pos_error_m = kFailureError;
  double rot_error_deg = kFailureError;

  bool within(double dist_m, double angle_deg) const {
    return success && pos_error_m <= dist_m && rot_error_deg <= angle_deg;
  }
};

// Synthesizes the observation at `true_pose`: one correspondence per mapped
// landmark whose true counterpart is visible (occlusion-checked against the
// ground-truth grid). Pixels outside the image after noise are dropped, as
// are matches lost to the view-dependent term of `noise`.
std::vector<Correspondence> observe(const Scene& scene, const OccupancyGrid& grid,
                                    const LandmarkMap& map, const Pose& true_pose,
                                    const CameraModel& cam, const NoiseConfig& noise, Rng& rng);

// Minimal absolute-pose solver: camera poses consistent with three bearing
// vectors (camera frame, unit) and their world points. Up to four solutions.
std::vector<Pose> solve_p3p(const std::array<Vec3, 3>& bearings,
                            const std::array<Vec3, 3>& world_points);

// Damped Gauss-Newton on the reprojection error of the given
// correspondences. Accepts a step only when it lowers the cost. Returns the
// refined pose; `cost_trace` (optional) receives the cost after each
// accepted step, starting with the initial cost.
Pose refine_pose(const Pose& initial, std::span<const Correspondence> corrs,
                 std::span<const int> subset, const CameraModel& cam, int max_iterations,
                 std::vector<double>* cost_trace = nullptr);

// Position error (m) and geodesic rotation error (deg).
std::pair<double, double> pose_error(const Pose& estimated, const Pose& truth);

// Robust PnP: P3P hypotheses on random 4-samples (the 4th point picks among
// the P3P roots), scored by reprojection inliers, best one refined. Fewer
// than 4 correspondences yields a failure result. Errors are measured
// against `truth`.
LocalizationResult estimate_pose(std::span<const Correspondence> corrs, const CameraModel& cam,
                                 const RansacConfig& ransac, Rng& rng, const Pose& truth);

// observe followed by estimate_pose.
LocalizationResult localize(const Scene& scene, const OccupancyGrid& grid, const LandmarkMap& map,
                            const Pose& true_pose, const CameraModel& cam,
                            const OracleConfig& config, Rng& rng);

}  // namespace avl
