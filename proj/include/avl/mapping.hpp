#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "avl/geom.hpp"
#include "avl/scene.hpp"

namespace avl {

// Mapping-stage observation statistics of one landmark.
struct LandmarkObsStats {
  double dist_min = 0.0;  // m
  double dist_max = 0.0;
  double ang_min = 0.0;  // principal-axis angle, deg
  double ang_max = 0.0;
  Vec3 mean_view_dir = Vec3::UnitZ();  // landmark -> camera, unit
  double cone_half_angle = 0.0;        // deg
  int obs_count = 0;
};

// Fold over the mapping views of one landmark.
class ObsStatsAccumulator {
 public:
  void add(const Pose& camera_pose, const Vec3& landmark);
  int count() const { return static_cast<int>(dirs_.size()); }
  // Requires count() >= 1.
  LandmarkObsStats finish() const;

 private:
  std::vector<Vec3> dirs_;
  double dist_min_ = 0.0, dist_max_ = 0.0, ang_min_ = 0.0, ang_max_ = 0.0;
};

struct MappedLandmark {
  int id = 0;
  Vec3 position = Vec3::Zero();
  Eigen::VectorXd descriptor;  // unit norm
  LandmarkObsStats stats;
};

struct LandmarkMap {
  std::vector<MappedLandmark> landmarks;
  std::vector<Pose> mapping_poses;
  CameraModel cam = CameraModel::default_camera();
  std::uint64_t source_scene_seed = 0;
};

struct TrajectoryConfig {
  double height_m = 1.6;
  int waypoint_count = 60;
  double clearance_m = 0.2;
  double yaw_jitter_deg = 20.0;
  double pitch_mean_deg = -10.0;
  double pitch_jitter_deg = 10.0;
  int retry_budget = 2000;
};

// Collision-free walk at a fixed height, each pose facing the next
// waypoint with small jitter. Throws GenerationError if no free path is
// found within the retry budget and ConfigError for invalid inputs.
std::vector<Pose> make_mapping_trajectory(const Scene& scene, const OccupancyGrid& grid,
                                          const TrajectoryConfig& config, std::uint64_t seed);

// True if every voxel within `clearance` of p (axis-aligned cube) is free.
bool has_clearance(const OccupancyGrid& grid, const Vec3& p, double clearance);

struct DescriptorConfig {
  int dim = 8;
  double quality_noise = 0.1;  // std of the quality-carrying coordinate
  double id_noise = 0.3;       // std of the remaining coordinates
};

// Appearance stand-in before normalization: the first coordinate encodes
// quality on [-1, 1]; the rest is noise seeded by (seed, id).
Eigen::VectorXd synthetic_descriptor_raw(double quality, int id, std::uint64_t seed,
                                         const DescriptorConfig& config = {});
// Unit-norm version of the above. Throws ConfigError when dim < 2.
Eigen::VectorXd synthetic_descriptor(double quality, int id, std::uint64_t seed,
                                     const DescriptorConfig& config = {});

struct MappingConfig {
  double noise_sigma_m = 0.01;
  // Position error cap; draws beyond it are redrawn. <= 0 means 5 sigma.
  double noise_bound_m = 0.0;
  int min_obs = 2;
  // A view registers an observation only within this angle of the
  // landmark's surface normal.
  double max_incidence_deg = 180.0;
  DescriptorConfig descriptor;
};

// Known-pose triangulation stand-in. Throws GenerationError when nothing is
// mapped and EmptyRequestError for an empty trajectory.
LandmarkMap simulate_mapping(const Scene& scene, const OccupancyGrid& grid,
                             const std::vector<Pose>& trajectory, const CameraModel& cam,
                             const MappingConfig& config, std::uint64_t seed);

nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);
nlohmann::json camera_to_json(const CameraModel& cam);
CameraModel camera_from_json(const nlohmann::json& j);

nlohmann::json map_to_json(const LandmarkMap& map);
LandmarkMap map_from_json(const nlohmann::json& doc);
void save_map(const LandmarkMap& map, const std::string& path);
LandmarkMap load_map(const std::string& path);

}  // namespace avl
