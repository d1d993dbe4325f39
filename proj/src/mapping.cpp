#include "avl/mapping.hpp"

#include <algorithm>
#include <cmath>

#include "avl/errors.hpp"
#include "avl/json_util.hpp"
#include "avl/rng.hpp"

namespace avl {

void ObsStatsAccumulator::add(const Pose& camera_pose, const Vec3& landmark) {
  const Vec3 to_cam = camera_pose.position() - landmark;
  const double dist = to_cam.norm();
  const double ang = principal_axis_angle_deg(camera_pose, landmark);
  if (dirs_.empty()) {
    dist_min_ = dist_max_ = dist;
    ang_min_ = ang_max_ = ang;
  } else {
    dist_min_ = std::min(dist_min_, dist);
    dist_max_ = std::max(dist_max_, dist);
    ang_min_ = std::min(ang_min_, ang);
    ang_max_ = std::max(ang_max_, ang);
  }
  dirs_.push_back(to_cam / dist);
}

LandmarkObsStats ObsStatsAccumulator::finish() const {
  if (dirs_.empty()) throw UsageError("ObsStatsAccumulator: no observations");
  LandmarkObsStats s;
  s.dist_min = dist_min_;
  s.dist_max = dist_max_;
  s.ang_min = ang_min_;
  s.ang_max = ang_max_;
  s.obs_count = count();
  Vec3 sum = Vec3::Zero();
  for (const Vec3& d : dirs_) sum += d;
  // Opposing views can cancel; fall back to the first direction.
  s.mean_view_dir = sum.norm() > 1e-12 ? Vec3(sum.normalized()) : dirs_.front();
  s.cone_half_angle = 0.0;
  if (dirs_.size() > 1) {
    for (const Vec3& d : dirs_) {
      s.cone_half_angle = std::max(s.cone_half_angle, angle_between_deg(d, s.mean_view_dir));
    }
  }
  return s;
}

bool has_clearance(const OccupancyGrid& grid, const Vec3& p, double clearance) {
  if (!grid.contains(p)) return false;
  const Vec3 r = Vec3::Constant(clearance);
  const Vec3 lo = (p - r).cwiseMax(grid.origin());
  const Vec3 hi = (p + r).cwiseMin(grid.extent_max());
  const Eigen::Vector3i a = grid.voxel_of(lo);
  const Eigen::Vector3i b = grid.voxel_of(hi);
  for (int z = a.z(); z <= b.z(); ++z)
    for (int y = a.y(); y <= b.y(); ++y)
      for (int x = a.x(); x <= b.x(); ++x)
        if (grid.occupied({x, y, z})) return false;
  return true;
}

std::vector<Pose> make_mapping_trajectory(const Scene& scene, const OccupancyGrid& grid,
                                          const TrajectoryConfig& config, std::uint64_t seed) {
  if (config.waypoint_count < 2) throw ConfigError("trajectory: need at least 2 waypoints");
  const Aabb inner = scene.interior();
  if (config.height_m <= inner.min.z() || config.height_m >= inner.max.z()) {
    throw ConfigError("trajectory: height outside the room");
  }
  Rng rng(seed);
  auto sample_free = [&]() -> Vec3 {
    const Vec3 p(rng.uniform(inner.min.x(), inner.max.x()),
                 rng.uniform(inner.min.y(), inner.max.y()), config.height_m);
    return p;
  };

  std::vector<Vec3> points;
  for (int i = 0; i < config.waypoint_count; ++i) {
    bool ok = false;
    for (int t = 0; t < config.retry_budget && !ok; ++t) {
      const Vec3 p = sample_free();
      if (!has_clearance(grid, p, config.clearance_m)) continue;
      if (!points.empty()) {
        if ((p - points.back()).norm() < 0.5) continue;
        if (ray_occluded(grid, points.back(), p)) continue;
      }
      points.push_back(p);
      ok = true;
    }
    if (!ok) throw GenerationError("trajectory: no free path found within the retry budget");
  }

  std::vector<Pose> poses;
  poses.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 dir = i + 1 < points.size() ? Vec3(points[i + 1] - points[i])
                                           : Vec3(points[i] - points[i - 1]);
    const double yaw = rad2deg(std::atan2(dir.y(), dir.x())) +
                       rng.uniform(-config.yaw_jitter_deg, config.yaw_jitter_deg);
    const double pitch =
        config.pitch_mean_deg + rng.uniform(-config.pitch_jitter_deg, config.pitch_jitter_deg);
    poses.push_back(Pose::from_yaw_pitch(points[i], yaw, pitch));
  }
  return poses;
}

Eigen::VectorXd synthetic_descriptor_raw(double quality, int id, std::uint64_t seed,
                                         const DescriptorConfig& config) {
  if (config.dim < 2) throw ConfigError("descriptor: dim must be at least 2");
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(id)}));
  Eigen::VectorXd d(config.dim);
  d[0] = (2.0 * quality - 1.0) + config.quality_noise * rng.normal();
  for (int k = 1; k < config.dim; ++k) d[k] = config.id_noise * rng.normal();
  return d;
}

Eigen::VectorXd synthetic_descriptor(double quality, int id, std::uint64_t seed,
                                     const DescriptorConfig& config) {
  Eigen::VectorXd d = synthetic_descriptor_raw(quality, id, seed, config);
  const double n = d.norm();
  if (n < 1e-12) {
    d.setZero();
    d[0] = 1.0;
    return d;
  }
  return d / n;
}

LandmarkMap simulate_mapping(const Scene& scene, const OccupancyGrid& grid,
                             const std::vector<Pose>& trajectory, const CameraModel& cam,
                             const MappingConfig& config, std::uint64_t seed) {
  if (trajectory.empty()) throw EmptyRequestError("simulate_mapping: empty trajectory");
  if (config.min_obs < 1) throw ConfigError("simulate_mapping: min_obs must be at least 1");
  const double bound =
      config.noise_bound_m > 0.0 ? config.noise_bound_m : 5.0 * config.noise_sigma_m;
  const std::uint64_t noise_seed = derive_seed(seed, {1});
  const std::uint64_t desc_seed = derive_seed(seed, {2});

  LandmarkMap map;
  map.mapping_poses = trajectory;
  map.cam = cam;
  map.source_scene_seed = scene.seed;

  for (const TrueLandmark& lm : scene.landmarks) {
    // Per-landmark stream: the map does not depend on iteration order.
    Rng rng(derive_seed(noise_seed, {static_cast<std::uint64_t>(lm.id)}));
    Vec3 position = lm.position;
    if (config.noise_sigma_m > 0.0) {
      Vec3 offset;
      do {
        offset = Vec3(rng.normal(), rng.normal(), rng.normal()) * config.noise_sigma_m;
      } while (offset.norm() > bound);
      position += offset;
    }

    ObsStatsAccumulator acc;
    for (const Pose& pose : trajectory) {
      if (incidence_deg(lm, pose.position()) > config.max_incidence_deg) continue;
      if (visible(grid, pose, cam, lm.position)) acc.add(pose, position);
    }
    if (acc.count() < config.min_obs) continue;

    MappedLandmark m;
    m.id = lm.id;
    m.position = position;
    m.descriptor = synthetic_descriptor(lm.quality, lm.id, desc_seed, config.descriptor);
    m.stats = acc.finish();
    map.landmarks.push_back(std::move(m));
  }
  if (map.landmarks.empty()) {
    throw GenerationError("simulate_mapping: no landmark mapped; scene and trajectory mismatch");
  }
  return map;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr char kMapSchema[] = "avl.landmark_map";
constexpr int kMapVersion = 1;
}  // namespace

nlohmann::json pose_to_json(const Pose& p) {
  return {{"position", vec_to_json(p.position())}, {"orientation", quat_to_json(p.orientation())}};
}

Pose pose_from_json(const nlohmann::json& j) {
  return Pose(vec_from_json(j.at("position")), quat_from_json(j.at("orientation")));
}

nlohmann::json camera_to_json(const CameraModel& c) {
  return {{"fx", c.fx()},         {"fy", c.fy()},         {"cx", c.cx()},
          {"cy", c.cy()},         {"width", c.width()},   {"height", c.height()},
          {"near", c.near_m()},   {"far", c.far_m()}};
}

CameraModel camera_from_json(const nlohmann::json& j) {
  return CameraModel(j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                     j.at("cy").get<double>(), j.at("width").get<int>(), j.at("height").get<int>(),
                     j.at("near").get<double>(), j.at("far").get<double>());
}

nlohmann::json map_to_json(const LandmarkMap& map) {
  nlohmann::json doc;
  doc["schema"] = kMapSchema;
  doc["version"] = kMapVersion;
  doc["source_scene_seed"] = map.source_scene_seed;
  doc["camera"] = camera_to_json(map.cam);
  auto& poses = doc["mapping_poses"] = nlohmann::json::array();
  for (const Pose& p : map.mapping_poses) poses.push_back(pose_to_json(p));
  auto& lms = doc["landmarks"] = nlohmann::json::array();
  for (const MappedLandmark& m : map.landmarks) {
    const LandmarkObsStats& s = m.stats;
    lms.push_back({{"id", m.id},
                   {"position", vec_to_json(m.position)},
                   {"descriptor", std::vector<double>(m.descriptor.data(),
                                                      m.descriptor.data() + m.descriptor.size())},
                   {"stats",
                    {{"dist_min", s.dist_min},
                     {"dist_max", s.dist_max},
                     {"ang_min", s.ang_min},
                     {"ang_max", s.ang_max},
                     {"mean_view_dir", vec_to_json(s.mean_view_dir)},
                     {"cone_half_angle", s.cone_half_angle},
                     {"obs_count", s.obs_count}}}});
  }
  return doc;
}

LandmarkMap map_from_json(const nlohmann::json& doc) {
  check_schema(doc, kMapSchema, kMapVersion);
  try {
    LandmarkMap map;
    map.source_scene_seed = doc.at("source_scene_seed").get<std::uint64_t>();
    map.cam = camera_from_json(doc.at("camera"));
    for (const auto& p : doc.at("mapping_poses")) map.mapping_poses.push_back(pose_from_json(p));
    for (const auto& l : doc.at("landmarks")) {
      MappedLandmark m;
      m.id = l.at("id").get<int>();
      m.position = vec_from_json(l.at("position"));
      const auto d = l.at("descriptor").get<std::vector<double>>();
      m.descriptor = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
      const auto& s = l.at("stats");
      m.stats.dist_min = s.at("dist_min").get<double>();
      m.stats.dist_max = s.at("dist_max").get<double>();
      m.stats.ang_min = s.at("ang_min").get<double>();
      m.stats.ang_max = s.at("ang_max").get<double>();
      m.stats.mean_view_dir = vec_from_json(s.at("mean_view_dir"));
      m.stats.cone_half_angle = s.at("cone_half_angle").get<double>();
      m.stats.obs_count = s.at("obs_count").get<int>();
      map.landmarks.push_back(std::move(m));
    }
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("landmark map: ") + e.what());
  }
}

void save_map(const LandmarkMap& map, const std::string& path) {
  write_json_file(map_to_json(map), path);
}

LandmarkMap load_map(const std::string& path) { return map_from_json(read_json_file(path)); }

}  // namespace avl
