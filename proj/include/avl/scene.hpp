#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "avl/geom.hpp"

namespace avl {

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  Vec3 size() const { return max - min; }
};

enum class OccluderClass { kLowFurniture, kWall };

struct Occluder {
  Aabb box;
  OccluderClass cls = OccluderClass::kLowFurniture;
};

struct TrueLandmark {
  int id = 0;
  Vec3 position = Vec3::Zero();
  double quality = 0.5;  // [0, 1]; scales observation noise
  Vec3 normal = Vec3::Zero();  // of the surface it sits on; zero if unknown
};

// Angle in degrees between the landmark's surface normal and the direction
// to `viewer`; 0 when the normal is unknown.
double incidence_deg(const TrueLandmark& landmark, const Vec3& viewer);

// Ground-truth world. The room is the box `bounds`; its walls, floor and
// ceiling are solid slabs `wall_thickness` thick on the inside of the box.
struct Scene {
  Aabb bounds;
  double wall_thickness = 0.05;
  std::vector<Occluder> occluders;
  std::vector<TrueLandmark> landmarks;
  std::uint64_t seed = 0;

  // Free interior of the room (bounds shrunk by the wall slabs).
  Aabb interior() const;
};

struct SceneConfig {
  Vec3 room_size{8.0, 8.0, 3.0};
  double wall_thickness = 0.05;
  // Occluder faces and the room are snapped to this lattice so that surface
  // landmarks sit exactly on voxel boundaries of the default grid.
  double lattice = 0.05;

  int landmark_count = 300;
  int occluder_count = 10;
  double occluder_footprint_min = 0.4;
  double occluder_footprint_max = 1.6;
  double occluder_height_min = 0.7;
  double occluder_height_max = 1.0;
  double tall_occluder_fraction = 0.2;
  double tall_height_min = 1.8;
  double tall_height_max = 2.2;

  // Fraction of landmarks on walls; the rest sit on occluder surfaces.
  double wall_landmark_fraction = 0.6;
  // Share of occluder-surface landmarks placed on top faces (the rest on
  // side faces).
  double top_face_fraction = 0.7;
  // Wall landmarks are grouped into textured patches of this radius.
  int wall_patch_count = 16;
  double wall_patch_radius = 0.5;
  double wall_landmark_min_height = 0.15;
};

// Throws ConfigError for infeasible configurations.
void validate(const SceneConfig& config);

Scene gen_scene(const SceneConfig& config, std::uint64_t seed);

// Dense boolean voxel volume standing in for the signed-distance map.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(const Vec3& origin, double voxel_size, const Eigen::Vector3i& dims);

  const Vec3& origin() const { return origin_; }
  double voxel_size() const { return voxel_size_; }
  const Eigen::Vector3i& dims() const { return dims_; }
  Vec3 extent_max() const { return origin_ + dims_.cast<double>() * voxel_size_; }

  // Set when the voxel is coarser than the smallest occluder dimension.
  bool degraded_resolution() const { return degraded_; }
  void set_degraded_resolution(bool d) { degraded_ = d; }

  bool contains(const Vec3& p) const;
  // Voxel holding p; points on the far boundary map to the last voxel.
  // Throws OutOfBoundsError if p is outside the grid.
  Eigen::Vector3i voxel_of(const Vec3& p) const;
  Vec3 voxel_center(const Eigen::Vector3i& v) const;

  bool occupied(const Eigen::Vector3i& v) const { return cells_[linear(v)] != 0; }
  bool occupied_at(const Vec3& p) const { return occupied(voxel_of(p)); }
  void set_occupied(const Eigen::Vector3i& v, bool value) { cells_[linear(v)] = value ? 1 : 0; }

  std::size_t occupied_count() const;
  const std::vector<std::uint8_t>& cells() const { return cells_; }

  bool operator==(const OccupancyGrid& other) const;

 private:
  std::size_t linear(const Eigen::Vector3i& v) const {
    return static_cast<std::size_t>(v.x()) +
           static_cast<std::size_t>(dims_.x()) *
               (static_cast<std::size_t>(v.y()) +
                static_cast<std::size_t>(dims_.y()) * static_cast<std::size_t>(v.z()));
  }

  Vec3 origin_ = Vec3::Zero();
  double voxel_size_ = 1.0;
  Eigen::Vector3i dims_ = Eigen::Vector3i::Zero();
  std::vector<std::uint8_t> cells_;
  bool degraded_ = false;
};

inline constexpr double kDefaultVoxelSize = 0.05;

// A voxel is occupied iff its center lies in an occluder box or in the wall
// slabs. Throws ConfigError for voxel_size <= 0.
OccupancyGrid build_occupancy(const Scene& scene, double voxel_size = kDefaultVoxelSize);

// True iff the segment crosses an occupied voxel other than the voxels that
// contain its endpoints. Exact voxel traversal; symmetric in its endpoints.
bool ray_occluded(const OccupancyGrid& grid, const Vec3& from, const Vec3& to);

// The visibility predicate v(x, i): in the frustum and, when
// `check_occlusion` is set, not occluded. The landmark end of the ray is
// clamped into the grid so slightly-outside map points are still testable.
bool visible(const OccupancyGrid& grid, const Pose& camera_pose,
             const CameraModel& cam, const Vec3& landmark,
             bool check_occlusion = true);

// Occlusion-only test from a point, ignoring any frustum.
bool line_of_sight(const OccupancyGrid& grid, const Vec3& from, const Vec3& to);

// Serialization. Scene documents are versioned JSON; grids are a
// little-endian binary blob with bit-packed occupancy.
nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& doc);
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

void write_occupancy(const OccupancyGrid& grid, std::ostream& out);
OccupancyGrid read_occupancy(std::istream& in);
void save_occupancy(const OccupancyGrid& grid, const std::string& path);
OccupancyGrid load_occupancy(const std::string& path);

}  // namespace avl
