#include "avl/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>

#include "avl/binio.hpp"
#include "avl/errors.hpp"
#include "avl/json_util.hpp"
#include "avl/rng.hpp"

namespace avl {

namespace {

double snap(double v, double lattice) {
  if (lattice <= 0.0) return v;
  return std::round(v / lattice) * lattice;
}

double snap_size(double v, double lattice) {
  if (lattice <= 0.0) return v;
  return std::max(lattice, snap(v, lattice));
}

constexpr double kSurfaceOffset = 1e-3;

bool inside_any_occluder(const std::vector<Occluder>& occluders, const Vec3& p) {
  return std::any_of(occluders.begin(), occluders.end(),
                     [&](const Occluder& o) { return o.box.contains(p); });
}

}  // namespace

Aabb Scene::interior() const {
  const Vec3 t = Vec3::Constant(wall_thickness);
  return {bounds.min + t, bounds.max - t};
}

void validate(const SceneConfig& c) {
  if (c.landmark_count <= 0) throw ConfigError("scene: landmark_count must be positive");
  if (c.occluder_count < 0) throw ConfigError("scene: occluder_count must be non-negative");
  if (c.wall_thickness < 0.0) throw ConfigError("scene: wall_thickness must be non-negative");
  const Vec3 inner = c.room_size - Vec3::Constant(2.0 * c.wall_thickness);
  if ((inner.array() <= 0.0).any()) throw ConfigError("scene: room smaller than its walls");
  if (c.wall_landmark_fraction < 0.0 || c.wall_landmark_fraction > 1.0 ||
      c.top_face_fraction < 0.0 || c.top_face_fraction > 1.0 ||
      c.tall_occluder_fraction < 0.0 || c.tall_occluder_fraction > 1.0) {
    throw ConfigError("scene: fractions must lie in [0, 1]");
  }
  if (c.occluder_count > 0) {
    if (!(c.occluder_footprint_min > 0.0 && c.occluder_footprint_min <= c.occluder_footprint_max)) {
      throw ConfigError("scene: invalid occluder footprint range");
    }
    if (!(c.occluder_height_min > 0.0 && c.occluder_height_min <= c.occluder_height_max)) {
      throw ConfigError("scene: invalid occluder height range");
    }
    if (c.occluder_footprint_min > std::min(inner.x(), inner.y()) ||
        c.occluder_height_min > inner.z()) {
      throw ConfigError("scene: room smaller than one occluder");
    }
  }
  if (c.wall_landmark_fraction > 0.0 && c.wall_patch_count <= 0) {
    throw ConfigError("scene: wall landmarks need at least one patch");
  }
}

Scene gen_scene(const SceneConfig& c, std::uint64_t seed) {
  validate(c);
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  scene.wall_thickness = c.wall_thickness;
  scene.bounds = {Vec3::Zero(),
                  Vec3(snap_size(c.room_size.x(), c.lattice), snap_size(c.room_size.y(), c.lattice),
                       snap_size(c.room_size.z(), c.lattice))};
  const Aabb inner = scene.interior();
  const Vec3 inner_size = inner.size();

  for (int k = 0; k < c.occluder_count; ++k) {
    Occluder o;
    const bool tall = rng.bernoulli(c.tall_occluder_fraction);
    o.cls = tall ? OccluderClass::kWall : OccluderClass::kLowFurniture;
    double sx = rng.uniform(c.occluder_footprint_min, c.occluder_footprint_max);
    double sy = rng.uniform(c.occluder_footprint_min, c.occluder_footprint_max);
    double h = tall ? rng.uniform(c.tall_height_min, c.tall_height_max)
                    : rng.uniform(c.occluder_height_min, c.occluder_height_max);
    if (tall) {
      // Partitions and shelves: thin in one direction.
      const double thin = rng.uniform(0.1, 0.3);
      if (rng.bernoulli(0.5)) sx = thin; else sy = thin;
    }
    sx = std::min(snap_size(sx, c.lattice), inner_size.x());
    sy = std::min(snap_size(sy, c.lattice), inner_size.y());
    h = std::min(snap_size(h, c.lattice), inner_size.z());
    const double x0 = snap(rng.uniform(inner.min.x(), inner.max.x() - sx), c.lattice);
    const double y0 = snap(rng.uniform(inner.min.y(), inner.max.y() - sy), c.lattice);
    o.box.min = Vec3(std::max(x0, inner.min.x()), std::max(y0, inner.min.y()), inner.min.z());
    o.box.max = Vec3(std::min(o.box.min.x() + sx, inner.max.x()),
                     std::min(o.box.min.y() + sy, inner.max.y()), inner.min.z() + h);
    scene.occluders.push_back(o);
  }

  const int n_wall = scene.occluders.empty()
                         ? c.landmark_count
                         : static_cast<int>(std::lround(c.wall_landmark_fraction * c.landmark_count));

  // Wall patches: (wall index, along-wall coordinate, height).
  struct Patch {
    int wall;
    double along;
    double z;
  };
  const double perimeter = 2.0 * (inner_size.x() + inner_size.y());
  const double z_lo = inner.min.z() + c.wall_landmark_min_height;
  const double z_hi = std::max(z_lo, inner.max.z() - 0.1);
  auto wall_length = [&](int w) { return (w % 2 == 0) ? inner_size.x() : inner_size.y(); };
  auto wall_point = [&](int w, double along, double z) -> Vec3 {
    const double off = kSurfaceOffset;
    switch (w) {
      case 0: return {inner.min.x() + along, inner.min.y() + off, z};  // south, along +x
      case 1: return {inner.max.x() - off, inner.min.y() + along, z};  // east, along +y
      case 2: return {inner.max.x() - along, inner.max.y() - off, z};  // north, along -x
      default: return {inner.min.x() + off, inner.max.y() - along, z};  // west, along -y
    }
  };
  std::vector<Patch> patches;
  if (n_wall > 0) {
    for (int p = 0; p < c.wall_patch_count; ++p) {
      double s = rng.uniform(0.0, perimeter);
      int w = 0;
      while (w < 3 && s > wall_length(w)) {
        s -= wall_length(w);
        ++w;
      }
      patches.push_back({w, std::clamp(s, 0.2, wall_length(w) - 0.2), rng.uniform(z_lo, z_hi)});
    }
  }

  auto add_landmark = [&](const Vec3& pos, const Vec3& normal) {
    TrueLandmark lm;
    lm.id = static_cast<int>(scene.landmarks.size());
    lm.position = pos;
    lm.normal = normal;
    lm.quality = rng.uniform();
    scene.landmarks.push_back(lm);
  };

  constexpr int kMaxTries = 1000;
  for (int i = 0; i < n_wall; ++i) {
    bool placed = false;
    for (int t = 0; t < kMaxTries && !placed; ++t) {
      const Patch& p = patches[rng.below(patches.size())];
      const double r = c.wall_patch_radius * std::sqrt(rng.uniform());
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double along = std::clamp(p.along + r * std::cos(a), 0.1, wall_length(p.wall) - 0.1);
      const double z = std::clamp(p.z + r * std::sin(a), z_lo, z_hi);
      const Vec3 pos = wall_point(p.wall, along, z);
      if (inside_any_occluder(scene.occluders, pos)) continue;
      static const Vec3 kWallNormals[4] = {Vec3::UnitY(), -Vec3::UnitX(), -Vec3::UnitY(), Vec3::UnitX()};
      add_landmark(pos, kWallNormals[p.wall]);
      placed = true;
    }
    if (!placed) throw GenerationError("scene: could not place a wall landmark");
  }

  for (int i = n_wall; i < c.landmark_count; ++i) {
    bool placed = false;
    for (int t = 0; t < kMaxTries && !placed; ++t) {
      const Occluder& o = scene.occluders[rng.below(scene.occluders.size())];
      const Aabb& b = o.box;
      Vec3 pos;
      Vec3 normal = Vec3::UnitZ();
      if (rng.bernoulli(c.top_face_fraction)) {
        pos = Vec3(rng.uniform(b.min.x(), b.max.x()), rng.uniform(b.min.y(), b.max.y()),
                   b.max.z() + kSurfaceOffset);
      } else {
        const int side = static_cast<int>(rng.below(4));
        const double z = rng.uniform(b.min.z() + 0.05, b.max.z());
        const double u = rng.uniform();
        switch (side) {
          case 0: pos = {b.min.x() + u * (b.max.x() - b.min.x()), b.min.y() - kSurfaceOffset, z}; break;
          case 1: pos = {b.max.x() + kSurfaceOffset, b.min.y() + u * (b.max.y() - b.min.y()), z}; break;
          case 2: pos = {b.min.x() + u * (b.max.x() - b.min.x()), b.max.y() + kSurfaceOffset, z}; break;
          default: pos = {b.min.x() - kSurfaceOffset, b.min.y() + u * (b.max.y() - b.min.y()), z}; break;
        }
        static const Vec3 kSideNormals[4] = {-Vec3::UnitY(), Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitX()};
        normal = kSideNormals[side];
      }
      if (!inner.contains(pos) || inside_any_occluder(scene.occluders, pos)) continue;
      add_landmark(pos, normal);
      placed = true;
    }
    if (!placed) throw GenerationError("scene: could not place an occluder-surface landmark");
  }
  return scene;
}

// ---------------------------------------------------------------------------
// OccupancyGrid

OccupancyGrid::OccupancyGrid(const Vec3& origin, double voxel_size, const Eigen::Vector3i& dims)
    : origin_(origin), voxel_size_(voxel_size), dims_(dims) {
  if (!(voxel_size > 0.0)) throw ConfigError("occupancy: voxel_size must be positive");
  if ((dims.array() <= 0).any()) throw ConfigError("occupancy: dims must be positive");
  cells_.assign(static_cast<std::size_t>(dims.x()) * dims.y() * dims.z(), 0);
}

bool OccupancyGrid::contains(const Vec3& p) const {
  const Vec3 hi = extent_max();
  return (p.array() >= origin_.array()).all() && (p.array() <= hi.array()).all();
}

Eigen::Vector3i OccupancyGrid::voxel_of(const Vec3& p) const {
  if (!contains(p)) throw OutOfBoundsError("occupancy: point outside the grid");
  Eigen::Vector3i v;
  for (int a = 0; a < 3; ++a) {
    const int i = static_cast<int>(std::floor((p[a] - origin_[a]) / voxel_size_));
    v[a] = std::clamp(i, 0, dims_[a] - 1);
  }
  return v;
}

Vec3 OccupancyGrid::voxel_center(const Eigen::Vector3i& v) const {
  return origin_ + (v.cast<double>() + Vec3::Constant(0.5)) * voxel_size_;
}

std::size_t OccupancyGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

bool OccupancyGrid::operator==(const OccupancyGrid& o) const {
  return origin_ == o.origin_ && voxel_size_ == o.voxel_size_ && dims_ == o.dims_ &&
         cells_ == o.cells_ && degraded_ == o.degraded_;
}

OccupancyGrid build_occupancy(const Scene& scene, double voxel_size) {
  if (!(voxel_size > 0.0)) throw ConfigError("build_occupancy: voxel_size must be positive");
  const Vec3 size = scene.bounds.size();
  Eigen::Vector3i dims;
  for (int a = 0; a < 3; ++a) {
    const double n = size[a] / voxel_size;
    const double r = std::round(n);
    dims[a] = std::max(1, static_cast<int>(std::abs(n - r) < 1e-9 ? r : std::ceil(n)));
  }
  OccupancyGrid grid(scene.bounds.min, voxel_size, dims);

  // Range of voxel indices along one axis whose centers lie in [lo, hi].
  const double eps = 1e-9 * voxel_size;
  auto center_range = [&](int axis, double lo, double hi) {
    const double o = grid.origin()[axis];
    int i0 = static_cast<int>(std::ceil((lo - o) / voxel_size - 0.5 - 1e-9));
    int i1 = static_cast<int>(std::floor((hi - o) / voxel_size - 0.5 + 1e-9));
    return std::pair<int, int>{std::max(i0, 0), std::min(i1, dims[axis] - 1)};
  };

  const double t = scene.wall_thickness;
  if (t > 0.0) {
    for (int z = 0; z < dims.z(); ++z) {
      for (int y = 0; y < dims.y(); ++y) {
        for (int x = 0; x < dims.x(); ++x) {
          const Eigen::Vector3i v(x, y, z);
          const Vec3 c = grid.voxel_center(v);
          bool shell = false;
          for (int a = 0; a < 3; ++a) {
            shell |= c[a] <= scene.bounds.min[a] + t + eps || c[a] >= scene.bounds.max[a] - t - eps;
          }
          if (shell) grid.set_occupied(v, true);
        }
      }
    }
  }

  double smallest = std::numeric_limits<double>::infinity();
  for (const Occluder& o : scene.occluders) {
    const Vec3 s = o.box.size();
    smallest = std::min(smallest, s.minCoeff());
    const auto [x0, x1] = center_range(0, o.box.min.x(), o.box.max.x());
    const auto [y0, y1] = center_range(1, o.box.min.y(), o.box.max.y());
    const auto [z0, z1] = center_range(2, o.box.min.z(), o.box.max.z());
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) grid.set_occupied({x, y, z}, true);
  }
  if (voxel_size > smallest) {
    grid.set_degraded_resolution(true);
    std::clog << "warning: voxel size " << voxel_size << " m exceeds smallest occluder dimension "
              << smallest << " m; occupancy resolution is degraded\n";
  }
  return grid;
}

bool ray_occluded(const OccupancyGrid& grid, const Vec3& from, const Vec3& to) {
  // Canonical endpoint order keeps the traversal, and thus the answer,
  // symmetric even when the ray grazes voxel edges.
  const bool swap = std::lexicographical_compare(to.data(), to.data() + 3, from.data(), from.data() + 3);
  const Vec3& a = swap ? to : from;
  const Vec3& b = swap ? from : to;

  const Eigen::Vector3i start = grid.voxel_of(a);
  const Eigen::Vector3i end = grid.voxel_of(b);
  if (start == end) return false;

  const Vec3 d = b - a;
  const double h = grid.voxel_size();
  Eigen::Vector3i v = start;
  Eigen::Vector3i step;
  Vec3 t_max, t_delta;
  for (int k = 0; k < 3; ++k) {
    if (d[k] > 0.0) {
      step[k] = 1;
      const double boundary = grid.origin()[k] + (v[k] + 1) * h;
      t_max[k] = (boundary - a[k]) / d[k];
      t_delta[k] = h / d[k];
    } else if (d[k] < 0.0) {
      step[k] = -1;
      const double boundary = grid.origin()[k] + v[k] * h;
      t_max[k] = (boundary - a[k]) / d[k];
      t_delta[k] = -h / d[k];
    } else {
      step[k] = 0;
      t_max[k] = std::numeric_limits<double>::infinity();
      t_delta[k] = std::numeric_limits<double>::infinity();
    }
  }

  const int max_steps = (end - start).cwiseAbs().sum() + 3;
  for (int i = 0; i < max_steps; ++i) {
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    if (t_max[axis] > 1.0) break;
    v[axis] += step[axis];
    t_max[axis] += t_delta[axis];
    if (v[axis] < 0 || v[axis] >= grid.dims()[axis]) break;
    if (v == end) return false;
    if (grid.occupied(v)) return true;
  }
  return false;
}

double incidence_deg(const TrueLandmark& landmark, const Vec3& viewer) {
  const Vec3 d = viewer - landmark.position;
  if (landmark.normal.isZero() || d.isZero()) return 0.0;
  return angle_between_deg(landmark.normal, d);
}

bool line_of_sight(const OccupancyGrid& grid, const Vec3& from, const Vec3& to) {
  const Vec3 lo = grid.origin();
  const Vec3 hi = grid.extent_max();
  const Vec3 target = to.cwiseMax(lo).cwiseMin(hi);
  return !ray_occluded(grid, from, target);
}

bool visible(const OccupancyGrid& grid, const Pose& camera_pose, const CameraModel& cam,
             const Vec3& landmark, bool check_occlusion) {
  if (!project(landmark, camera_pose, cam)) return false;
  if (!check_occlusion) return true;
  return line_of_sight(grid, camera_pose.position(), landmark);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr char kSceneSchema[] = "avl.scene";
constexpr int kSceneVersion = 1;
constexpr char kGridMagic[9] = "AVLOCCG1";
constexpr std::uint32_t kGridVersion = 1;
}  // namespace

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json doc;
  doc["schema"] = kSceneSchema;
  doc["version"] = kSceneVersion;
  doc["seed"] = scene.seed;
  doc["bounds"] = {{"min", vec_to_json(scene.bounds.min)}, {"max", vec_to_json(scene.bounds.max)}};
  doc["wall_thickness"] = scene.wall_thickness;
  auto& occ = doc["occluders"] = nlohmann::json::array();
  for (const Occluder& o : scene.occluders) {
    occ.push_back({{"min", vec_to_json(o.box.min)},
                   {"max", vec_to_json(o.box.max)},
                   {"class", o.cls == OccluderClass::kWall ? "wall" : "low"}});
  }
  auto& lms = doc["landmarks"] = nlohmann::json::array();
  for (const TrueLandmark& l : scene.landmarks) {
    lms.push_back({{"id", l.id},
                   {"position", vec_to_json(l.position)},
                   {"quality", l.quality},
                   {"normal", vec_to_json(l.normal)}});
  }
  return doc;
}

Scene scene_from_json(const nlohmann::json& doc) {
  check_schema(doc, kSceneSchema, kSceneVersion);
  try {
    Scene s;
    s.seed = doc.at("seed").get<std::uint64_t>();
    s.bounds.min = vec_from_json(doc.at("bounds").at("min"));
    s.bounds.max = vec_from_json(doc.at("bounds").at("max"));
    s.wall_thickness = doc.at("wall_thickness").get<double>();
    for (const auto& o : doc.at("occluders")) {
      Occluder oc;
      oc.box.min = vec_from_json(o.at("min"));
      oc.box.max = vec_from_json(o.at("max"));
      oc.cls = o.at("class").get<std::string>() == "wall" ? OccluderClass::kWall
                                                          : OccluderClass::kLowFurniture;
      s.occluders.push_back(oc);
    }
    for (const auto& l : doc.at("landmarks")) {
      TrueLandmark lm;
      lm.id = l.at("id").get<int>();
      lm.position = vec_from_json(l.at("position"));
      lm.quality = l.at("quality").get<double>();
      if (l.contains("normal")) lm.normal = vec_from_json(l.at("normal"));
      if (lm.id != static_cast<int>(s.landmarks.size())) {
        throw SchemaError("scene: landmark ids must be dense from 0");
      }
      s.landmarks.push_back(lm);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("scene: ") + e.what());
  }
}

void save_scene(const Scene& scene, const std::string& path) {
  write_json_file(scene_to_json(scene), path);
}

Scene load_scene(const std::string& path) { return scene_from_json(read_json_file(path)); }

void write_occupancy(const OccupancyGrid& grid, std::ostream& out) {
  using namespace binio;
  put_magic(out, kGridMagic);
  put_u32(out, kGridVersion);
  for (int a = 0; a < 3; ++a) put_f64(out, grid.origin()[a]);
  put_f64(out, grid.voxel_size());
  for (int a = 0; a < 3; ++a) put_u32(out, static_cast<std::uint32_t>(grid.dims()[a]));
  put<std::uint8_t>(out, grid.degraded_resolution() ? 1 : 0);
  const auto& cells = grid.cells();
  std::uint8_t byte = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i]) byte |= static_cast<std::uint8_t>(1u << (i % 8));
    if (i % 8 == 7) {
      put(out, byte);
      byte = 0;
    }
  }
  if (cells.size() % 8 != 0) put(out, byte);
}

OccupancyGrid read_occupancy(std::istream& in) {
  using namespace binio;
  expect_magic(in, kGridMagic);
  if (get_u32(in) != kGridVersion) throw SchemaError("occupancy: unsupported version");
  Vec3 origin;
  for (int a = 0; a < 3; ++a) origin[a] = get_f64(in);
  const double voxel = get_f64(in);
  Eigen::Vector3i dims;
  for (int a = 0; a < 3; ++a) dims[a] = static_cast<int>(get_u32(in));
  const bool degraded = get<std::uint8_t>(in) != 0;
  OccupancyGrid grid(origin, voxel, dims);
  grid.set_degraded_resolution(degraded);
  const std::size_t n = static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
  std::uint8_t byte = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 8 == 0) byte = get<std::uint8_t>(in);
    if (byte & (1u << (i % 8))) {
      const int x = static_cast<int>(i % dims.x());
      const int y = static_cast<int>((i / dims.x()) % dims.y());
      const int z = static_cast<int>(i / (static_cast<std::size_t>(dims.x()) * dims.y()));
      grid.set_occupied({x, y, z}, true);
    }
  }
  return grid;
}

void save_occupancy(const OccupancyGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_occupancy(grid, out);
}

OccupancyGrid load_occupancy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return read_occupancy(in);
}

}  // namespace avl
