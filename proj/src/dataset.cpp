#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "avl/binio.hpp"
#include "avl/errors.hpp"
#include "avl/harness.hpp"
#include "avl/json_util.hpp"
#include "avl/rng.hpp"

namespace avl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kShardMagic[9] = "AVLSHRD1";
constexpr std::uint32_t kShardVersion = 1;
constexpr int kSidecarVersion = 1;
constexpr char kSidecarName[] = "dataset.schema.json";

// Child streams of a scene seed.
enum SeedSlot : std::uint64_t {
  kSlotMappingPath = 1,
  kSlotMappingNoise = 2,
  kSlotWaypoints = 3,
  kSlotCandidates = 4,
  kSlotOracle = 5,
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

void put_u8(std::ostream& out, bool v) { binio::put<std::uint8_t>(out, v ? 1 : 0); }
std::uint8_t get_u8(std::istream& in) { return binio::get<std::uint8_t>(in); }

void put_vec(std::ostream& out, const Vec3& v) {
  for (int k = 0; k < 3; ++k) binio::put_f64(out, v[k]);
}

Vec3 get_vec(std::istream& in) {
  Vec3 v;
  for (int k = 0; k < 3; ++k) v[k] = binio::get_f64(in);
  return v;
}

std::string serialize(const Shard& s) {
  std::ostringstream out(std::ios::binary);
  binio::put_magic(out, kShardMagic);
  binio::put_u32(out, kShardVersion);
  binio::put_u32(out, s.split == Split::kTrain ? 0 : 1);
  binio::put_u32(out, static_cast<std::uint32_t>(s.scene_index));
  binio::put_u64(out, s.scene_seed);
  binio::put_u32(out, static_cast<std::uint32_t>(s.descriptor_dim));

  binio::put_u32(out, static_cast<std::uint32_t>(s.landmarks.size()));
  for (const MappedLandmark& l : s.landmarks) {
    binio::put_u32(out, static_cast<std::uint32_t>(l.id));
    put_vec(out, l.position);
    binio::put_f64(out, l.stats.dist_min);
    binio::put_f64(out, l.stats.dist_max);
    binio::put_f64(out, l.stats.ang_min);
    binio::put_f64(out, l.stats.ang_max);
    put_vec(out, l.stats.mean_view_dir);
    binio::put_f64(out, l.stats.cone_half_angle);
    binio::put_u32(out, static_cast<std::uint32_t>(l.stats.obs_count));
    if (l.descriptor.size() != s.descriptor_dim) throw SchemaError("shard: descriptor size mismatch");
    for (Eigen::Index k = 0; k < l.descriptor.size(); ++k) binio::put_f64(out, l.descriptor[k]);
  }

  binio::put_u32(out, static_cast<std::uint32_t>(s.waypoints.size()));
  for (const Waypoint& w : s.waypoints) {
    put_vec(out, w.position);
    put_vec(out, w.next);
  }

  binio::put_u32(out, static_cast<std::uint32_t>(s.records.size()));
  for (const DatasetRecord& r : s.records) {
    binio::put_u32(out, static_cast<std::uint32_t>(r.waypoint));
    binio::put_u32(out, static_cast<std::uint32_t>(r.candidate));
    binio::put_f64(out, r.yaw_deg);
    binio::put_f64(out, r.pitch_deg);
    put_vec(out, r.pose.position());
    const Quat& q = r.pose.orientation();
    for (double v : {q.w(), q.x(), q.y(), q.z()}) binio::put_f64(out, v);
    put_u8(out, r.success);
    binio::put_f64(out, r.pos_error_m);
    binio::put_f64(out, r.rot_error_deg);
    put_u8(out, r.label != 0);
    binio::put_u32(out, static_cast<std::uint32_t>(r.views.size()));
    for (const ViewEntry& v : r.views) {
      binio::put_u32(out, v.landmark);
      for (float f : {v.distance, v.view_angle, v.pixel_u, v.pixel_v, v.dir_deviation}) {
        binio::put_f32(out, f);
      }
      binio::put<std::uint8_t>(out, static_cast<std::uint8_t>((v.in_seen_cone ? 1 : 0) |
                                                              (v.occluded ? 2 : 0)));
    }
  }
  return out.str();
}

Shard deserialize(std::istream& in) {
  binio::expect_magic(in, kShardMagic);
  if (binio::get_u32(in) != kShardVersion) throw SchemaError("shard: unsupported version");
  Shard s;
  s.split = binio::get_u32(in) == 0 ? Split::kTrain : Split::kTest;
  s.scene_index = static_cast<int>(binio::get_u32(in));
  s.scene_seed = binio::get_u64(in);
  s.descriptor_dim = static_cast<int>(binio::get_u32(in));
  if (s.descriptor_dim < 1 || s.descriptor_dim > 4096) throw SchemaError("shard: bad descriptor size");

  const std::uint32_t nl = binio::get_u32(in);
  s.landmarks.resize(nl);
  for (MappedLandmark& l : s.landmarks) {
    l.id = static_cast<int>(binio::get_u32(in));
    l.position = get_vec(in);
    l.stats.dist_min = binio::get_f64(in);
    l.stats.dist_max = binio::get_f64(in);
    l.stats.ang_min = binio::get_f64(in);
    l.stats.ang_max = binio::get_f64(in);
    l.stats.mean_view_dir = get_vec(in);
    l.stats.cone_half_angle = binio::get_f64(in);
    l.stats.obs_count = static_cast<int>(binio::get_u32(in));
    l.descriptor.resize(s.descriptor_dim);
    for (int k = 0; k < s.descriptor_dim; ++k) l.descriptor[k] = binio::get_f64(in);
  }

  const std::uint32_t nw = binio::get_u32(in);
  s.waypoints.resize(nw);
  for (Waypoint& w : s.waypoints) {
    w.position = get_vec(in);
    w.next = get_vec(in);
  }

  const std::uint32_t nr = binio::get_u32(in);
  s.records.resize(nr);
  for (DatasetRecord& r : s.records) {
    r.waypoint = static_cast<int>(binio::get_u32(in));
    r.candidate = static_cast<int>(binio::get_u32(in));
    if (r.waypoint >= static_cast<int>(nw)) throw SchemaError("shard: waypoint index out of range");
    r.yaw_deg = binio::get_f64(in);
    r.pitch_deg = binio::get_f64(in);
    const Vec3 p = get_vec(in);
    double q[4];
    for (double& v : q) v = binio::get_f64(in);
    r.pose = Pose(p, Quat(q[0], q[1], q[2], q[3]));
    r.success = get_u8(in) != 0;
    r.pos_error_m = binio::get_f64(in);
    r.rot_error_deg = binio::get_f64(in);
    r.label = get_u8(in) != 0 ? 1 : 0;
    const std::uint32_t nv = binio::get_u32(in);
    if (nv > nl) throw SchemaError("shard: more views than landmarks");
    r.views.resize(nv);
    for (ViewEntry& v : r.views) {
      v.landmark = binio::get_u32(in);
      if (v.landmark >= nl) throw SchemaError("shard: landmark index out of range");
      v.distance = binio::get_f32(in);
      v.view_angle = binio::get_f32(in);
      v.pixel_u = binio::get_f32(in);
      v.pixel_v = binio::get_f32(in);
      v.dir_deviation = binio::get_f32(in);
      const std::uint8_t flags = binio::get<std::uint8_t>(in);
      v.in_seen_cone = (flags & 1) != 0;
      v.occluded = (flags & 2) != 0;
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw SchemaError("shard: trailing bytes");
  return s;
}

json layout_json() {
  return {{"byte_order", "little"},
          {"header", "magic[8]=AVLSHRD1 u32 version u32 split u32 scene_index u64 scene_seed "
                     "u32 descriptor_dim"},
          {"landmark", "u32 id f64[3] position f64 dist_min f64 dist_max f64 ang_min f64 ang_max "
                       "f64[3] mean_view_dir f64 cone_half_angle u32 obs_count "
                       "f64[descriptor_dim] descriptor"},
          {"waypoint", "f64[3] position f64[3] next"},
          {"record", "u32 waypoint u32 candidate f64 yaw_deg f64 pitch_deg f64[3] position "
                     "f64[4] orientation_wxyz u8 success f64 pos_error_m f64 rot_error_deg "
                     "u8 label u32 view_count view[view_count]"},
          {"view", "u32 landmark_index f32 distance f32 view_angle f32 pixel_u f32 pixel_v "
                   "f32 dir_deviation u8 flags(1=in_seen_cone,2=occluded)"},
          {"sections", "header, u32 count + landmarks, u32 count + waypoints, u32 count + records"}};
}

json sidecar_skeleton(const ExperimentConfig& c, std::uint64_t master_seed) {
  return {{"schema", "avl.dataset"},
          {"version", kSidecarVersion},
          {"config_hash", config_hash(c)},
          {"master_seed", master_seed},
          {"label_threshold", {{"dist_m", c.label_threshold.dist_m},
                               {"angle_deg", c.label_threshold.angle_deg}}},
          {"candidates_per_waypoint", c.candidates.per_waypoint},
          {"descriptor_dim", c.mapping.descriptor.dim},
          {"feature_schema",
           feature_schema_string(c.aggregation, c.mapping.descriptor.dim, c.vpt.n_max)},
          {"shard_layout", layout_json()},
          {"shards", json::array()}};
}

}  // namespace

std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

std::uint64_t scene_seed(std::uint64_t master_seed, Split split, int index) {
  return derive_seed(master_seed, {split == Split::kTrain ? 0u : 1u, static_cast<std::uint64_t>(index)});
}

World build_scene(const ExperimentConfig& c, Split split, int index, std::uint64_t master_seed) {
  World w;
  w.split = split;
  w.index = index;
  w.seed = scene_seed(master_seed, split, index);
  w.scene = gen_scene(c.scene, w.seed);
  w.grid = build_occupancy(w.scene, c.voxel_size);
  return w;
}

void build_map(const ExperimentConfig& c, World& w) {
  const std::vector<Pose> path =
      make_mapping_trajectory(w.scene, w.grid, c.mapping_trajectory, derive_seed(w.seed, {kSlotMappingPath}));
  w.map = simulate_mapping(w.scene, w.grid, path, c.camera, c.mapping,
                           derive_seed(w.seed, {kSlotMappingNoise}));
}

std::vector<Waypoint> sample_waypoints(const World& w, const WaypointConfig& c, int count) {
  if (count < 1) throw EmptyRequestError("sample_waypoints: count must be positive");
  TrajectoryConfig t;
  t.height_m = c.height_m;
  t.clearance_m = c.clearance_m;
  t.waypoint_count = count + 1;
  t.retry_budget = c.retry_budget;
  const std::vector<Pose> walk =
      make_mapping_trajectory(w.scene, w.grid, t, derive_seed(w.seed, {kSlotWaypoints}));
  std::vector<Waypoint> out(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].position = walk[i].position();
    out[i].next = walk[i + 1].position();
  }
  return out;
}

bool within(bool success, double pos_m, double rot_deg, const Threshold& t) {
  return success && pos_m <= t.dist_m && rot_deg <= t.angle_deg;
}

int label_for(const LocalizationResult& r, const Threshold& t) {
  return within(r.success, r.pos_error_m, r.rot_error_deg, t) ? 1 : 0;
}

FeatureSet Shard::features(const DatasetRecord& r, bool occlusion_filter) const {
  FeatureSet out;
  out.landmarks.reserve(r.views.size());
  for (const ViewEntry& v : r.views) {
    if (occlusion_filter && v.occluded) continue;
    const MappedLandmark& l = landmarks.at(v.landmark);
    PerLandmarkFeature f;
    f.landmark_id = l.id;
    f.distance = v.distance;
    f.view_angle = v.view_angle;
    f.dist_min = l.stats.dist_min;
    f.dist_max = l.stats.dist_max;
    f.ang_min = l.stats.ang_min;
    f.ang_max = l.stats.ang_max;
    f.pixel_u = v.pixel_u;
    f.pixel_v = v.pixel_v;
    f.dir_deviation = v.dir_deviation;
    f.in_seen_cone = v.in_seen_cone;
    f.occluded = v.occluded;
    f.descriptor = l.descriptor;
    out.landmarks.push_back(std::move(f));
  }
  return out;
}

LandmarkMap Shard::map() const {
  LandmarkMap m;
  m.landmarks = landmarks;
  m.source_scene_seed = scene_seed;
  return m;
}

bool Shard::operator==(const Shard& other) const { return serialize(*this) == serialize(other); }

Shard generate_shard(const ExperimentConfig& c, const World& w, int waypoint_count) {
  Shard s;
  s.split = w.split;
  s.scene_index = w.index;
  s.scene_seed = w.seed;
  s.descriptor_dim = c.mapping.descriptor.dim;
  s.landmarks = w.map.landmarks;
  std::unordered_map<int, std::uint32_t> slot;
  for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
    slot[s.landmarks[i].id] = static_cast<std::uint32_t>(i);
  }
  s.waypoints = sample_waypoints(w, c.waypoints, waypoint_count);
  s.records.reserve(s.waypoints.size() * static_cast<std::size_t>(c.candidates.per_waypoint));
  for (std::size_t wi = 0; wi < s.waypoints.size(); ++wi) {
    const auto wid = static_cast<std::uint64_t>(wi);
    const std::vector<ViewpointCandidate> cands =
        sample_viewpoints(s.waypoints[wi].position, c.candidates.per_waypoint,
                          c.candidates.pitch_min_deg, c.candidates.pitch_max_deg,
                          derive_seed(w.seed, {kSlotCandidates, wid}));
    const std::uint64_t oracle_seed = derive_seed(w.seed, {kSlotOracle, wid});
    for (const ViewpointCandidate& cand : cands) {
      DatasetRecord r;
      r.waypoint = static_cast<int>(wi);
      r.candidate = cand.index;
      r.yaw_deg = cand.yaw_deg;
      r.pitch_deg = cand.pitch_deg;
      r.pose = cand.pose;
      const FeatureSet f =
          per_landmark_features(w.map, cand, c.camera, false, w.grid, c.cone_slack_deg);
      r.views.reserve(f.landmarks.size());
      for (const PerLandmarkFeature& l : f.landmarks) {
        ViewEntry v;
        v.landmark = slot.at(l.landmark_id);
        v.distance = static_cast<float>(l.distance);
        v.view_angle = static_cast<float>(l.view_angle);
        v.pixel_u = static_cast<float>(l.pixel_u);
        v.pixel_v = static_cast<float>(l.pixel_v);
        v.dir_deviation = static_cast<float>(l.dir_deviation);
        v.in_seen_cone = l.in_seen_cone;
        v.occluded = l.occluded;
        r.views.push_back(v);
      }
      Rng rng(derive_seed(oracle_seed, {static_cast<std::uint64_t>(cand.index)}));
      const LocalizationResult loc = localize(w.scene, w.grid, w.map, cand.pose, c.camera, c.oracle, rng);
      r.success = loc.success;
      r.pos_error_m = loc.pos_error_m;
      r.rot_error_deg = loc.rot_error_deg;
      r.label = label_for(loc, c.label_threshold);
      s.records.push_back(std::move(r));
    }
  }
  return s;
}

void save_shard(const Shard& s, const std::string& path) { write_file_atomic(path, serialize(s)); }

Shard load_shard(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return deserialize(in);
}

std::string shard_file_name(Split split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d.shard", to_string(split).c_str(), index);
  return buf;
}

json gen_dataset(const ExperimentConfig& c, std::uint64_t master_seed, const std::string& data_dir,
                 const std::vector<World>* prebuilt) {
  fs::create_directories(data_dir);
  const std::string sidecar_path = (fs::path(data_dir) / kSidecarName).string();
  json sidecar = sidecar_skeleton(c, master_seed);
  // Shards already completed under the same configuration and seed.
  std::map<std::string, json> done;
  if (fs::exists(sidecar_path)) {
    const json old = read_json_file(sidecar_path);
    if (old.value("config_hash", "") == sidecar["config_hash"] &&
        old.value("master_seed", std::uint64_t{0}) == master_seed && old.contains("shards")) {
      for (const json& e : old["shards"]) done[e.at("file").get<std::string>()] = e;
    }
  }

  auto run_split = [&](Split split, int scenes, int waypoints) {
    for (int i = 0; i < scenes; ++i) {
      const std::string name = shard_file_name(split, i);
      const std::string path = (fs::path(data_dir) / name).string();
      const auto it = done.find(name);
      if (it != done.end() && fs::exists(path) &&
          schema_hash(read_file(path)) == it->second.at("hash").get<std::string>()) {
        sidecar["shards"].push_back(it->second);
        continue;
      }
      const World* world = nullptr;
      World built;
      if (prebuilt) {
        for (const World& w : *prebuilt) {
          if (w.split == split && w.index == i) world = &w;
        }
      }
      if (!world) {
        built = build_scene(c, split, i, master_seed);
        build_map(c, built);
        world = &built;
      }
      const Shard shard = generate_shard(c, *world, waypoints);
      const std::string bytes = serialize(shard);
      write_file_atomic(path, bytes);
      int positives = 0;
      for (const DatasetRecord& r : shard.records) positives += r.label;
      sidecar["shards"].push_back({{"file", name},
                                   {"split", to_string(split)},
                                   {"scene_index", i},
                                   {"scene_seed", shard.scene_seed},
                                   {"waypoints", shard.waypoints.size()},
                                   {"records", shard.records.size()},
                                   {"positives", positives},
                                   {"landmarks", shard.landmarks.size()},
                                   {"bytes", bytes.size()},
                                   {"hash", schema_hash(bytes)}});
      // Progress is recorded per shard so an interrupted run resumes here.
      json progress = sidecar;
      for (const auto& [file, entry] : done) {
        bool listed = false;
        for (const json& e : progress["shards"]) listed = listed || e["file"] == file;
        if (!listed) progress["shards"].push_back(entry);
      }
      write_file_atomic(sidecar_path, progress.dump(2) + "\n");
    }
  };
  run_split(Split::kTrain, c.train_scenes, c.waypoints.train_per_scene);
  run_split(Split::kTest, c.test_scenes, c.waypoints.test_per_scene);
  write_file_atomic(sidecar_path, sidecar.dump(2) + "\n");
  return sidecar;
}

std::vector<Shard> load_split(const std::string& data_dir, Split split) {
  const std::string sidecar_path = (fs::path(data_dir) / kSidecarName).string();
  const json sidecar = read_json_file(sidecar_path);
  check_schema(sidecar, "avl.dataset", kSidecarVersion);
  std::vector<Shard> out;
  for (const json& e : sidecar.at("shards")) {
    if (e.at("split").get<std::string>() != to_string(split)) continue;
    const std::string path = (fs::path(data_dir) / e.at("file").get<std::string>()).string();
    const std::string bytes = read_file(path);
    if (schema_hash(bytes) != e.at("hash").get<std::string>()) {
      throw SchemaError("shard " + path + " does not match its recorded hash");
    }
    std::istringstream in(bytes, std::ios::binary);
    out.push_back(deserialize(in));
  }
  return out;
}

std::vector<std::size_t> balance(const std::vector<int>& labels, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] != 0 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw TrainingError("balance: both classes are required");
  std::vector<std::size_t>& major = pos.size() > neg.size() ? pos : neg;
  const std::vector<std::size_t>& minor = pos.size() > neg.size() ? neg : pos;
  Rng rng(seed);
  rng.shuffle(major.begin(), major.end());
  major.resize(minor.size());
  std::vector<std::size_t> keep = pos;
  keep.insert(keep.end(), neg.begin(), neg.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

}  // namespace avl
