#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "avl/features.hpp"
#include "avl/geom.hpp"
#include "avl/learn.hpp"
#include "avl/mapping.hpp"
#include "avl/oracle.hpp"
#include "avl/policy.hpp"
#include "avl/scene.hpp"

namespace avl {

// ---------------------------------------------------------------------------
// Experiment configuration

struct Threshold {
  double dist_m = 0.1;
  double angle_deg = 1.0;

  bool operator==(const Threshold&) const = default;
};

std::vector<Threshold> default_thresholds();

struct WaypointConfig {
  double height_m = 0.5;
  double clearance_m = 0.2;
  int train_per_scene = 100;
  int test_per_scene = 100;
  int retry_budget = 5000;
};

struct CandidateConfig {
  int per_waypoint = 50;
  double pitch_min_deg = kDefaultPitchMinDeg;
  double pitch_max_deg = kDefaultPitchMaxDeg;
};

struct ExperimentConfig {
  SceneConfig scene;
  int train_scenes = 5;
  int test_scenes = 4;
  double voxel_size = kDefaultVoxelSize;
  CameraModel camera = CameraModel::default_camera();
  TrajectoryConfig mapping_trajectory;
  MappingConfig mapping;
  WaypointConfig waypoints;
  CandidateConfig candidates;
  OracleConfig oracle;
  Threshold label_threshold;
  std::vector<Threshold> thresholds = default_thresholds();
  double cone_slack_deg = kDefaultConeSlackDeg;
  AggregationConfig aggregation;
  MlpConfig mlp;  // input_dim follows the aggregation
  VptConfig vpt;  // d_in follows the descriptor size
  bool learned_occlusion_filter = true;
  TrainConfig training;
  double validation_fraction = 0.2;
  double fim_pixel_sigma = 1.0;
  std::vector<std::string> policies;
};

std::vector<std::string> default_policies();

// Missing keys take defaults; unknown keys and out-of-range values throw
// ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::string& path);
// Hash of the canonical (defaults filled in) configuration.
std::string config_hash(const ExperimentConfig& c);

// ---------------------------------------------------------------------------
// Worlds

enum class Split { kTrain, kTest };
std::string to_string(Split s);

std::uint64_t scene_seed(std::uint64_t master_seed, Split split, int index);

// A generated scene with its occupancy grid and landmark map.
struct World {
  Split split = Split::kTrain;
  int index = 0;
  std::uint64_t seed = 0;
  Scene scene;
  OccupancyGrid grid;
  LandmarkMap map;
};

// Scene and grid only.
World build_scene(const ExperimentConfig& c, Split split, int index, std::uint64_t master_seed);
// Mapping run at head height over an existing scene.
void build_map(const ExperimentConfig& c, World& w);

struct Waypoint {
  Vec3 position = Vec3::Zero();
  Vec3 next = Vec3::Zero();  // following waypoint of the walk
};

// Random collision-free walk at robot height. Throws GenerationError when
// the scene has no free waypoints.
std::vector<Waypoint> sample_waypoints(const World& w, const WaypointConfig& c, int count);

// ---------------------------------------------------------------------------
// Dataset

// The part of a frustum feature that depends on the viewpoint.
struct ViewEntry {
  std::uint32_t landmark = 0;  // index into Shard::landmarks
  float distance = 0, view_angle = 0, pixel_u = 0, pixel_v = 0, dir_deviation = 0;
  bool in_seen_cone = false;
  bool occluded = false;
};

struct DatasetRecord {
  int waypoint = 0;
  int candidate = 0;
  double yaw_deg = 0, pitch_deg = 0;
  Pose pose;
  bool success = false;
  double pos_error_m = kFailureError;
  double rot_error_deg = kFailureError;
  int label = 0;
  std::vector<ViewEntry> views;  // frustum only, occlusion flagged
};

// All records of one scene plus the map data they refer to.
struct Shard {
  Split split = Split::kTrain;
  int scene_index = 0;
  std::uint64_t scene_seed = 0;
  int descriptor_dim = 8;
  std::vector<MappedLandmark> landmarks;  // sorted by id
  std::vector<Waypoint> waypoints;
  std::vector<DatasetRecord> records;  // waypoint-major, candidate-minor

  // Raw feature set of a record; occluded entries are dropped when
  // `occlusion_filter` is set and flagged otherwise.
  FeatureSet features(const DatasetRecord& r, bool occlusion_filter) const;
  LandmarkMap map() const;
  bool operator==(const Shard&) const;
};

int label_for(const LocalizationResult& r, const Threshold& t);
bool within(bool success, double pos_m, double rot_deg, const Threshold& t);

Shard generate_shard(const ExperimentConfig& c, const World& w, int waypoint_count);

void save_shard(const Shard& s, const std::string& path);
Shard load_shard(const std::string& path);

std::string shard_file_name(Split split, int index);

// Writes every shard of both splits into `data_dir` with a JSON schema
// sidecar, skipping shards already recorded as complete for the same
// configuration and seed. Returns the sidecar document.
nlohmann::json gen_dataset(const ExperimentConfig& c, std::uint64_t master_seed,
                           const std::string& data_dir,
                           const std::vector<World>* prebuilt = nullptr);
std::vector<Shard> load_split(const std::string& data_dir, Split split);

// Indices kept after undersampling the majority class, ascending. Throws
// TrainingError for single-class input.
std::vector<std::size_t> balance(const std::vector<int>& labels, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training

struct TrainedModels {
  LearnedModel mlp;
  LearnedModel vpt;
  nlohmann::json log;
};

// Holds out a seeded fraction of waypoints for validation, balances both
// parts, freezes normalization ranges on the training part, and trains
// both scorers.
TrainedModels train_models(const ExperimentConfig& c, const std::vector<Shard>& train,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Evaluation

struct Selection {
  int scene = 0;
  int waypoint = 0;
  int candidate = 0;
  bool success = false;
  double pos_error_m = kFailureError;
  double rot_error_deg = kFailureError;
};

struct PolicyResult {
  std::string policy;
  std::vector<double> recall;  // percent, one per threshold
  std::vector<Selection> selections;
  std::vector<double> cdf;  // fraction of waypoints at or below each grid error
};

struct EvalReport {
  std::vector<Threshold> thresholds;
  std::vector<double> cdf_grid;  // position errors, m
  int waypoint_count = 0;
  std::vector<PolicyResult> rows;
};

// Wall-clock scoring cost, kept out of the report so reports stay
// reproducible.
struct PolicyTiming {
  std::string policy;
  double seconds = 0.0;
  long candidates = 0;
};

std::vector<double> default_cdf_grid();

// Paired evaluation over stored test shards: every policy picks among the
// same recorded candidates and inherits their recorded localization.
// BestPossible reports, per threshold, whether any candidate met it.
EvalReport evaluate(const ExperimentConfig& c, const std::vector<Shard>& test,
                    const LearnedModel* mlp, const LearnedModel* vpt, std::uint64_t seed,
                    std::vector<PolicyTiming>* timing = nullptr);

// Percent of waypoints whose recorded candidates meet `t`, averaged over
// waypoints: the expected recall of a uniformly random pick.
double random_policy_expectation(const std::vector<Shard>& test, const Threshold& t);

const PolicyResult& row(const EvalReport& r, const std::string& policy);
std::size_t threshold_index(const EvalReport& r, const Threshold& t);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// "markdown", "csv" or "json"; throws UsageError otherwise.
std::string render_report(const EvalReport& r, const std::string& format);

// ---------------------------------------------------------------------------
// Run directories

inline constexpr char kToolVersion[] = "1.0.0";

// Versions of every on-disk format, recorded in manifests.
nlohmann::json component_versions();

// Adds or replaces the entry of `stage` in <run_dir>/manifest.json. Throws
// ConfigError when the run directory already belongs to a different
// configuration.
void record_stage(const std::string& run_dir, const std::string& stage, const ExperimentConfig& c,
                  std::uint64_t seed, const nlohmann::json& outputs);

}  // namespace avl
