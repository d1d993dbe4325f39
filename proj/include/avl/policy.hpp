#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "avl/features.hpp"
#include "avl/geom.hpp"
#include "avl/mapping.hpp"
#include "avl/oracle.hpp"
#include "avl/scene.hpp"

namespace avl {

class LearnedModel;

enum class PolicyKind { kForward, kRandom, kMax, kAngle, kFim, kMlp, kVpt, kBestPossible };

enum class FimScalarization { kTrace, kLogDetDamped, kMinEig };

struct PolicySpec {
  PolicyKind kind = PolicyKind::kMax;
  bool occlusion_filter = false;
  FimScalarization scalarization = FimScalarization::kTrace;

  // Stable report label, e.g. "max", "angle+occl", "best_possible".
  std::string name() const;
  // BestPossible needs the localization oracle and can never be deployed.
  bool deployable() const { return kind != PolicyKind::kBestPossible; }
  bool learned() const { return kind == PolicyKind::kMlp || kind == PolicyKind::kVpt; }
};

// Parses a label produced by PolicySpec::name(). Throws ConfigError.
PolicySpec parse_policy(const std::string& name);
std::string to_string(FimScalarization s);
FimScalarization parse_scalarization(const std::string& s);

struct ScoredCandidate {
  ViewpointCandidate candidate;
  double score = 0.0;
  bool all_failed = false;  // BestPossible only
};

using Mat6 = Eigen::Matrix<double, 6, 6>;

inline constexpr double kFimLogDetDamping = 1e-9;

// Information of one landmark observation about the local pose increment
// [rotation; translation]: J^T J / sigma^2. Throws DegenerateInputError for
// a landmark at or behind zero depth.
Mat6 fim_single(const Vec3& map_point, const Pose& candidate_pose, const CameraModel& cam,
                double pixel_sigma);
double scalarize(const Mat6& info, FimScalarization s);

// Scores from a precomputed frustum-only feature set (occluded entries
// flagged); `occl` selects the visibility mode.
double score_max(const FeatureSet& frustum, bool occl);
double score_angle(const FeatureSet& frustum, bool occl);
double score_fim(const LandmarkMap& map, const FeatureSet& frustum, const Pose& pose,
                 const CameraModel& cam, bool occl, double pixel_sigma, FimScalarization s);

// The same scores computed from scratch.
double score_max(const LandmarkMap& map, const ViewpointCandidate& c, const CameraModel& cam,
                 const OccupancyGrid& grid, bool occl);
double score_angle(const LandmarkMap& map, const ViewpointCandidate& c, const CameraModel& cam,
                   const OccupancyGrid& grid, bool occl);
double score_fim(const LandmarkMap& map, const ViewpointCandidate& c, const CameraModel& cam,
                 const OccupancyGrid& grid, bool occl, double pixel_sigma,
                 FimScalarization s = FimScalarization::kTrace);
double score_learned(const LearnedModel& model, const LandmarkMap& map, const ViewpointCandidate& c,
                     const CameraModel& cam, const OccupancyGrid& grid, bool occl);

// Inputs some policies need beyond the map and candidates.
struct SelectContext {
  std::optional<Vec3> next_waypoint;   // Forward
  std::uint64_t random_seed = 0;       // Random
  const LearnedModel* mlp = nullptr;   // MLP
  const LearnedModel* vpt = nullptr;   // VPT
  double pixel_sigma = 1.0;            // FIM
  double cone_slack_deg = kDefaultConeSlackDeg;
};

// Per-candidate policy scores; higher is better. `frustum` holds the
// frustum-only features of each candidate. Throws UsageError for
// BestPossible and ConfigError when a required context input is missing.
std::vector<double> policy_scores(const PolicySpec& policy, const LandmarkMap& map,
                                  const CameraModel& cam,
                                  std::span<const ViewpointCandidate> candidates,
                                  std::span<const FeatureSet> frustum, const SelectContext& ctx);

// Index of the highest score; ties go to the lowest index. Throws
// EmptyRequestError for an empty list.
int argmax_index(std::span<const double> scores);

// Argmax of the policy score over the candidates at the position estimate
// the candidates were sampled at.
ScoredCandidate select(const PolicySpec& policy, const LandmarkMap& map, const OccupancyGrid& grid,
                       const CameraModel& cam, std::span<const ViewpointCandidate> candidates,
                       const SelectContext& ctx);

// Lexicographic (position, rotation) minimum over a recorded sweep; failures
// rank last; all failures give index 0 flagged all_failed.
int best_possible_index(std::span<const LocalizationResult> sweep, bool* all_failed = nullptr);

// Runs the oracle for every candidate with a per-candidate stream derived
// from `seed`, then picks as best_possible_index.
ScoredCandidate best_possible(const Scene& scene, const OccupancyGrid& grid, const LandmarkMap& map,
                              const CameraModel& cam, std::span<const ViewpointCandidate> candidates,
                              const OracleConfig& oracle, std::uint64_t seed,
                              std::vector<LocalizationResult>* sweep = nullptr);

}  // namespace avl
