#include "avl/policy.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "avl/errors.hpp"
#include "avl/learn.hpp"
#include "avl/rng.hpp"

namespace avl {

namespace {

struct KindName {
  PolicyKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {PolicyKind::kForward, "forward"}, {PolicyKind::kRandom, "random"},
    {PolicyKind::kMax, "max"},         {PolicyKind::kAngle, "angle"},
    {PolicyKind::kFim, "fim"},         {PolicyKind::kMlp, "mlp"},
    {PolicyKind::kVpt, "vpt"},         {PolicyKind::kBestPossible, "best_possible"},
};

constexpr char kOcclSuffix[] = "+occl";

const MappedLandmark& landmark_by_id(const LandmarkMap& map, int id) {
  const auto it = std::lower_bound(map.landmarks.begin(), map.landmarks.end(), id,
                                   [](const MappedLandmark& m, int v) { return m.id < v; });
  if (it == map.landmarks.end() || it->id != id) {
    throw UsageError("landmark id not in map: " + std::to_string(id));
  }
  return *it;
}

}  // namespace

std::string PolicySpec::name() const {
  std::string n;
  for (const KindName& k : kKindNames) {
    if (k.kind == kind) n = k.name;
  }
  if (kind == PolicyKind::kFim && scalarization != FimScalarization::kTrace) {
    n += "_" + to_string(scalarization);
  }
  if (occlusion_filter) n += kOcclSuffix;
  return n;
}

PolicySpec parse_policy(const std::string& name) {
  PolicySpec p;
  std::string base = name;
  const std::string suffix = kOcclSuffix;
  if (base.size() > suffix.size() && base.ends_with(suffix)) {
    p.occlusion_filter = true;
    base.resize(base.size() - suffix.size());
  }
  if (base.starts_with("fim_")) {
    p.scalarization = parse_scalarization(base.substr(4));
    base = "fim";
  }
  for (const KindName& k : kKindNames) {
    if (base == k.name) {
      p.kind = k.kind;
      return p;
    }
  }
  throw ConfigError("unknown policy: " + name);
}

std::string to_string(FimScalarization s) {
  switch (s) {
    case FimScalarization::kTrace: return "trace";
    case FimScalarization::kLogDetDamped: return "logdet";
    case FimScalarization::kMinEig: return "mineig";
  }
  return "trace";
}

FimScalarization parse_scalarization(const std::string& s) {
  if (s == "trace") return FimScalarization::kTrace;
  if (s == "logdet") return FimScalarization::kLogDetDamped;
  if (s == "mineig") return FimScalarization::kMinEig;
  throw ConfigError("unknown FIM scalarization: " + s);
}

// ---------------------------------------------------------------------------
// Scores

Mat6 fim_single(const Vec3& map_point, const Pose& candidate_pose, const CameraModel& cam,
                double pixel_sigma) {
  const Vec3 pc = candidate_pose.to_camera(map_point);
  if (!(pc.z() > 1e-12)) throw DegenerateInputError("fim_single: landmark at or behind zero depth");
  const Eigen::Matrix<double, 2, 6> j = pose_projection_jacobian(pc, cam);
  return j.transpose() * j / (pixel_sigma * pixel_sigma);
}

double scalarize(const Mat6& info, FimScalarization s) {
  switch (s) {
    case FimScalarization::kTrace:
      return info.trace();
    case FimScalarization::kLogDetDamped:
      return std::log((info + kFimLogDetDamping * Mat6::Identity()).determinant());
    case FimScalarization::kMinEig: {
      Eigen::SelfAdjointEigenSolver<Mat6> es(info, Eigen::EigenvaluesOnly);
      return es.eigenvalues()[0];
    }
  }
  return 0.0;
}

double score_max(const FeatureSet& frustum, bool occl) {
  if (!occl) return static_cast<double>(frustum.landmarks.size());
  return static_cast<double>(std::count_if(frustum.landmarks.begin(), frustum.landmarks.end(),
                                           [](const PerLandmarkFeature& f) { return !f.occluded; }));
}

double score_angle(const FeatureSet& frustum, bool occl) {
  return static_cast<double>(
      std::count_if(frustum.landmarks.begin(), frustum.landmarks.end(),
                    [&](const PerLandmarkFeature& f) { return f.in_seen_cone && !(occl && f.occluded); }));
}

double score_fim(const LandmarkMap& map, const FeatureSet& frustum, const Pose& pose,
                 const CameraModel& cam, bool occl, double pixel_sigma, FimScalarization s) {
  Mat6 info = Mat6::Zero();
  for (const PerLandmarkFeature& f : frustum.landmarks) {
    if (occl && f.occluded) continue;
    info += fim_single(landmark_by_id(map, f.landmark_id).position, pose, cam, pixel_sigma);
  }
  return scalarize(info, s);
}

double score_max(const LandmarkMap& map, const ViewpointCandidate& c, const CameraModel& cam,
                 const OccupancyGrid& grid, bool occl) {
  return score_max(per_landmark_features(map, c, cam, occl, grid), occl);
}

double score_angle(const LandmarkMap& map, const ViewpointCandidate& c, const CameraModel& cam,
                   const OccupancyGrid& grid, bool occl) {
  return score_angle(per_landmark_features(map, c, cam, occl, grid), occl);
}

double score_fim(const LandmarkMap& map, const ViewpointCandidate& c, const CameraModel& cam,
                 const OccupancyGrid& grid, bool occl, double pixel_sigma, FimScalarization s) {
  return score_fim(map, per_landmark_features(map, c, cam, occl, grid), c.pose, cam, occl,
                   pixel_sigma, s);
}

double score_learned(const LearnedModel& model, const LandmarkMap& map, const ViewpointCandidate& c,
                     const CameraModel& cam, const OccupancyGrid& grid, bool occl) {
  return model.probability(per_landmark_features(map, c, cam, occl, grid));
}

// ---------------------------------------------------------------------------
// Selection

std::vector<double> policy_scores(const PolicySpec& policy, const LandmarkMap& map,
                                  const CameraModel& cam,
                                  std::span<const ViewpointCandidate> candidates,
                                  std::span<const FeatureSet> frustum, const SelectContext& ctx) {
  if (frustum.size() != candidates.size()) {
    throw UsageError("policy_scores: one feature set per candidate required");
  }
  const std::size_t n = candidates.size();
  std::vector<double> s(n, 0.0);
  const bool occl = policy.occlusion_filter;
  switch (policy.kind) {
    case PolicyKind::kForward: {
      if (!ctx.next_waypoint) throw ConfigError("forward policy needs the next waypoint");
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 dir = *ctx.next_waypoint - candidates[i].pose.position();
        s[i] = dir.norm() > 0.0 ? -angle_between_deg(candidates[i].pose.forward(), dir) : 0.0;
      }
      break;
    }
    case PolicyKind::kRandom: {
      if (n == 0) break;
      Rng rng(ctx.random_seed);
      s[rng.below(n)] = 1.0;
      break;
    }
    case PolicyKind::kMax:
      for (std::size_t i = 0; i < n; ++i) s[i] = score_max(frustum[i], occl);
      break;
    case PolicyKind::kAngle:
      for (std::size_t i = 0; i < n; ++i) s[i] = score_angle(frustum[i], occl);
      break;
    case PolicyKind::kFim:
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = score_fim(map, frustum[i], candidates[i].pose, cam, occl, ctx.pixel_sigma,
                         policy.scalarization);
      }
      break;
    case PolicyKind::kMlp:
    case PolicyKind::kVpt: {
      const LearnedModel* m = policy.kind == PolicyKind::kMlp ? ctx.mlp : ctx.vpt;
      if (m == nullptr) throw ConfigError("policy " + policy.name() + " needs a trained model");
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = m->probability(occl ? drop_occluded(frustum[i]) : frustum[i]);
      }
      break;
    }
    case PolicyKind::kBestPossible:
      throw UsageError("best_possible is scored by the oracle, not by policy_scores");
  }
  return s;
}

int argmax_index(std::span<const double> scores) {
  if (scores.empty()) throw EmptyRequestError("select: empty candidate list");
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

ScoredCandidate select(const PolicySpec& policy, const LandmarkMap& map, const OccupancyGrid& grid,
                       const CameraModel& cam, std::span<const ViewpointCandidate> candidates,
                       const SelectContext& ctx) {
  if (candidates.empty()) throw EmptyRequestError("select: empty candidate list");
  std::vector<FeatureSet> frustum;
  frustum.reserve(candidates.size());
  const bool needs_features = policy.kind != PolicyKind::kForward && policy.kind != PolicyKind::kRandom;
  for (const ViewpointCandidate& c : candidates) {
    frustum.push_back(needs_features
                          ? per_landmark_features(map, c, cam, false, grid, ctx.cone_slack_deg)
                          : FeatureSet{});
  }
  const std::vector<double> s = policy_scores(policy, map, cam, candidates, frustum, ctx);
  const int i = argmax_index(s);
  return {candidates[static_cast<std::size_t>(i)], s[static_cast<std::size_t>(i)], false};
}

int best_possible_index(std::span<const LocalizationResult> sweep, bool* all_failed) {
  if (sweep.empty()) throw EmptyRequestError("best_possible: empty sweep");
  int best = -1;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const LocalizationResult& r = sweep[i];
    if (!r.success) continue;
    if (best < 0) {
      best = static_cast<int>(i);
      continue;
    }
    const LocalizationResult& b = sweep[static_cast<std::size_t>(best)];
    if (r.pos_error_m < b.pos_error_m ||
        (r.pos_error_m == b.pos_error_m && r.rot_error_deg < b.rot_error_deg)) {
      best = static_cast<int>(i);
    }
  }
  if (all_failed) *all_failed = best < 0;
  return std::max(best, 0);
}

ScoredCandidate best_possible(const Scene& scene, const OccupancyGrid& grid, const LandmarkMap& map,
                              const CameraModel& cam, std::span<const ViewpointCandidate> candidates,
                              const OracleConfig& oracle, std::uint64_t seed,
                              std::vector<LocalizationResult>* sweep) {
  if (candidates.empty()) throw EmptyRequestError("best_possible: empty candidate list");
  std::vector<LocalizationResult> results;
  results.reserve(candidates.size());
  for (const ViewpointCandidate& c : candidates) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(c.index)}));
    results.push_back(localize(scene, grid, map, c.pose, cam, oracle, rng));
  }
  bool failed = false;
  const int i = best_possible_index(results, &failed);
  ScoredCandidate out{candidates[static_cast<std::size_t>(i)],
                      failed ? 0.0 : -results[static_cast<std::size_t>(i)].pos_error_m, failed};
  if (sweep) *sweep = std::move(results);
  return out;
}

}  // namespace avl
