#include "avl/policy.hpp"

#include <cmath>
#include <set>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "avl/errors.hpp"
#include "avl/rng.hpp"

namespace avl {
namespace {

const CameraModel kCam = CameraModel::default_camera();

struct Wall {
  Scene scene;
  OccupancyGrid grid;
  LandmarkMap map;
  Vec3 position{2.9, 3.0, 1.5};
};

// Dense landmark wall at x = 5.9 seen from the room center, optionally with
// a partition hiding the y < 3 half.
Wall make_wall(int n, bool partition, std::uint64_t seed) {
  Wall w;
  w.scene.bounds = {Vec3::Zero(), Vec3(6, 6, 3)};
  if (partition) {
    Occluder o;
    o.box = {Vec3(4.5, 0.05, 0.05), Vec3(4.7, 3.0, 2.95)};
    o.cls = OccluderClass::kWall;
    w.scene.occluders.push_back(o);
  }
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    TrueLandmark lm;
    lm.id = i;
    lm.position = Vec3(5.9, rng.uniform(1.0, 5.0), rng.uniform(0.3, 2.7));
    lm.quality = rng.uniform();
    w.scene.landmarks.push_back(lm);
    MappedLandmark m;
    m.id = i;
    m.position = lm.position;
    m.descriptor = Eigen::VectorXd::Unit(8, 0);
    m.stats.mean_view_dir = Vec3(-1, 0, 0);
    m.stats.cone_half_angle = 20.0;
    m.stats.dist_min = 2.0;
    m.stats.dist_max = 4.0;
    m.stats.obs_count = 2;
    w.map.landmarks.push_back(m);
  }
  w.grid = build_occupancy(w.scene);
  return w;
}

ViewpointCandidate facing(const Vec3& p, double yaw, double pitch = 0.0, int index = 0) {
  return {Pose::from_yaw_pitch(p, yaw, pitch), yaw, pitch, index};
}

Eigen::Matrix<double, 2, 6> numeric_jacobian(const Vec3& x, const Pose& pose) {
  const double h = 1e-6;
  Eigen::Matrix<double, 2, 6> j;
  for (int k = 0; k < 6; ++k) {
    Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
    d[k] = h;
    const Vec2 plus = project_camera_point(retract(pose, d).to_camera(x), kCam);
    const Vec2 minus = project_camera_point(retract(pose, -d).to_camera(x), kCam);
    j.col(k) = (plus - minus) / (2 * h);
  }
  return j;
}

TEST(PolicySpec, NamesRoundTrip) {
  for (const char* n : {"forward", "random", "max", "max+occl", "angle", "angle+occl", "fim",
                        "fim_logdet+occl", "fim_mineig", "mlp+occl", "vpt", "best_possible"}) {
    EXPECT_EQ(parse_policy(n).name(), n);
  }
  EXPECT_FALSE(parse_policy("best_possible").deployable());
  EXPECT_TRUE(parse_policy("vpt+occl").learned());
  EXPECT_THROW(parse_policy("maximum"), ConfigError);
  EXPECT_THROW(parse_policy("fim_det"), ConfigError);
}

TEST(ScoreMax, TrivialCases) {
  const Wall w = make_wall(50, false, 1);
  EXPECT_EQ(score_max(w.map, facing(w.position, 180), kCam, w.grid, true), 0.0);
  EXPECT_EQ(score_max(w.map, facing(w.position, 0), kCam, w.grid, true), 50.0);
  EXPECT_EQ(score_max(w.map, facing(w.position, 0), kCam, w.grid, false), 50.0);
}

TEST(ScoreMax, HalfOccludedWallMatchesBruteForce) {
  const Wall w = make_wall(80, true, 2);
  const ViewpointCandidate c = facing(w.position, 0);
  int in_frustum = 0, occluded = 0;
  for (const MappedLandmark& m : w.map.landmarks) {
    if (!visible(w.grid, c.pose, kCam, m.position, false)) continue;
    ++in_frustum;
    if (!visible(w.grid, c.pose, kCam, m.position, true)) ++occluded;
  }
  EXPECT_GT(occluded, 10);
  EXPECT_LT(occluded, in_frustum - 10);
  EXPECT_EQ(score_max(w.map, c, kCam, w.grid, false), in_frustum);
  EXPECT_EQ(score_max(w.map, c, kCam, w.grid, true), in_frustum - occluded);
}

TEST(ScoreAngle, TrivialAndCrossModule) {
  Wall w = make_wall(60, true, 3);
  const ViewpointCandidate c = facing(w.position, 0);
  for (auto& m : w.map.landmarks) m.stats.mean_view_dir = Vec3(1, 0, 0);
  EXPECT_EQ(score_angle(w.map, c, kCam, w.grid, false), 0.0);

  // Mixed membership: half of the landmarks were mapped head-on.
  for (std::size_t i = 0; i < w.map.landmarks.size(); i += 2) {
    w.map.landmarks[i].stats.mean_view_dir = (w.position - w.map.landmarks[i].position).normalized();
    w.map.landmarks[i].stats.cone_half_angle = 0.0;
  }
  for (bool occl : {false, true}) {
    const FeatureSet f = per_landmark_features(w.map, c, kCam, occl, w.grid);
    const double a = score_angle(w.map, c, kCam, w.grid, occl);
    EXPECT_EQ(a, count_in_seen_range(f));
    EXPECT_GT(a, 0.0);
    EXPECT_LE(a, score_max(w.map, c, kCam, w.grid, occl));
  }
}

TEST(ScoreAngle, EqualsMaxAtMappingPose) {
  SceneConfig sc;
  sc.landmark_count = 200;
  const Scene scene = gen_scene(sc, 11);
  const OccupancyGrid grid = build_occupancy(scene);
  const auto traj = make_mapping_trajectory(scene, grid, TrajectoryConfig{}, 11);
  MappingConfig mc;
  mc.noise_sigma_m = 0.0;
  mc.min_obs = 1;
  const LandmarkMap map = simulate_mapping(scene, grid, traj, kCam, mc, 11);
  int nonzero = 0;
  for (std::size_t i = 0; i < traj.size(); i += 6) {
    const ViewpointCandidate c{traj[i], 0.0, 0.0, 0};
    const double m = score_max(map, c, kCam, grid, true);
    EXPECT_EQ(score_angle(map, c, kCam, grid, true), m) << "pose " << i;
    nonzero += m > 0;
  }
  EXPECT_GT(nonzero, 3);
}

TEST(FimSingle, SymmetricPsdRankTwo) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const Pose pose = Pose::from_yaw_pitch(Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0, 2)),
                                           rng.uniform(0, 360), rng.uniform(-30, 30));
    const Vec3 x = pose.to_world(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 8)));
    const Mat6 info = fim_single(x, pose, kCam, rng.uniform(0.5, 2.0));
    EXPECT_EQ((info - info.transpose()).norm(), 0.0);
    Eigen::SelfAdjointEigenSolver<Mat6> es(info);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9 * es.eigenvalues().maxCoeff());
    EXPECT_LT(std::abs(es.eigenvalues()[3]), 1e-9 * es.eigenvalues()[5]);
  }
}

TEST(FimSingle, AxialClosedForm) {
  const Pose pose = Pose::from_yaw_pitch(Vec3(1, 2, 1), 30.0, 10.0);
  const double z = 3.0, sigma = 1.5;
  const Mat6 info = fim_single(pose.to_world(Vec3(0, 0, z)), pose, kCam, sigma);
  const Eigen::Matrix3d t = info.bottomRightCorner<3, 3>();
  EXPECT_NEAR(t(0, 0), kCam.fx() * kCam.fx() / (sigma * sigma * z * z), 1e-9);
  EXPECT_NEAR(t(1, 1), kCam.fy() * kCam.fy() / (sigma * sigma * z * z), 1e-9);
  EXPECT_NEAR(t(2, 2), 0.0, 1e-12);
  EXPECT_NEAR(t(0, 1), 0.0, 1e-12);
  EXPECT_THROW(fim_single(pose.to_world(Vec3(1, 0, 0)), pose, kCam, 1.0), DegenerateInputError);
  EXPECT_THROW(fim_single(pose.to_world(Vec3(0, 0, -2)), pose, kCam, 1.0), DegenerateInputError);
}

TEST(FimSingle, MatchesCentralDifferenceInformation) {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    const Pose pose = Pose::from_yaw_pitch(Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0, 2)),
                                           rng.uniform(0, 360), rng.uniform(-30, 30));
    const Vec3 x = pose.to_world(Vec3(rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(0.5, 8)));
    const double sigma = rng.uniform(0.5, 2.0);
    const Eigen::Matrix<double, 2, 6> j = numeric_jacobian(x, pose);
    const Mat6 oracle = j.transpose() * j / (sigma * sigma);
    const Mat6 info = fim_single(x, pose, kCam, sigma);
    EXPECT_LT((info - oracle).norm() / oracle.norm(), 1e-4);
  }
}

TEST(ScoreFim, EmptySigmaScalingAndAdditivity) {
  const Wall w = make_wall(60, false, 6);
  const ViewpointCandidate c = facing(w.position, 0);
  EXPECT_EQ(score_fim(w.map, facing(w.position, 180), kCam, w.grid, true, 1.0), 0.0);
  EXPECT_EQ(score_fim(w.map, facing(w.position, 180), kCam, w.grid, true, 1.0,
                      FimScalarization::kLogDetDamped),
            6 * std::log(kFimLogDetDamping));

  const double s1 = score_fim(w.map, c, kCam, w.grid, true, 1.0);
  EXPECT_EQ(score_fim(w.map, c, kCam, w.grid, true, 2.0), s1 / 4.0);

  const FeatureSet all = per_landmark_features(w.map, c, kCam, false, w.grid);
  FeatureSet a, b;
  for (std::size_t i = 0; i < all.landmarks.size(); ++i) {
    (i % 3 == 0 ? a : b).landmarks.push_back(all.landmarks[i]);
  }
  const double sa = score_fim(w.map, a, c.pose, kCam, false, 1.0, FimScalarization::kTrace);
  const double sb = score_fim(w.map, b, c.pose, kCam, false, 1.0, FimScalarization::kTrace);
  const double sab = score_fim(w.map, all, c.pose, kCam, false, 1.0, FimScalarization::kTrace);
  EXPECT_NEAR(sab, sa + sb, 1e-12 * sab);
  EXPECT_GT(sab, sa);

  // Adding landmarks one at a time never lowers the trace.
  FeatureSet grow;
  double prev = 0.0;
  for (const auto& f : all.landmarks) {
    grow.landmarks.push_back(f);
    const double s = score_fim(w.map, grow, c.pose, kCam, false, 1.0, FimScalarization::kTrace);
    EXPECT_GE(s, prev);
    prev = s;
  }
}

TEST(Select, SingleCandidateAndEmpty) {
  const Wall w = make_wall(30, false, 7);
  const std::vector<ViewpointCandidate> one{facing(w.position, 123, 0, 0)};
  SelectContext ctx;
  ctx.next_waypoint = Vec3(1, 1, 1.5);
  for (const char* p : {"forward", "random", "max", "angle+occl", "fim_mineig"}) {
    EXPECT_EQ(select(parse_policy(p), w.map, w.grid, kCam, one, ctx).candidate.yaw_deg, 123.0);
  }
  EXPECT_THROW(select(parse_policy("max"), w.map, w.grid, kCam, {}, ctx), EmptyRequestError);
  EXPECT_THROW(select(parse_policy("best_possible"), w.map, w.grid, kCam, one, ctx), UsageError);
  EXPECT_THROW(select(parse_policy("mlp"), w.map, w.grid, kCam, one, ctx), ConfigError);
  EXPECT_THROW(select(parse_policy("forward"), w.map, w.grid, kCam, one, SelectContext{}), ConfigError);
}

TEST(Select, RandomReproducibleAndSpread) {
  const Wall w = make_wall(30, false, 8);
  const auto cands = sample_viewpoints(w.position, 50, 0, 0, 8);
  SelectContext ctx;
  std::set<int> picks;
  for (std::uint64_t s = 0; s < 40; ++s) {
    ctx.random_seed = s;
    const int a = select(parse_policy("random"), w.map, w.grid, kCam, cands, ctx).candidate.index;
    const int b = select(parse_policy("random"), w.map, w.grid, kCam, cands, ctx).candidate.index;
    EXPECT_EQ(a, b);
    picks.insert(a);
  }
  EXPECT_GT(picks.size(), 20u);
}

TEST(Select, ForwardFacesNextWaypoint) {
  const Wall w = make_wall(30, false, 9);
  const auto cands = sample_viewpoints(w.position, 36, 0, 0, 9);
  SelectContext ctx;
  ctx.next_waypoint = w.position + Vec3(0, 1, 0);  // yaw 90
  const double yaw = select(parse_policy("forward"), w.map, w.grid, kCam, cands, ctx).candidate.yaw_deg;
  EXPECT_NEAR(yaw, 90.0, 10.0);
}

TEST(Select, MaxPicksDenseWallBearing) {
  const Wall w = make_wall(120, false, 10);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto cands = sample_viewpoints(w.position, 36, 0, 0, seed);
    const double yaw = select(parse_policy("max"), w.map, w.grid, kCam, cands, {}).candidate.yaw_deg;
    // The landmark centroid bears yaw 0; bins are 10 degrees wide.
    EXPECT_LE(std::min(yaw, 360.0 - yaw), 10.0) << "seed " << seed;
  }
}

TEST(Select, ArgmaxTiesAndAffineInvariance) {
  EXPECT_EQ(argmax_index(std::vector<double>{1, 3, 3, 2}), 1);
  EXPECT_THROW(argmax_index(std::vector<double>{}), EmptyRequestError);

  const Wall w = make_wall(100, true, 11);
  const auto cands = sample_viewpoints(w.position, 40, -10, 45, 11);
  std::vector<FeatureSet> frustum;
  for (const auto& c : cands) frustum.push_back(per_landmark_features(w.map, c, kCam, false, w.grid));
  for (const char* p : {"max", "max+occl", "angle", "angle+occl", "fim", "fim_logdet+occl", "fim_mineig"}) {
    const auto s = policy_scores(parse_policy(p), w.map, kCam, cands, frustum, {});
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = 2.5 * s[i] + 7.0;
    EXPECT_EQ(argmax_index(s), argmax_index(t)) << p;
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_TRUE(std::isfinite(s[i])) << p;
  }
  // Pointwise orderings of the counting baselines.
  for (std::size_t i = 0; i < cands.size(); ++i) {
    EXPECT_LE(score_angle(frustum[i], false), score_max(frustum[i], false));
    EXPECT_LE(score_angle(frustum[i], true), score_max(frustum[i], true));
    EXPECT_LE(score_max(frustum[i], true), score_max(frustum[i], false));
    EXPECT_EQ(score_max(frustum[i], true), score_max(w.map, cands[i], kCam, w.grid, true));
  }
}

LocalizationResult result(bool ok, double pos, double rot) {
  LocalizationResult r;
  r.success = ok;
  if (ok) {
    r.pos_error_m = pos;
    r.rot_error_deg = rot;
  }
  return r;
}

TEST(BestPossible, IndexRules) {
  bool failed = false;
  std::vector<LocalizationResult> sweep{result(false, 0, 0), result(true, 0.3, 2), result(false, 0, 0)};
  EXPECT_EQ(best_possible_index(sweep, &failed), 1);
  EXPECT_FALSE(failed);
  sweep = {result(true, 0.1, 1), result(true, 0.1, 1), result(true, 0.1, 1)};
  EXPECT_EQ(best_possible_index(sweep), 0);
  sweep = {result(true, 0.1, 2), result(true, 0.1, 1), result(true, 0.2, 0)};
  EXPECT_EQ(best_possible_index(sweep), 1);
  sweep = {result(false, 0, 0), result(false, 0, 0)};
  EXPECT_EQ(best_possible_index(sweep, &failed), 0);
  EXPECT_TRUE(failed);
  EXPECT_THROW(best_possible_index({}), EmptyRequestError);
}

TEST(BestPossible, FiftyCandidateSweepMinimum) {
  const Wall w = make_wall(150, true, 12);
  const auto cands = sample_viewpoints(w.position, 50, -10, 45, 12);
  std::vector<LocalizationResult> sweep;
  const ScoredCandidate best = best_possible(w.scene, w.grid, w.map, kCam, cands, OracleConfig{}, 12, &sweep);
  ASSERT_EQ(sweep.size(), 50u);
  double lowest = kFailureError;
  int successes = 0;
  for (const auto& r : sweep) {
    lowest = std::min(lowest, r.pos_error_m);
    successes += r.success;
  }
  ASSERT_GT(successes, 0);
  EXPECT_FALSE(best.all_failed);
  EXPECT_EQ(sweep[static_cast<std::size_t>(best.candidate.index)].pos_error_m, lowest);
  EXPECT_EQ(-best.score, lowest);

  std::vector<LocalizationResult> again;
  best_possible(w.scene, w.grid, w.map, kCam, cands, OracleConfig{}, 12, &again);
  for (std::size_t i = 0; i < sweep.size(); ++i) EXPECT_EQ(again[i].pos_error_m, sweep[i].pos_error_m);
}

}  // namespace
}  // namespace avl
