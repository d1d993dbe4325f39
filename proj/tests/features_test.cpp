#include "avl/features.hpp"

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "avl/errors.hpp"
#include "avl/rng.hpp"

namespace avl {
namespace {

const CameraModel kCam = CameraModel::default_camera();

Scene empty_room() {
  Scene s;
  s.bounds = {Vec3::Zero(), Vec3(6, 6, 3)};
  return s;
}

MappedLandmark mapped(int id, const Vec3& p, double dmin, double dmax, const Vec3& view_dir,
                      double cone) {
  MappedLandmark m;
  m.id = id;
  m.position = p;
  m.descriptor = Eigen::VectorXd::Unit(8, 0);
  m.stats.dist_min = dmin;
  m.stats.dist_max = dmax;
  m.stats.ang_min = 0.0;
  m.stats.ang_max = 20.0;
  m.stats.mean_view_dir = view_dir.normalized();
  m.stats.cone_half_angle = cone;
  m.stats.obs_count = 3;
  return m;
}

ViewpointCandidate at(const Vec3& p, double yaw) {
  ViewpointCandidate c;
  c.pose = Pose::from_yaw_pitch(p, yaw, 0.0);
  c.yaw_deg = yaw;
  return c;
}

PerLandmarkFeature random_feature(Rng& rng) {
  PerLandmarkFeature f;
  f.distance = rng.uniform(0.0, 15.0);
  f.view_angle = rng.uniform(0.0, 90.0);
  f.dist_min = rng.uniform(0.0, 15.0);
  f.dist_max = rng.uniform(0.0, 15.0);
  f.ang_min = rng.uniform(0.0, 90.0);
  f.ang_max = rng.uniform(0.0, 90.0);
  f.pixel_u = rng.uniform();
  f.pixel_v = rng.uniform();
  f.dir_deviation = rng.uniform(0.0, 180.0);
  f.in_seen_cone = rng.bernoulli(0.5);
  f.descriptor = Eigen::VectorXd::Zero(8);
  return f;
}

// Bin by walking the edges instead of dividing.
int naive_bin(double v, double lo, double hi, int n) {
  const double w = (hi - lo) / n;
  for (int i = 0; i < n - 1; ++i) {
    if (v < lo + (i + 1) * w) return i;
  }
  return n - 1;
}

TEST(PerLandmarkFeatures, FacingAwayIsEmpty) {
  const Scene s = empty_room();
  const OccupancyGrid g = build_occupancy(s);
  LandmarkMap map;
  map.landmarks.push_back(mapped(0, Vec3(3, 3, 1.5), 1, 3, Vec3(-1, 0, 0), 10));
  EXPECT_TRUE(per_landmark_features(map, at(Vec3(1, 3, 1.5), 180), kCam, false, g).landmarks.empty());
}

TEST(PerLandmarkFeatures, SingleLandmarkHandOracle) {
  const Scene s = empty_room();
  const OccupancyGrid g = build_occupancy(s);
  LandmarkMap map;
  map.landmarks.push_back(mapped(7, Vec3(3, 3, 1.5), 1, 3, Vec3(-1, 0, 0), 10));

  const FeatureSet ahead = per_landmark_features(map, at(Vec3(1, 3, 1.5), 0), kCam, true, g);
  ASSERT_EQ(ahead.landmarks.size(), 1u);
  const PerLandmarkFeature& f = ahead.landmarks[0];
  EXPECT_EQ(f.landmark_id, 7);
  EXPECT_NEAR(f.distance, 2.0, 1e-12);
  EXPECT_NEAR(f.view_angle, 0.0, 1e-6);
  EXPECT_NEAR(f.pixel_u, 0.5, 1e-12);
  EXPECT_NEAR(f.pixel_v, 0.5, 1e-12);
  EXPECT_NEAR(f.dir_deviation, 0.0, 1e-6);
  EXPECT_TRUE(f.in_seen_cone);
  EXPECT_FALSE(f.occluded);
  EXPECT_EQ(f.dist_min, 1.0);
  EXPECT_EQ(f.dist_max, 3.0);

  // One meter to the side: the ray leaves the mapped direction by atan(1/2)
  // and lands 200 px left of center (camera +x is world -y at yaw 0).
  const double off = std::atan(0.5) * 180.0 / std::numbers::pi;
  const FeatureSet side = per_landmark_features(map, at(Vec3(1, 2, 1.5), 0), kCam, true, g);
  ASSERT_EQ(side.landmarks.size(), 1u);
  EXPECT_NEAR(side.landmarks[0].distance, std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(side.landmarks[0].view_angle, off, 1e-9);
  EXPECT_NEAR(side.landmarks[0].dir_deviation, off, 1e-9);
  EXPECT_NEAR(side.landmarks[0].pixel_u, 120.0 / 640.0, 1e-12);
  EXPECT_NEAR(side.landmarks[0].pixel_v, 0.5, 1e-12);
  EXPECT_FALSE(side.landmarks[0].in_seen_cone);  // 26.6 > 10 + 5

  map.landmarks[0].stats.cone_half_angle = 22.0;  // 26.6 <= 22 + 5
  EXPECT_TRUE(per_landmark_features(map, at(Vec3(1, 2, 1.5), 0), kCam, true, g).landmarks[0].in_seen_cone);
}

TEST(PerLandmarkFeatures, OcclusionFilterIsSubsetAndMatchesVisible) {
  Scene s = empty_room();
  Occluder wall;
  wall.box = {Vec3(2.5, 0.05, 0.05), Vec3(2.7, 3.0, 2.95)};
  wall.cls = OccluderClass::kWall;
  s.occluders.push_back(wall);
  const OccupancyGrid g = build_occupancy(s);
  LandmarkMap map;
  Rng rng(5);
  for (int i = 0; i < 60; ++i) {
    map.landmarks.push_back(
        mapped(i, Vec3(5.9, rng.uniform(0.5, 5.5), rng.uniform(0.3, 2.7)), 1, 5, Vec3(-1, 0, 0), 10));
  }
  const ViewpointCandidate c = at(Vec3(1, 3, 1.5), 0);
  const FeatureSet off = per_landmark_features(map, c, kCam, false, g);
  const FeatureSet on = per_landmark_features(map, c, kCam, true, g);
  int occluded = 0;
  for (const auto& f : off.landmarks) occluded += f.occluded;
  EXPECT_GT(occluded, 0);
  EXPECT_LT(occluded, static_cast<int>(off.landmarks.size()));
  EXPECT_EQ(on.landmarks.size() + static_cast<std::size_t>(occluded), off.landmarks.size());

  std::size_t k = 0;
  for (const MappedLandmark& m : map.landmarks) {
    const bool vis = visible(g, c.pose, kCam, m.position, true);
    const bool listed = k < on.landmarks.size() && on.landmarks[k].landmark_id == m.id;
    EXPECT_EQ(vis, listed) << "landmark " << m.id;
    if (listed) ++k;
  }
  EXPECT_EQ(k, on.landmarks.size());

  const FeatureSet dropped = drop_occluded(off);
  ASSERT_EQ(dropped.landmarks.size(), on.landmarks.size());
  for (std::size_t i = 0; i < on.landmarks.size(); ++i) {
    EXPECT_EQ(dropped.landmarks[i].landmark_id, on.landmarks[i].landmark_id);
  }
}

TEST(CountInSeenRange, Cases) {
  FeatureSet fs;
  EXPECT_EQ(count_in_seen_range(fs), 0);
  Rng rng(1);
  for (int i = 0; i < 5; ++i) fs.landmarks.push_back(random_feature(rng));
  for (int i = 0; i < 5; ++i) fs.landmarks[static_cast<std::size_t>(i)].in_seen_cone = (i == 1 || i == 3);
  EXPECT_EQ(count_in_seen_range(fs), 2);
  for (auto& f : fs.landmarks) f.in_seen_cone = true;
  EXPECT_EQ(count_in_seen_range(fs), 5);
}

TEST(Aggregate, EmptyIsZeroWithFixedDimension) {
  const AggregatedFeature a = aggregate(FeatureSet{}, NormRanges{});
  EXPECT_EQ(a.flatten().size(), AggregationConfig{}.dim());
  EXPECT_EQ(a.flatten().size(), 161);
  EXPECT_EQ(a.flatten().squaredNorm(), 0.0);
}

TEST(Aggregate, SingleLandmarkOneCellEach) {
  Rng rng(2);
  FeatureSet fs;
  fs.landmarks.push_back(random_feature(rng));
  const AggregatedFeature a = aggregate(fs, NormRanges{});
  auto nonzero = [](const Eigen::VectorXd& v) { return (v.array() != 0.0).count(); };
  EXPECT_EQ(nonzero(a.dist_hist), 1);
  EXPECT_EQ(nonzero(a.angle_hist), 1);
  EXPECT_EQ(nonzero(a.dist_range_hists.head(16)), 1);
  EXPECT_EQ(nonzero(a.dist_range_hists.tail(16)), 1);
  EXPECT_EQ(nonzero(a.angle_range_hists.head(16)), 1);
  EXPECT_EQ(nonzero(a.angle_range_hists.tail(16)), 1);
  EXPECT_EQ(nonzero(a.pixel_heatmap), 1);
}

TEST(Aggregate, MatchesNaiveBinningOracle) {
  Rng rng(3);
  const NormRanges r;
  FeatureSet fs;
  for (int i = 0; i < 100; ++i) fs.landmarks.push_back(random_feature(rng));
  const AggregationConfig cfg{16, 8, 8};
  const AggregatedFeature a = aggregate(fs, r, cfg);

  Eigen::VectorXd dist = Eigen::VectorXd::Zero(16), ang = dist;
  Eigen::VectorXd drange = Eigen::VectorXd::Zero(32), arange = drange;
  Eigen::VectorXd heat = Eigen::VectorXd::Zero(64);
  double seen = 0;
  for (const PerLandmarkFeature& f : fs.landmarks) {
    const double d = std::clamp(f.distance / 15.0, 0.0, 1.0);
    const double dmin = std::clamp(f.dist_min / 15.0, 0.0, 1.0);
    const double dmax = std::clamp(f.dist_max / 15.0, 0.0, 1.0);
    const double v = std::clamp(f.view_angle / 90.0, 0.0, 1.0);
    const double amin = std::clamp(f.ang_min / 90.0, 0.0, 1.0);
    const double amax = std::clamp(f.ang_max / 90.0, 0.0, 1.0);
    dist[naive_bin(d, 0, 1, 16)] += 1;
    ang[naive_bin(v, 0, 1, 16)] += 1;
    drange[naive_bin(d - dmin, -1, 1, 16)] += 1;
    drange[16 + naive_bin(dmax - d, -1, 1, 16)] += 1;
    arange[naive_bin(v - amin, -1, 1, 16)] += 1;
    arange[16 + naive_bin(amax - v, -1, 1, 16)] += 1;
    heat[naive_bin(f.pixel_v, 0, 1, 8) * 8 + naive_bin(f.pixel_u, 0, 1, 8)] += 1;
    seen += f.in_seen_cone;
  }
  EXPECT_EQ(a.dist_hist, dist);
  EXPECT_EQ(a.angle_hist, ang);
  EXPECT_EQ(a.dist_range_hists, drange);
  EXPECT_EQ(a.angle_range_hists, arange);
  EXPECT_EQ(a.pixel_heatmap, heat);
  EXPECT_EQ(a.seen_count, seen);
  EXPECT_EQ(a.dist_hist.sum(), 100.0);
  EXPECT_EQ(a.pixel_heatmap.sum(), 100.0);
  EXPECT_EQ(a.dist_range_hists.sum(), 200.0);
}

TEST(Aggregate, PermutationInvariantAndDropOneDecrements) {
  Rng rng(4);
  FeatureSet fs;
  for (int i = 0; i < 80; ++i) fs.landmarks.push_back(random_feature(rng));
  const Eigen::VectorXd base = aggregate(fs, NormRanges{}).flatten();
  for (int trial = 0; trial < 20; ++trial) {
    FeatureSet shuffled = fs;
    rng.shuffle(shuffled.landmarks.begin(), shuffled.landmarks.end());
    EXPECT_EQ(aggregate(shuffled, NormRanges{}).flatten(), base);
  }
  FeatureSet fewer = fs;
  fewer.landmarks.erase(fewer.landmarks.begin() + 17);
  const AggregatedFeature a = aggregate(fs, NormRanges{});
  const AggregatedFeature b = aggregate(fewer, NormRanges{});
  for (const auto& [full, less] : {std::pair{a.dist_hist, b.dist_hist}, {a.angle_hist, b.angle_hist},
                                   {a.dist_range_hists.head(16), b.dist_range_hists.head(16)},
                                   {a.dist_range_hists.tail(16), b.dist_range_hists.tail(16)},
                                   {a.angle_range_hists.head(16), b.angle_range_hists.head(16)},
                                   {a.angle_range_hists.tail(16), b.angle_range_hists.tail(16)},
                                   {a.pixel_heatmap, b.pixel_heatmap}}) {
    const Eigen::VectorXd diff = full - less;
    EXPECT_EQ(diff.sum(), 1.0);
    EXPECT_EQ((diff.array() != 0.0).count(), 1);
  }
}

TEST(Aggregate, RejectsTinyBins) {
  EXPECT_THROW(aggregate(FeatureSet{}, NormRanges{}, AggregationConfig{1, 8, 8}), ConfigError);
  EXPECT_THROW(aggregate(FeatureSet{}, NormRanges{}, AggregationConfig{16, 1, 8}), ConfigError);
}

TEST(Normalize, EndpointsClampAndIdempotence) {
  const Range r{2.0, 6.0};
  EXPECT_EQ(scale_unit(2.0, r), 0.0);
  EXPECT_EQ(scale_unit(6.0, r), 1.0);
  EXPECT_EQ(scale_unit(9.0, r), 1.0);
  EXPECT_EQ(scale_unit(-1.0, r), 0.0);
  EXPECT_EQ(scale_unit(4.0, r), 0.5);
  EXPECT_EQ(scale_unit(3.0, Range{1.0, 1.0}), 0.0);

  Rng rng(6);
  FeatureSet fs;
  for (int i = 0; i < 30; ++i) fs.landmarks.push_back(random_feature(rng));
  fs.landmarks[0].distance = 40.0;
  const NormRanges ranges;
  const FeatureSet n = normalize(fs, ranges);
  EXPECT_TRUE(n.normalized);
  for (const auto& f : n.landmarks) {
    for (double v : {f.distance, f.view_angle, f.dist_min, f.dist_max, f.ang_min, f.ang_max,
                     f.pixel_u, f.pixel_v, f.dir_deviation}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(n.landmarks[0].distance, 1.0);
  const FeatureSet twice = normalize(n, ranges);
  for (std::size_t i = 0; i < n.landmarks.size(); ++i) {
    EXPECT_EQ(twice.landmarks[i].distance, n.landmarks[i].distance);
    EXPECT_EQ(twice.landmarks[i].dir_deviation, n.landmarks[i].dir_deviation);
  }

  NormRanges small;
  small.count_max = 10.0;
  const AggregatedFeature agg = normalize(aggregate(fs, small), small);
  EXPECT_TRUE(agg.normalized);
  EXPECT_GE(agg.flatten().minCoeff(), 0.0);
  EXPECT_LE(agg.flatten().maxCoeff(), 1.0);
  EXPECT_EQ(normalize(agg, small).flatten(), agg.flatten());
}

TEST(NormRangeFitter, CoversCorpusAndRoundTrips) {
  Rng rng(7);
  NormRangeFitter fit;
  EXPECT_THROW(fit.finish(), TrainingError);
  double dmax = 0, count = 0;
  for (int s = 0; s < 5; ++s) {
    FeatureSet fs;
    const int n = 3 + s;
    for (int i = 0; i < n; ++i) {
      fs.landmarks.push_back(random_feature(rng));
      dmax = std::max({dmax, fs.landmarks.back().distance, fs.landmarks.back().dist_min,
                       fs.landmarks.back().dist_max});
    }
    count = std::max(count, static_cast<double>(n));
    fit.add(fs);
  }
  const NormRanges r = fit.finish();
  EXPECT_EQ(r.distance.hi, dmax);
  EXPECT_EQ(r.count_max, count);
  EXPECT_EQ(norm_ranges_from_json(norm_ranges_to_json(r)), r);
  EXPECT_THROW(norm_ranges_from_json(nlohmann::json{{"distance", 1}}), SchemaError);
}

TEST(Tokens, KeepsNearest) {
  Rng rng(8);
  FeatureSet fs;
  for (int i = 0; i < 40; ++i) {
    fs.landmarks.push_back(random_feature(rng));
    fs.landmarks.back().distance = 40 - i;
    fs.landmarks.back().descriptor = Eigen::VectorXd::Constant(8, i);
  }
  const Eigen::MatrixXd t = tokens(fs, NormRanges{}, 10);
  ASSERT_EQ(t.rows(), 10);
  ASSERT_EQ(t.cols(), kScalarFieldCount + 8);
  for (Eigen::Index r = 0; r < 10; ++r) EXPECT_GE(t(r, kScalarFieldCount), 30.0);
  EXPECT_EQ(tokens(fs, NormRanges{}, 256).rows(), 40);
}

}  // namespace
}  // namespace avl
