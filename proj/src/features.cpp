#include "avl/features.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "avl/errors.hpp"

namespace avl {

FeatureSet per_landmark_features(const LandmarkMap& map, const ViewpointCandidate& candidate,
                                 const CameraModel& cam, bool occlusion_filter,
                                 const OccupancyGrid& grid, double cone_slack_deg) {
  FeatureSet out;
  const Pose& pose = candidate.pose;
  for (const MappedLandmark& m : map.landmarks) {
    const auto px = project(m.position, pose, cam);
    if (!px) continue;
    const bool occluded = !line_of_sight(grid, pose.position(), m.position);
    if (occlusion_filter && occluded) continue;
    PerLandmarkFeature f;
    f.landmark_id = m.id;
    const Vec3 to_cam = pose.position() - m.position;
    f.distance = to_cam.norm();
    f.view_angle = principal_axis_angle_deg(pose, m.position);
    f.dist_min = m.stats.dist_min;
    f.dist_max = m.stats.dist_max;
    f.ang_min = m.stats.ang_min;
    f.ang_max = m.stats.ang_max;
    f.pixel_u = px->x() / cam.width();
    f.pixel_v = px->y() / cam.height();
    f.dir_deviation = angle_between_deg(to_cam, m.stats.mean_view_dir);
    f.in_seen_cone = f.dir_deviation <= m.stats.cone_half_angle + cone_slack_deg;
    f.occluded = occluded;
    f.descriptor = m.descriptor;
    out.landmarks.push_back(std::move(f));
  }
  return out;
}

FeatureSet drop_occluded(const FeatureSet& frustum_only) {
  FeatureSet out;
  out.normalized = frustum_only.normalized;
  for (const PerLandmarkFeature& f : frustum_only.landmarks) {
    if (!f.occluded) out.landmarks.push_back(f);
  }
  return out;
}

int count_in_seen_range(const FeatureSet& features) {
  return static_cast<int>(std::count_if(features.landmarks.begin(), features.landmarks.end(),
                                        [](const PerLandmarkFeature& f) { return f.in_seen_cone; }));
}

// ---------------------------------------------------------------------------
// Normalization

void NormRangeFitter::add(const FeatureSet& raw) {
  if (raw.normalized) throw UsageError("NormRangeFitter: expects raw features");
  auto widen = [](Range& r, double v) {
    r.lo = std::min(r.lo, v);
    r.hi = std::max(r.hi, v);
  };
  for (const PerLandmarkFeature& f : raw.landmarks) {
    if (!any_) {
      r_.distance = {f.distance, f.distance};
      r_.angle = {f.view_angle, f.view_angle};
      r_.deviation = {f.dir_deviation, f.dir_deviation};
      any_ = true;
    }
    for (double d : {f.distance, f.dist_min, f.dist_max}) widen(r_.distance, d);
    for (double a : {f.view_angle, f.ang_min, f.ang_max}) widen(r_.angle, a);
    widen(r_.deviation, f.dir_deviation);
  }
  r_.count_max = std::max(r_.count_max, static_cast<double>(raw.landmarks.size()));
}

NormRanges NormRangeFitter::finish() const {
  if (!any_) throw TrainingError("NormRangeFitter: no landmarks in the training corpus");
  return r_;
}

nlohmann::json norm_ranges_to_json(const NormRanges& r) {
  auto range = [](const Range& x) { return nlohmann::json::array({x.lo, x.hi}); };
  return {{"distance", range(r.distance)},
          {"angle", range(r.angle)},
          {"deviation", range(r.deviation)},
          {"count_max", r.count_max}};
}

NormRanges norm_ranges_from_json(const nlohmann::json& j) {
  auto range = [](const nlohmann::json& x) { return Range{x.at(0).get<double>(), x.at(1).get<double>()}; };
  try {
    NormRanges r;
    r.distance = range(j.at("distance"));
    r.angle = range(j.at("angle"));
    r.deviation = range(j.at("deviation"));
    r.count_max = j.at("count_max").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("norm ranges: ") + e.what());
  }
}

double scale_unit(double v, const Range& r) {
  if (!(r.hi > r.lo)) {
    static bool warned = false;
    if (!warned) {
      std::clog << "warning: degenerate normalization range [" << r.lo << ", " << r.hi
                << "]; field mapped to 0\n";
      warned = true;
    }
    return 0.0;
  }
  return std::clamp((v - r.lo) / (r.hi - r.lo), 0.0, 1.0);
}

FeatureSet normalize(const FeatureSet& features, const NormRanges& ranges) {
  if (features.normalized) return features;
  FeatureSet out = features;
  out.normalized = true;
  for (PerLandmarkFeature& f : out.landmarks) {
    f.distance = scale_unit(f.distance, ranges.distance);
    f.dist_min = scale_unit(f.dist_min, ranges.distance);
    f.dist_max = scale_unit(f.dist_max, ranges.distance);
    f.view_angle = scale_unit(f.view_angle, ranges.angle);
    f.ang_min = scale_unit(f.ang_min, ranges.angle);
    f.ang_max = scale_unit(f.ang_max, ranges.angle);
    f.dir_deviation = scale_unit(f.dir_deviation, ranges.deviation);
    f.pixel_u = std::clamp(f.pixel_u, 0.0, 1.0);
    f.pixel_v = std::clamp(f.pixel_v, 0.0, 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

int bin_index(double v, double lo, double hi, int n) {
  const int i = static_cast<int>(std::floor((v - lo) / (hi - lo) * n));
  return std::clamp(i, 0, n - 1);
}

Eigen::VectorXd AggregatedFeature::flatten() const {
  Eigen::VectorXd v(dist_hist.size() + angle_hist.size() + dist_range_hists.size() +
                    angle_range_hists.size() + pixel_heatmap.size() + 1);
  v << dist_hist, angle_hist, dist_range_hists, angle_range_hists, pixel_heatmap, seen_count;
  return v;
}

AggregatedFeature aggregate(const FeatureSet& features, const NormRanges& ranges,
                            const AggregationConfig& config) {
  const int b = config.bins;
  if (b < 2 || config.heat_h < 2 || config.heat_w < 2) {
    throw ConfigError("aggregate: bins and heatmap sides must be at least 2");
  }
  const FeatureSet f = normalize(features, ranges);
  AggregatedFeature a;
  a.dist_hist = Eigen::VectorXd::Zero(b);
  a.angle_hist = Eigen::VectorXd::Zero(b);
  a.dist_range_hists = Eigen::VectorXd::Zero(2 * b);
  a.angle_range_hists = Eigen::VectorXd::Zero(2 * b);
  a.pixel_heatmap = Eigen::VectorXd::Zero(config.heat_h * config.heat_w);
  for (const PerLandmarkFeature& l : f.landmarks) {
    a.dist_hist[bin_index(l.distance, 0.0, 1.0, b)] += 1.0;
    a.angle_hist[bin_index(l.view_angle, 0.0, 1.0, b)] += 1.0;
    a.dist_range_hists[bin_index(l.distance - l.dist_min, -1.0, 1.0, b)] += 1.0;
    a.dist_range_hists[b + bin_index(l.dist_max - l.distance, -1.0, 1.0, b)] += 1.0;
    a.angle_range_hists[bin_index(l.view_angle - l.ang_min, -1.0, 1.0, b)] += 1.0;
    a.angle_range_hists[b + bin_index(l.ang_max - l.view_angle, -1.0, 1.0, b)] += 1.0;
    const int r = bin_index(l.pixel_v, 0.0, 1.0, config.heat_h);
    const int c = bin_index(l.pixel_u, 0.0, 1.0, config.heat_w);
    a.pixel_heatmap[r * config.heat_w + c] += 1.0;
  }
  a.seen_count = count_in_seen_range(f);
  return a;
}

AggregatedFeature normalize(const AggregatedFeature& agg, const NormRanges& ranges) {
  if (agg.normalized) return agg;
  const Range counts{0.0, ranges.count_max};
  auto scale = [&](const Eigen::VectorXd& v) {
    return Eigen::VectorXd(v.unaryExpr([&](double x) { return scale_unit(x, counts); }));
  };
  AggregatedFeature out;
  out.dist_hist = scale(agg.dist_hist);
  out.angle_hist = scale(agg.angle_hist);
  out.dist_range_hists = scale(agg.dist_range_hists);
  out.angle_range_hists = scale(agg.angle_range_hists);
  out.pixel_heatmap = scale(agg.pixel_heatmap);
  out.seen_count = scale_unit(agg.seen_count, counts);
  out.normalized = true;
  return out;
}

// ---------------------------------------------------------------------------
// Tokens and payload rows

Eigen::MatrixXd tokens(const FeatureSet& features, const NormRanges& ranges, int n_max) {
  const FeatureSet f = normalize(features, ranges);
  std::vector<std::size_t> order(f.landmarks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (static_cast<int>(order.size()) > n_max) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return f.landmarks[a].distance < f.landmarks[b].distance;
    });
    order.resize(static_cast<std::size_t>(n_max));
  }
  const int d_app = f.landmarks.empty() ? 0 : static_cast<int>(f.landmarks[0].descriptor.size());
  Eigen::MatrixXd t(static_cast<Eigen::Index>(order.size()), kScalarFieldCount + d_app);
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    const PerLandmarkFeature& l = f.landmarks[order[static_cast<std::size_t>(r)]];
    t.row(r).head(kScalarFieldCount) << l.distance, l.view_angle, l.dist_min, l.dist_max, l.ang_min,
        l.ang_max, l.pixel_u, l.pixel_v, l.dir_deviation, l.in_seen_cone ? 1.0 : 0.0;
    t.row(r).tail(d_app) = l.descriptor.transpose();
  }
  return t;
}

std::string feature_schema_string(const AggregationConfig& agg, int descriptor_dim, int n_max) {
  std::ostringstream s;
  s << "avl.features/v1;scalars=distance,view_angle,dist_min,dist_max,ang_min,ang_max,"
       "pixel_u,pixel_v,dir_deviation,in_seen_cone;bins="
    << agg.bins << ";heatmap=" << agg.heat_h << "x" << agg.heat_w << ";d_app=" << descriptor_dim
    << ";n_max=" << n_max;
  return s.str();
}

}  // namespace avl
