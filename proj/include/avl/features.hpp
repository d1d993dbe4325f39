#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "avl/geom.hpp"
#include "avl/mapping.hpp"
#include "avl/scene.hpp"

namespace avl {

inline constexpr double kDefaultConeSlackDeg = 5.0;

// What a candidate viewpoint knows about one mapped landmark in its frustum.
// Before normalization distances are meters and angles degrees; pixel
// coordinates are always divided by the image size.
struct PerLandmarkFeature {
  int landmark_id = 0;
  double distance = 0.0;
  double view_angle = 0.0;  // principal-axis angle at the candidate
  double dist_min = 0.0, dist_max = 0.0;
  double ang_min = 0.0, ang_max = 0.0;
  double pixel_u = 0.0, pixel_v = 0.0;  // [0, 1]
  double dir_deviation = 0.0;  // from the mapping mean view direction
  bool in_seen_cone = false;
  bool occluded = false;  // only meaningful when occlusion filtering is off
  Eigen::VectorXd descriptor;
};

// Scalar token fields in the order used by tokens().
inline constexpr int kScalarFieldCount = 10;

struct FeatureSet {
  std::vector<PerLandmarkFeature> landmarks;
  bool normalized = false;
};

// Landmarks of `map` inside the frustum of `candidate`. With
// `occlusion_filter`, entries occluded in `grid` are dropped; without it,
// they are kept and flagged `occluded`.
FeatureSet per_landmark_features(const LandmarkMap& map, const ViewpointCandidate& candidate,
                                 const CameraModel& cam, bool occlusion_filter,
                                 const OccupancyGrid& grid,
                                 double cone_slack_deg = kDefaultConeSlackDeg);

// Occlusion-filtered view of a frustum-only set.
FeatureSet drop_occluded(const FeatureSet& frustum_only);

int count_in_seen_range(const FeatureSet& features);

struct Range {
  double lo = 0.0;
  double hi = 1.0;

  bool operator==(const Range&) const = default;
};

// Min-max ranges frozen from a training corpus.
struct NormRanges {
  Range distance{0.0, 15.0};   // distance, dist_min, dist_max
  Range angle{0.0, 90.0};      // view_angle, ang_min, ang_max
  Range deviation{0.0, 180.0};  // dir_deviation
  double count_max = 256.0;     // histogram and seen-count scale

  bool operator==(const NormRanges&) const = default;
};

// Running min/max over feature sets.
class NormRangeFitter {
 public:
  void add(const FeatureSet& raw);
  NormRanges finish() const;

 private:
  bool any_ = false;
  NormRanges r_{{0, 0}, {0, 0}, {0, 0}, 0.0};
};

nlohmann::json norm_ranges_to_json(const NormRanges& r);
NormRanges norm_ranges_from_json(const nlohmann::json& j);

// Clamped min-max scaling into [0, 1]; a degenerate range maps to 0 with a
// logged warning. Returns the input unchanged when already normalized.
double scale_unit(double v, const Range& r);
FeatureSet normalize(const FeatureSet& features, const NormRanges& ranges);

struct AggregationConfig {
  int bins = 16;
  int heat_h = 8;
  int heat_w = 8;

  int dim() const { return 6 * bins + heat_h * heat_w + 1; }
};

struct AggregatedFeature {
  Eigen::VectorXd dist_hist;
  Eigen::VectorXd angle_hist;
  Eigen::VectorXd dist_range_hists;   // [distance - dist_min | dist_max - distance]
  Eigen::VectorXd angle_range_hists;  // [angle - ang_min | ang_max - angle]
  Eigen::VectorXd pixel_heatmap;      // row-major heat_h x heat_w
  double seen_count = 0.0;
  bool normalized = false;

  Eigen::VectorXd flatten() const;
};

// Histogram counts over normalized fields; bins span [0, 1] for values and
// [-1, 1] for range deltas. Descriptors are not aggregated. Throws
// ConfigError when bins or heatmap sides are below 2.
AggregatedFeature aggregate(const FeatureSet& features, const NormRanges& ranges,
                            const AggregationConfig& config = {});
// Divides counts by ranges.count_max and clamps to [0, 1].
AggregatedFeature normalize(const AggregatedFeature& agg, const NormRanges& ranges);

// Bin index of a value in [lo, hi] split into n equal bins, clamped.
int bin_index(double v, double lo, double hi, int n);

// VPT input: one row per landmark (normalized scalar fields then the
// descriptor), at most n_max rows keeping the nearest landmarks.
Eigen::MatrixXd tokens(const FeatureSet& features, const NormRanges& ranges, int n_max);

// Identifies the feature layout consumed by learned models.
std::string feature_schema_string(const AggregationConfig& agg, int descriptor_dim, int n_max);

}  // namespace avl
