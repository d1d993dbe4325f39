#include <cmath>
#include <set>
#include <string>

#include "avl/errors.hpp"
#include "avl/harness.hpp"
#include "avl/json_util.hpp"

namespace avl {

using nlohmann::json;

namespace {

// Reads the keys of one config object and rejects any it did not ask for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  void get_vec(const std::string& key, Vec3& out) {
    used_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = vec_from_json(*it);
    } catch (const std::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

Threshold threshold_from(const json& j, const std::string& where) {
  Threshold t;
  {
    Section s(j, where);
    s.get("dist_m", t.dist_m);
    s.get("angle_deg", t.angle_deg);
  }
  require(t.dist_m > 0 && t.angle_deg > 0, where + " must be positive");
  return t;
}

json threshold_json(const Threshold& t) { return {{"dist_m", t.dist_m}, {"angle_deg", t.angle_deg}}; }

void read_scene(const json& j, SceneConfig& c) {
  Section s(j, "scene");
  s.get_vec("room_size", c.room_size);
  s.get("wall_thickness", c.wall_thickness);
  s.get("lattice", c.lattice);
  s.get("landmark_count", c.landmark_count);
  s.get("occluder_count", c.occluder_count);
  s.get("occluder_footprint_min", c.occluder_footprint_min);
  s.get("occluder_footprint_max", c.occluder_footprint_max);
  s.get("occluder_height_min", c.occluder_height_min);
  s.get("occluder_height_max", c.occluder_height_max);
  s.get("tall_occluder_fraction", c.tall_occluder_fraction);
  s.get("tall_height_min", c.tall_height_min);
  s.get("tall_height_max", c.tall_height_max);
  s.get("wall_landmark_fraction", c.wall_landmark_fraction);
  s.get("top_face_fraction", c.top_face_fraction);
  s.get("wall_patch_count", c.wall_patch_count);
  s.get("wall_patch_radius", c.wall_patch_radius);
  s.get("wall_landmark_min_height", c.wall_landmark_min_height);
}

json scene_json(const SceneConfig& c) {
  return {{"room_size", vec_to_json(c.room_size)},
          {"wall_thickness", c.wall_thickness},
          {"lattice", c.lattice},
          {"landmark_count", c.landmark_count},
          {"occluder_count", c.occluder_count},
          {"occluder_footprint_min", c.occluder_footprint_min},
          {"occluder_footprint_max", c.occluder_footprint_max},
          {"occluder_height_min", c.occluder_height_min},
          {"occluder_height_max", c.occluder_height_max},
          {"tall_occluder_fraction", c.tall_occluder_fraction},
          {"tall_height_min", c.tall_height_min},
          {"tall_height_max", c.tall_height_max},
          {"wall_landmark_fraction", c.wall_landmark_fraction},
          {"top_face_fraction", c.top_face_fraction},
          {"wall_patch_count", c.wall_patch_count},
          {"wall_patch_radius", c.wall_patch_radius},
          {"wall_landmark_min_height", c.wall_landmark_min_height}};
}

void read_camera(const json& j, CameraModel& cam) {
  double fx = cam.fx(), fy = cam.fy(), cx = cam.cx(), cy = cam.cy(), near_m = cam.near_m(),
         far_m = cam.far_m();
  int width = cam.width(), height = cam.height();
  {
    Section s(j, "camera");
    s.get("fx", fx);
    s.get("fy", fy);
    s.get("cx", cx);
    s.get("cy", cy);
    s.get("width", width);
    s.get("height", height);
    s.get("near", near_m);
    s.get("far", far_m);
  }
  cam = CameraModel(fx, fy, cx, cy, width, height, near_m, far_m);
}

void read_mapping(const json& j, TrajectoryConfig& t, MappingConfig& m) {
  Section s(j, "mapping");
  if (const json* tj = s.sub("trajectory")) {
    Section ts(*tj, "mapping.trajectory");
    ts.get("height_m", t.height_m);
    ts.get("waypoint_count", t.waypoint_count);
    ts.get("clearance_m", t.clearance_m);
    ts.get("yaw_jitter_deg", t.yaw_jitter_deg);
    ts.get("pitch_mean_deg", t.pitch_mean_deg);
    ts.get("pitch_jitter_deg", t.pitch_jitter_deg);
    ts.get("retry_budget", t.retry_budget);
  }
  s.get("noise_sigma_m", m.noise_sigma_m);
  s.get("noise_bound_m", m.noise_bound_m);
  s.get("min_obs", m.min_obs);
  s.get("max_incidence_deg", m.max_incidence_deg);
  if (const json* dj = s.sub("descriptor")) {
    Section ds(*dj, "mapping.descriptor");
    ds.get("dim", m.descriptor.dim);
    ds.get("quality_noise", m.descriptor.quality_noise);
    ds.get("id_noise", m.descriptor.id_noise);
  }
}

json mapping_json(const TrajectoryConfig& t, const MappingConfig& m) {
  return {{"trajectory",
           {{"height_m", t.height_m},
            {"waypoint_count", t.waypoint_count},
            {"clearance_m", t.clearance_m},
            {"yaw_jitter_deg", t.yaw_jitter_deg},
            {"pitch_mean_deg", t.pitch_mean_deg},
            {"pitch_jitter_deg", t.pitch_jitter_deg},
            {"retry_budget", t.retry_budget}}},
          {"noise_sigma_m", m.noise_sigma_m},
          {"noise_bound_m", m.noise_bound_m},
          {"min_obs", m.min_obs},
          {"max_incidence_deg", m.max_incidence_deg},
          {"descriptor",
           {{"dim", m.descriptor.dim},
            {"quality_noise", m.descriptor.quality_noise},
            {"id_noise", m.descriptor.id_noise}}}};
}

void read_oracle(const json& j, OracleConfig& o) {
  Section s(j, "oracle");
  s.get("pixel_sigma_base", o.noise.pixel_sigma_base);
  s.get("outlier_rate_base", o.noise.outlier_rate_base);
  s.get("view_drop_rate", o.noise.view_drop_rate);
  s.get("view_drop_ramp_deg", o.noise.view_drop_ramp_deg);
  s.get("scale_drop_rate", o.noise.scale_drop_rate);
  s.get("scale_drop_ramp", o.noise.scale_drop_ramp);
  s.get("max_incidence_deg", o.noise.max_incidence_deg);
  s.get("ransac_iterations", o.ransac.iterations);
  s.get("inlier_threshold_px", o.ransac.inlier_threshold_px);
  s.get("min_inliers", o.ransac.min_inliers);
  s.get("refine_iterations", o.ransac.refine_iterations);
}

json oracle_json(const OracleConfig& o) {
  return {{"pixel_sigma_base", o.noise.pixel_sigma_base},
          {"outlier_rate_base", o.noise.outlier_rate_base},
          {"view_drop_rate", o.noise.view_drop_rate},
          {"view_drop_ramp_deg", o.noise.view_drop_ramp_deg},
          {"scale_drop_rate", o.noise.scale_drop_rate},
          {"scale_drop_ramp", o.noise.scale_drop_ramp},
          {"max_incidence_deg", o.noise.max_incidence_deg},
          {"ransac_iterations", o.ransac.iterations},
          {"inlier_threshold_px", o.ransac.inlier_threshold_px},
          {"min_inliers", o.ransac.min_inliers},
          {"refine_iterations", o.ransac.refine_iterations}};
}

void validate(const ExperimentConfig& c) {
  validate(c.scene);
  require(c.train_scenes >= 0 && c.test_scenes >= 0, "scene counts must be non-negative");
  require(c.voxel_size > 0, "voxel_size must be positive");
  require(c.mapping_trajectory.waypoint_count >= 2, "mapping trajectory needs 2 waypoints");
  require(c.mapping.noise_sigma_m >= 0, "mapping noise must be non-negative");
  require(c.mapping.min_obs >= 1, "mapping.min_obs must be at least 1");
  require(c.mapping.descriptor.dim >= 2, "descriptor dim must be at least 2");
  require(c.waypoints.train_per_scene >= 1 && c.waypoints.test_per_scene >= 1,
          "waypoint counts must be positive");
  require(c.waypoints.clearance_m >= 0, "waypoint clearance must be non-negative");
  require(c.candidates.per_waypoint >= 1, "candidates.per_waypoint must be positive");
  require(c.candidates.pitch_min_deg <= c.candidates.pitch_max_deg, "pitch range is inverted");
  require(c.oracle.noise.pixel_sigma_base >= 0, "oracle pixel sigma must be non-negative");
  require(c.oracle.noise.outlier_rate_base >= 0 && c.oracle.noise.outlier_rate_base <= 1,
          "oracle outlier rate must be in [0, 1]");
  require(c.oracle.noise.view_drop_rate >= 0 && c.oracle.noise.view_drop_rate <= 1,
          "oracle view_drop_rate must be in [0, 1]");
  require(c.oracle.noise.view_drop_ramp_deg >= 0, "oracle view_drop_ramp_deg must be non-negative");
  require(c.oracle.noise.scale_drop_rate >= 0 && c.oracle.noise.scale_drop_rate <= 1,
          "oracle scale_drop_rate must be in [0, 1]");
  require(c.oracle.noise.scale_drop_ramp >= 0, "oracle scale_drop_ramp must be non-negative");
  require(c.oracle.ransac.iterations >= 1 && c.oracle.ransac.min_inliers >= 4,
          "oracle RANSAC settings");
  require(!c.thresholds.empty(), "thresholds must not be empty");
  require(c.cone_slack_deg >= 0, "cone slack must be non-negative");
  require(c.aggregation.bins >= 2 && c.aggregation.heat_h >= 2 && c.aggregation.heat_w >= 2,
          "aggregation bins and heatmap sides must be at least 2");
  require(c.validation_fraction >= 0 && c.validation_fraction < 1,
          "validation_fraction must be in [0, 1)");
  require(c.fim_pixel_sigma > 0, "fim_pixel_sigma must be positive");
  for (const std::string& p : c.policies) parse_policy(p);
}

}  // namespace

std::vector<Threshold> default_thresholds() {
  return {{0.025, 1.0}, {0.05, 1.0}, {0.075, 1.0}, {0.1, 1.0}, {0.25, 2.0}, {1.0, 5.0}};
}

std::vector<std::string> default_policies() {
  return {"forward", "random",   "max",      "max+occl", "angle",        "angle+occl",
          "fim",     "fim+occl", "mlp+occl", "vpt+occl", "best_possible"};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.policies = default_policies();
  {
    Section root(j, "config");
    if (const json* s = root.sub("scene")) read_scene(*s, c.scene);
    if (const json* s = root.sub("splits")) {
      Section ss(*s, "splits");
      ss.get("train_scenes", c.train_scenes);
      ss.get("test_scenes", c.test_scenes);
    }
    root.get("voxel_size", c.voxel_size);
    if (const json* s = root.sub("camera")) read_camera(*s, c.camera);
    if (const json* s = root.sub("mapping")) read_mapping(*s, c.mapping_trajectory, c.mapping);
    if (const json* s = root.sub("waypoints")) {
      Section ws(*s, "waypoints");
      ws.get("height_m", c.waypoints.height_m);
      ws.get("clearance_m", c.waypoints.clearance_m);
      ws.get("train_per_scene", c.waypoints.train_per_scene);
      ws.get("test_per_scene", c.waypoints.test_per_scene);
      ws.get("retry_budget", c.waypoints.retry_budget);
    }
    if (const json* s = root.sub("candidates")) {
      Section cs(*s, "candidates");
      cs.get("per_waypoint", c.candidates.per_waypoint);
      cs.get("pitch_min_deg", c.candidates.pitch_min_deg);
      cs.get("pitch_max_deg", c.candidates.pitch_max_deg);
    }
    if (const json* s = root.sub("oracle")) read_oracle(*s, c.oracle);
    if (const json* s = root.sub("label_threshold")) c.label_threshold = threshold_from(*s, "label_threshold");
    if (const json* s = root.sub("thresholds")) {
      if (!s->is_array()) throw ConfigError("thresholds: expected an array");
      c.thresholds.clear();
      for (std::size_t i = 0; i < s->size(); ++i) {
        c.thresholds.push_back(threshold_from((*s)[i], "thresholds[" + std::to_string(i) + "]"));
      }
    }
    if (const json* s = root.sub("features")) {
      Section fs(*s, "features");
      fs.get("cone_slack_deg", c.cone_slack_deg);
      fs.get("bins", c.aggregation.bins);
      fs.get("heat_h", c.aggregation.heat_h);
      fs.get("heat_w", c.aggregation.heat_w);
    }
    if (const json* s = root.sub("models")) {
      Section ms(*s, "models");
      ms.get("occlusion_filter", c.learned_occlusion_filter);
      if (const json* m = ms.sub("mlp")) {
        Section mm(*m, "models.mlp");
        mm.get("hidden", c.mlp.hidden);
        mm.get("hidden_layers", c.mlp.hidden_layers);
      }
      if (const json* v = ms.sub("vpt")) {
        Section vs(*v, "models.vpt");
        vs.get("d_model", c.vpt.d_model);
        vs.get("heads", c.vpt.heads);
        vs.get("layers", c.vpt.layers);
        vs.get("d_ff", c.vpt.d_ff);
        vs.get("n_max", c.vpt.n_max);
      }
    }
    if (const json* s = root.sub("training")) {
      Section ts(*s, "training");
      ts.get("epochs", c.training.epochs);
      ts.get("batch_size", c.training.batch_size);
      ts.get("learning_rate", c.training.learning_rate);
      ts.get("beta1", c.training.beta1);
      ts.get("beta2", c.training.beta2);
      ts.get("epsilon", c.training.epsilon);
      ts.get("validation_fraction", c.validation_fraction);
    }
    if (const json* s = root.sub("evaluation")) {
      Section es(*s, "evaluation");
      es.get("policies", c.policies);
      es.get("fim_pixel_sigma", c.fim_pixel_sigma);
    }
  }
  c.mlp.input_dim = c.aggregation.dim();
  c.vpt.d_in = kScalarFieldCount + c.mapping.descriptor.dim;
  // Re-run the model validators on the derived shapes.
  c.mlp = mlp_config_from_json(to_json(c.mlp));
  c.vpt = vpt_config_from_json(to_json(c.vpt));
  c.training = train_config_from_json(to_json(c.training));
  validate(c);
  return c;
}

json to_json(const ExperimentConfig& c) {
  json thresholds = json::array();
  for (const Threshold& t : c.thresholds) thresholds.push_back(threshold_json(t));
  return {{"scene", scene_json(c.scene)},
          {"splits", {{"train_scenes", c.train_scenes}, {"test_scenes", c.test_scenes}}},
          {"voxel_size", c.voxel_size},
          {"camera", camera_to_json(c.camera)},
          {"mapping", mapping_json(c.mapping_trajectory, c.mapping)},
          {"waypoints",
           {{"height_m", c.waypoints.height_m},
            {"clearance_m", c.waypoints.clearance_m},
            {"train_per_scene", c.waypoints.train_per_scene},
            {"test_per_scene", c.waypoints.test_per_scene},
            {"retry_budget", c.waypoints.retry_budget}}},
          {"candidates",
           {{"per_waypoint", c.candidates.per_waypoint},
            {"pitch_min_deg", c.candidates.pitch_min_deg},
            {"pitch_max_deg", c.candidates.pitch_max_deg}}},
          {"oracle", oracle_json(c.oracle)},
          {"label_threshold", threshold_json(c.label_threshold)},
          {"thresholds", thresholds},
          {"features",
           {{"cone_slack_deg", c.cone_slack_deg},
            {"bins", c.aggregation.bins},
            {"heat_h", c.aggregation.heat_h},
            {"heat_w", c.aggregation.heat_w}}},
          {"models",
           {{"occlusion_filter", c.learned_occlusion_filter},
            {"mlp", {{"hidden", c.mlp.hidden}, {"hidden_layers", c.mlp.hidden_layers}}},
            {"vpt",
             {{"d_model", c.vpt.d_model},
              {"heads", c.vpt.heads},
              {"layers", c.vpt.layers},
              {"d_ff", c.vpt.d_ff},
              {"n_max", c.vpt.n_max}}}}},
          {"training",
           {{"epochs", c.training.epochs},
            {"batch_size", c.training.batch_size},
            {"learning_rate", c.training.learning_rate},
            {"beta1", c.training.beta1},
            {"beta2", c.training.beta2},
            {"epsilon", c.training.epsilon},
            {"validation_fraction", c.validation_fraction}}},
          {"evaluation", {{"policies", c.policies}, {"fim_pixel_sigma", c.fim_pixel_sigma}}}};
}

ExperimentConfig load_config(const std::string& path) {
  json doc;
  try {
    doc = read_json_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(doc);
}

std::string config_hash(const ExperimentConfig& c) { return schema_hash(to_json(c).dump()); }

}  // namespace avl
