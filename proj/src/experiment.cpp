#include <chrono>
#include <cmath>
#include <numeric>

#include "avl/errors.hpp"
#include "avl/harness.hpp"
#include "avl/rng.hpp"

namespace avl {

using nlohmann::json;

namespace {

struct Corpus {
  std::vector<FeatureSet> features;
  std::vector<int> labels;
};

Corpus subset(const Corpus& c, const std::vector<std::size_t>& keep) {
  Corpus out;
  for (std::size_t i : keep) {
    out.features.push_back(c.features[i]);
    out.labels.push_back(c.labels[i]);
  }
  return out;
}

// Balances when both classes are present; a one-class validation split is
// kept as is.
Corpus balanced(const Corpus& c, std::uint64_t seed, bool required) {
  const int pos = std::accumulate(c.labels.begin(), c.labels.end(), 0);
  if (!required && (pos == 0 || pos == static_cast<int>(c.labels.size()))) return c;
  return subset(c, balance(c.labels, seed));
}

TrainingSet mlp_set(const Corpus& c, const LearnedModel& m) {
  TrainingSet s;
  for (std::size_t i = 0; i < c.features.size(); ++i) {
    const AggregatedFeature a = normalize(aggregate(c.features[i], m.ranges, m.aggregation), m.ranges);
    s.inputs.push_back(a.flatten().transpose());
    s.labels.push_back(c.labels[i]);
  }
  return s;
}

TrainingSet vpt_set(const Corpus& c, const LearnedModel& m) {
  TrainingSet s;
  for (std::size_t i = 0; i < c.features.size(); ++i) {
    ad::Mat t = tokens(c.features[i], m.ranges, m.vpt.n_max);
    if (t.rows() == 0) t = ad::Mat(0, m.vpt.d_in);
    s.inputs.push_back(std::move(t));
    s.labels.push_back(c.labels[i]);
  }
  return s;
}

json train_log(const TrainResult& r) {
  return {{"train_loss", r.train_loss},
          {"val_accuracy", r.val_accuracy},
          {"best_epoch", r.best_epoch},
          {"best_val_accuracy", r.best_val_accuracy}};
}

int positives(const std::vector<int>& labels) { return std::accumulate(labels.begin(), labels.end(), 0); }

}  // namespace

TrainedModels train_models(const ExperimentConfig& c, const std::vector<Shard>& train,
                           std::uint64_t seed) {
  Corpus fit, val;
  for (std::size_t si = 0; si < train.size(); ++si) {
    const Shard& s = train[si];
    std::vector<int> order(s.waypoints.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {1, si}));
    rng.shuffle(order.begin(), order.end());
    const auto n_val = static_cast<std::size_t>(std::llround(c.validation_fraction * order.size()));
    std::vector<char> is_val(s.waypoints.size(), 0);
    for (std::size_t k = 0; k < n_val; ++k) is_val[static_cast<std::size_t>(order[k])] = 1;
    for (const DatasetRecord& r : s.records) {
      Corpus& dst = is_val[static_cast<std::size_t>(r.waypoint)] ? val : fit;
      dst.features.push_back(s.features(r, c.learned_occlusion_filter));
      dst.labels.push_back(r.label);
    }
  }
  const int raw_fit = static_cast<int>(fit.labels.size()), raw_fit_pos = positives(fit.labels);
  fit = balanced(fit, derive_seed(seed, {2}), true);
  val = balanced(val, derive_seed(seed, {3}), false);

  NormRangeFitter fitter;
  for (const FeatureSet& f : fit.features) fitter.add(f);

  TrainedModels out;
  for (LearnedModel* m : {&out.mlp, &out.vpt}) {
    m->ranges = fitter.finish();
    m->aggregation = c.aggregation;
    m->mlp = c.mlp;
    m->vpt = c.vpt;
    m->descriptor_dim = c.mapping.descriptor.dim;
  }
  out.mlp.arch = Arch::kMlp;
  out.vpt.arch = Arch::kVpt;

  TrainConfig tc = c.training;
  tc.seed = derive_seed(seed, {4});
  const TrainResult mr = train_mlp(mlp_set(fit, out.mlp), mlp_set(val, out.mlp), c.mlp, tc);
  out.mlp.params = mr.params;
  tc.seed = derive_seed(seed, {5});
  const TrainResult vr = train_vpt(vpt_set(fit, out.vpt), vpt_set(val, out.vpt), c.vpt, tc);
  out.vpt.params = vr.params;
  if (!out.mlp.params.all_finite() || !out.vpt.params.all_finite()) {
    throw TrainingError("training produced non-finite weights");
  }

  out.log = {{"records", raw_fit + static_cast<int>(val.labels.size())},
             {"fit_records_before_balance", raw_fit},
             {"fit_positives_before_balance", raw_fit_pos},
             {"fit_records", fit.labels.size()},
             {"fit_positives", positives(fit.labels)},
             {"val_records", val.labels.size()},
             {"val_positives", positives(val.labels)},
             {"occlusion_filter", c.learned_occlusion_filter},
             {"norm_ranges", norm_ranges_to_json(out.mlp.ranges)},
             {"mlp", train_log(mr)},
             {"vpt", train_log(vr)}};
  return out;
}

std::vector<double> default_cdf_grid() {
  // 1 mm to 10 m, ten steps per decade.
  std::vector<double> g;
  for (int k = 0; k <= 40; ++k) g.push_back(std::pow(10.0, -3.0 + k / 10.0));
  return g;
}

EvalReport evaluate(const ExperimentConfig& c, const std::vector<Shard>& test, const LearnedModel* mlp,
                    const LearnedModel* vpt, std::uint64_t seed, std::vector<PolicyTiming>* timing) {
  EvalReport rep;
  rep.thresholds = c.thresholds;
  rep.cdf_grid = default_cdf_grid();
  std::vector<PolicySpec> specs;
  for (const std::string& p : c.policies) {
    specs.push_back(parse_policy(p));
    rep.rows.push_back({specs.back().name(), {}, {}, {}});
  }
  std::vector<PolicyTiming> times(specs.size());
  for (std::size_t k = 0; k < specs.size(); ++k) times[k].policy = specs[k].name();

  SelectContext ctx;
  ctx.mlp = mlp;
  ctx.vpt = vpt;
  ctx.pixel_sigma = c.fim_pixel_sigma;
  ctx.cone_slack_deg = c.cone_slack_deg;

  std::vector<std::vector<long>> hits(specs.size(), std::vector<long>(c.thresholds.size(), 0));
  for (const Shard& s : test) {
    LandmarkMap map = s.map();
    map.cam = c.camera;
    std::size_t begin = 0;
    while (begin < s.records.size()) {
      const int wi = s.records[begin].waypoint;
      std::size_t end = begin;
      while (end < s.records.size() && s.records[end].waypoint == wi) ++end;

      std::vector<ViewpointCandidate> cands;
      std::vector<FeatureSet> frustum;
      std::vector<LocalizationResult> sweep;
      for (std::size_t i = begin; i < end; ++i) {
        const DatasetRecord& r = s.records[i];
        cands.push_back({r.pose, r.yaw_deg, r.pitch_deg, r.candidate});
        frustum.push_back(s.features(r, false));
        LocalizationResult l;
        l.success = r.success;
        l.pos_error_m = r.pos_error_m;
        l.rot_error_deg = r.rot_error_deg;
        sweep.push_back(l);
      }
      ctx.next_waypoint = s.waypoints.at(static_cast<std::size_t>(wi)).next;
      ctx.random_seed = derive_seed(seed, {static_cast<std::uint64_t>(s.split == Split::kTrain ? 0 : 1),
                                           static_cast<std::uint64_t>(s.scene_index),
                                           static_cast<std::uint64_t>(wi)});

      for (std::size_t k = 0; k < specs.size(); ++k) {
        int pick = 0;
        const bool ceiling = specs[k].kind == PolicyKind::kBestPossible;
        const auto t0 = std::chrono::steady_clock::now();
        if (ceiling) {
          pick = best_possible_index(sweep);
        } else {
          const std::vector<double> scores = policy_scores(specs[k], map, c.camera, cands, frustum, ctx);
          pick = argmax_index(scores);
        }
        times[k].seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        times[k].candidates += static_cast<long>(cands.size());

        const LocalizationResult& got = sweep[static_cast<std::size_t>(pick)];
        rep.rows[k].selections.push_back({s.scene_index, wi, cands[static_cast<std::size_t>(pick)].index,
                                          got.success, got.pos_error_m, got.rot_error_deg});
        for (std::size_t t = 0; t < c.thresholds.size(); ++t) {
          bool ok = within(got.success, got.pos_error_m, got.rot_error_deg, c.thresholds[t]);
          if (ceiling) {
            // The ceiling is met when any recorded candidate meets the threshold.
            for (const LocalizationResult& l : sweep) {
              ok = ok || within(l.success, l.pos_error_m, l.rot_error_deg, c.thresholds[t]);
            }
          }
          hits[k][t] += ok ? 1 : 0;
        }
      }
      ++rep.waypoint_count;
      begin = end;
    }
  }

  for (std::size_t k = 0; k < specs.size(); ++k) {
    PolicyResult& row = rep.rows[k];
    for (long h : hits[k]) {
      row.recall.push_back(rep.waypoint_count > 0 ? 100.0 * static_cast<double>(h) / rep.waypoint_count : 0.0);
    }
    for (double e : rep.cdf_grid) {
      long n = 0;
      for (const Selection& sel : row.selections) n += (sel.success && sel.pos_error_m <= e) ? 1 : 0;
      row.cdf.push_back(rep.waypoint_count > 0 ? static_cast<double>(n) / rep.waypoint_count : 0.0);
    }
  }
  if (timing) *timing = std::move(times);
  return rep;
}

double random_policy_expectation(const std::vector<Shard>& test, const Threshold& t) {
  double sum = 0.0;
  long waypoints = 0;
  for (const Shard& s : test) {
    std::vector<long> pos(s.waypoints.size(), 0), total(s.waypoints.size(), 0);
    for (const DatasetRecord& r : s.records) {
      const auto w = static_cast<std::size_t>(r.waypoint);
      total[w] += 1;
      pos[w] += within(r.success, r.pos_error_m, r.rot_error_deg, t) ? 1 : 0;
    }
    for (std::size_t w = 0; w < total.size(); ++w) {
      if (total[w] == 0) continue;
      sum += static_cast<double>(pos[w]) / static_cast<double>(total[w]);
      ++waypoints;
    }
  }
  return waypoints > 0 ? 100.0 * sum / static_cast<double>(waypoints) : 0.0;
}

const PolicyResult& row(const EvalReport& r, const std::string& policy) {
  for (const PolicyResult& p : r.rows) {
    if (p.policy == policy) return p;
  }
  throw UsageError("report has no row for policy " + policy);
}

std::size_t threshold_index(const EvalReport& r, const Threshold& t) {
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    if (r.thresholds[i] == t) return i;
  }
  throw UsageError("report has no column for the requested threshold");
}

}  // namespace avl
