// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.
//
//   acceptance --cli build/tools/avl --config configs/acceptance.json --work /tmp/acc
//
// The pipeline runs twice through the command-line tool with the same seed;
// the first run feeds the recall criteria, the second is compared byte for
// byte against it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "../grad_check.hpp"
#include "avl/errors.hpp"
#include "avl/harness.hpp"
#include "avl/json_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace avl {
namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Pinned tolerances.
constexpr double kPoseTolM = 1e-6;
constexpr double kPoseTolDeg = 1e-6;
constexpr double kExactRecoverySeconds = 10.0;
constexpr double kFimRelTol = 1e-4;
// Summing 6x6 information matrices in a different order changes the last
// bits only.
constexpr double kTraceAdditivityRelTol = 1e-12;
constexpr double kFimSeconds = 30.0;
constexpr double kGradRelTol = 1e-4;
constexpr double kInvarianceTol = 1e-9;
constexpr int kMinWaypoints = 400;
constexpr double kOcclusionMargin = 3.0;
constexpr double kPipelineMinutes = 15.0;
constexpr double kLearnedSlack = 1.0;
constexpr double kTrainEvalMinutes = 60.0;
constexpr double kAngleMargin = 2.0;
constexpr double kScoringSeconds = 1.0;
constexpr int kTimingWaypoints = 50;
constexpr int kTimingCandidates = 100;
constexpr double kRandomTolerance = 3.0;
const Threshold kHeadline{0.1, 1.0};

struct Outcome {
  int id;
  bool pass;
  std::string what;
};

std::vector<Outcome> outcomes;

void verdict(int id, bool pass, const std::string& what) {
  outcomes.push_back({id, pass, what});
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", what.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

// ---------------------------------------------------------------------------
// Oracles

void noiseless_recovery() {
  const auto t0 = Clock::now();
  const CameraModel cam = CameraModel::default_camera();
  Rng rng(101);
  int ok = 0;
  double worst_m = 0, worst_deg = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Pose truth = Pose::from_yaw_pitch(
        Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.2, 2)), rng.uniform(0, 360),
        rng.uniform(-30, 30));
    const int n = 6 + static_cast<int>(rng.below(20));
    std::vector<Correspondence> corrs;
    for (int i = 0; i < n; ++i) {
      const Vec2 px(rng.uniform(10, cam.width() - 10), rng.uniform(10, cam.height() - 10));
      const double depth = rng.uniform(1.0, 8.0);
      const Vec3 pc((px.x() - cam.cx()) / cam.fx() * depth, (px.y() - cam.cy()) / cam.fy() * depth, depth);
      corrs.push_back({i, truth.to_world(pc), px, false});
    }
    Rng r(derive_seed(101, {static_cast<std::uint64_t>(trial)}));
    const LocalizationResult res = estimate_pose(corrs, cam, RansacConfig{}, r, truth);
    if (res.success) {
      worst_m = std::max(worst_m, res.pos_error_m);
      worst_deg = std::max(worst_deg, res.rot_error_deg);
    }
    ok += res.success && res.pos_error_m < kPoseTolM && res.rot_error_deg < kPoseTolDeg;
  }
  const double secs = since(t0);
  verdict(1, ok == 100 && secs < kExactRecoverySeconds,
          fmt("noiseless recovery %d/100 within %g m and %g deg (worst %.2e m, %.2e deg), %.2f s (limit %g s)",
              ok, kPoseTolM, kPoseTolDeg, worst_m, worst_deg, secs, kExactRecoverySeconds));
}

void fim_correctness() {
  const auto t0 = Clock::now();
  const CameraModel cam = CameraModel::default_camera();
  Rng rng(202);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const Pose pose = Pose::from_yaw_pitch(Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2)),
                                           rng.uniform(0, 360), rng.uniform(-30, 30));
    const Vec3 x = pose.to_world(Vec3(rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(0.5, 8)));
    const double sigma = rng.uniform(0.5, 2.0);
    const double h = 1e-6;
    Eigen::Matrix<double, 2, 6> j;
    for (int k = 0; k < 6; ++k) {
      Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
      d[k] = h;
      j.col(k) = (project_camera_point(retract(pose, d).to_camera(x), cam) -
                  project_camera_point(retract(pose, -d).to_camera(x), cam)) / (2 * h);
    }
    const Mat6 oracle = j.transpose() * j / (sigma * sigma);
    worst = std::max(worst, (fim_single(x, pose, cam, sigma) - oracle).norm() / oracle.norm());
  }

  // Trace over the union of two disjoint landmark sets against the sum.
  double worst_add = 0;
  for (int t = 0; t < 100; ++t) {
    const Pose pose = Pose::from_yaw_pitch(Vec3::Zero(), rng.uniform(0, 360), rng.uniform(-20, 20));
    LandmarkMap map;
    map.cam = cam;
    FeatureSet a, b, all;
    const int n = 2 + static_cast<int>(rng.below(60));
    for (int i = 0; i < n; ++i) {
      MappedLandmark m;
      m.id = i;
      m.position = pose.to_world(Vec3(rng.uniform(-1.5, 1.5), rng.uniform(-1, 1), rng.uniform(1, 8)));
      m.descriptor = Eigen::VectorXd::Unit(8, 0);
      map.landmarks.push_back(m);
      PerLandmarkFeature f;
      f.landmark_id = i;
      (rng.uniform() < 0.5 ? a : b).landmarks.push_back(f);
      all.landmarks.push_back(f);
    }
    const auto tr = [&](const FeatureSet& s) {
      return score_fim(map, s, pose, cam, false, 1.0, FimScalarization::kTrace);
    };
    const double whole = tr(all);
    worst_add = std::max(worst_add, std::abs(whole - (tr(a) + tr(b))) / whole);
  }
  const double secs = since(t0);
  verdict(2, worst < kFimRelTol && worst_add <= kTraceAdditivityRelTol && secs < kFimSeconds,
          fmt("FIM vs finite-difference information on 1000 pairs: worst rel. Frobenius %.2e (tol %g); "
              "trace additivity on 100 splits: worst rel. %.2e (tol %g); %.2f s (limit %g s)",
              worst, kFimRelTol, worst_add, kTraceAdditivityRelTol, secs, kFimSeconds));
}

void gradient_suite() {
  Rng rng(303);
  double worst_prim = 0, worst_mlp = 0, worst_vpt = 0;
  std::string worst_name;
  int prim_checks = 0;
  for (int k = 0; k < 20; ++k) {
    for (testing::PrimitiveCase& pc : testing::primitive_cases(rng)) {
      const double e = testing::grad_check(pc.inputs, pc.f);
      if (e > worst_prim) {
        worst_prim = e;
        worst_name = pc.name;
      }
      ++prim_checks;
    }
    worst_mlp = std::max(worst_mlp, testing::mlp_grad_error(rng, testing::random_mlp_config(rng, k)));
    worst_vpt = std::max(worst_vpt, testing::vpt_grad_error(rng, testing::random_vpt_config(rng, k)));
  }
  verdict(3, worst_prim < kGradRelTol && worst_mlp < kGradRelTol && worst_vpt < kGradRelTol,
          fmt("finite-difference gradients, 20 configurations each: primitives %d checks worst %.2e (%s), "
              "MLP worst %.2e, VPT worst %.2e (tol %g)",
              prim_checks, worst_prim, worst_name.c_str(), worst_mlp, worst_vpt, kGradRelTol));
}

void invariance(const std::vector<Shard>& test) {
  const VptConfig c;
  const ParamStore p = init_vpt(c, 404);
  Rng rng(404);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.n_max - 1)));
    const ad::Mat tok = testing::random_mat(rng, n, c.d_in);
    const Eigen::Vector2d base = vpt_forward(p, c, make_token_batch(tok, n));
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    ad::Mat shuffled(n, c.d_in);
    for (int r = 0; r < n; ++r) shuffled.row(r) = tok.row(perm[static_cast<std::size_t>(r)]);
    const int pad = n + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.n_max - n + 1)));
    worst = std::max(worst, (vpt_forward(p, c, make_token_batch(shuffled, pad)) - base).cwiseAbs().maxCoeff());
  }

  // Aggregation over real candidate feature sets.
  int agg_checked = 0, agg_bad = 0;
  const Shard& s = test.at(0);
  for (std::size_t i = 0; i < s.records.size() && agg_checked < 100; i += 97) {
    FeatureSet f = s.features(s.records[i], true);
    const NormRanges ranges;
    const Eigen::VectorXd base = aggregate(f, ranges).flatten();
    rng.shuffle(f.landmarks.begin(), f.landmarks.end());
    agg_bad += aggregate(f, ranges).flatten() != base;
    ++agg_checked;
  }
  verdict(4, worst < kInvarianceTol && agg_bad == 0 && agg_checked == 100,
          fmt("VPT permutation+padding on 100 batches: worst change %.2e (tol %g); aggregate exact under "
              "shuffling: %d/%d identical",
              worst, kInvarianceTol, agg_checked - agg_bad, agg_checked));
}

// ---------------------------------------------------------------------------
// Pipeline

struct Run {
  fs::path dir;
  double gen_seconds = 0, train_seconds = 0, eval_seconds = 0, report_seconds = 0;
  bool ok = true;
};

bool stage(const std::string& cli, const std::string& name, const std::string& config, std::uint64_t seed,
           const fs::path& dir, double* seconds) {
  const std::string cmd = "\"" + cli + "\" " + name + " --config \"" + config + "\" --seed " +
                          std::to_string(seed) + " --run-dir \"" + dir.string() + "\" 2>> \"" +
                          (dir / "stderr.log").string() + "\"" + " > /dev/null";
  const auto t0 = Clock::now();
  const int rc = std::system(cmd.c_str());
  *seconds = since(t0);
  std::printf("  %-9s %-40s %8.1f s  exit %d\n", name.c_str(), dir.string().c_str(), *seconds, rc);
  std::fflush(stdout);
  return rc == 0;
}

Run pipeline(const std::string& cli, const std::string& config, std::uint64_t seed, const fs::path& dir) {
  Run r;
  r.dir = dir;
  fs::remove_all(dir);
  fs::create_directories(dir);
  r.ok = stage(cli, "gen-data", config, seed, dir, &r.gen_seconds) &&
         stage(cli, "train", config, seed, dir, &r.train_seconds) &&
         stage(cli, "eval", config, seed, dir, &r.eval_seconds) &&
         stage(cli, "report", config, seed, dir, &r.report_seconds);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void recall_criteria(const EvalReport& rep, const std::vector<Shard>& test, const Run& run) {
  const std::size_t t = threshold_index(rep, kHeadline);
  const auto at = [&](const std::string& p) { return row(rep, p).recall.at(t); };
  const bool enough = rep.waypoint_count >= kMinWaypoints;

  int violations = 0;
  const PolicyResult& best = row(rep, "best_possible");
  for (const PolicyResult& p : rep.rows) {
    for (std::size_t k = 0; k < rep.thresholds.size(); ++k) violations += p.recall[k] > best.recall[k];
  }
  verdict(5, enough && violations == 0,
          fmt("BestPossible dominance over %zu policies x %zu thresholds on %d waypoints: %d violations",
              rep.rows.size(), rep.thresholds.size(), rep.waypoint_count, violations));

  const double pipeline_min = (run.gen_seconds + run.eval_seconds) / 60.0;
  const double occl_margin = at("max+occl") - at("max");
  verdict(6, enough && occl_margin >= kOcclusionMargin && pipeline_min < kPipelineMinutes,
          fmt("max+occl %.2f vs max %.2f at (0.1 m, 1 deg): margin %+.2f (need >= %g) on %d waypoints; "
              "gen-data + eval %.1f min (limit %g min)",
              at("max+occl"), at("max"), occl_margin, kOcclusionMargin, rep.waypoint_count, pipeline_min,
              kPipelineMinutes));

  const double angle = at("angle+occl"), mlp = at("mlp+occl"), vpt = at("vpt+occl");
  const double train_eval_min = (run.train_seconds + run.eval_seconds) / 60.0;
  const bool learned_ok = mlp >= angle - kLearnedSlack && vpt >= angle - kLearnedSlack && (mlp > angle || vpt > angle);
  verdict(7, learned_ok && train_eval_min < kTrainEvalMinutes,
          fmt("mlp+occl %.2f, vpt+occl %.2f vs angle+occl %.2f at (0.1 m, 1 deg): both >= angle - %g and one "
              "above; train + eval %.1f min (limit %g min)",
              mlp, vpt, angle, kLearnedSlack, train_eval_min, kTrainEvalMinutes));

  const double angle_margin = at("angle") - at("max");
  verdict(8, angle_margin >= kAngleMargin,
          fmt("angle %.2f vs max %.2f at (0.1 m, 1 deg), no occlusion filtering: margin %+.2f (need >= %g)",
              at("angle"), at("max"), angle_margin, kAngleMargin));

  const double expected = random_policy_expectation(test, kHeadline);
  const double measured = at("random");
  verdict(11, std::abs(measured - expected) <= kRandomTolerance,
          fmt("random %.2f vs per-waypoint positive-rate expectation %.2f at (0.1 m, 1 deg) on %d waypoints: "
              "|diff| %.2f (tol %g)",
              measured, expected, rep.waypoint_count, std::abs(measured - expected), kRandomTolerance));
}

void throughput(const ExperimentConfig& c, const Run& run, const std::vector<Shard>& test) {
  const LearnedModel vpt = LearnedModel::load((run.dir / "models/vpt").string());
  const std::string stem = (run.dir / "scenes/test_0").string();
  const OccupancyGrid grid = load_occupancy(stem + ".occ");
  LandmarkMap map = load_map((run.dir / "maps/test_0.map.json").string());
  map.cam = c.camera;
  const PolicySpec spec = parse_policy("vpt+occl");
  SelectContext ctx;
  ctx.vpt = &vpt;
  ctx.cone_slack_deg = c.cone_slack_deg;
  const Shard& s = test.at(0);
  std::vector<double> secs;
  for (int w = 0; w < kTimingWaypoints && w < static_cast<int>(s.waypoints.size()); ++w) {
    const auto cands = sample_viewpoints(s.waypoints[static_cast<std::size_t>(w)].position, kTimingCandidates,
                                         c.candidates.pitch_min_deg, c.candidates.pitch_max_deg,
                                         derive_seed(909, {static_cast<std::uint64_t>(w)}));
    const auto t0 = Clock::now();
    select(spec, map, grid, c.camera, cands, ctx);
    secs.push_back(since(t0));
  }
  std::sort(secs.begin(), secs.end());
  const double median = secs.empty() ? INFINITY : 0.5 * (secs[(secs.size() - 1) / 2] + secs[secs.size() / 2]);
  verdict(9, static_cast<int>(secs.size()) == kTimingWaypoints && median < kScoringSeconds,
          fmt("VPT scoring of %d candidates incl. features and occlusion rays: median %.3f s, max %.3f s over %zu "
              "waypoints (limit %g s)",
              kTimingCandidates, median, secs.empty() ? INFINITY : secs.back(), secs.size(), kScoringSeconds));
}

void determinism(const Run& a, const Run& b) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(a.dir / "data")) {
    files.push_back(fs::relative(e.path(), a.dir).string());
  }
  for (const char* f : {"models/mlp.bin", "models/mlp.json", "models/vpt.bin", "models/vpt.json",
                        "models/train_log.json", "eval/report.json", "report/report.md", "report/report.csv",
                        "report/report.json"}) {
    files.push_back(f);
  }
  std::sort(files.begin(), files.end());
  int same = 0;
  std::string differing;
  for (const std::string& f : files) {
    const std::string x = slurp(a.dir / f);
    if (!x.empty() && x == slurp(b.dir / f)) {
      ++same;
    } else {
      differing += " " + f;
    }
  }
  const int shards = static_cast<int>(std::count_if(files.begin(), files.end(), [](const std::string& f) {
    return f.ends_with(".shard");
  }));
  verdict(10, a.ok && b.ok && same == static_cast<int>(files.size()) && shards > 0,
          fmt("two seeded gen-data + train + eval + report runs: %d/%zu files byte-identical (%d shards, "
              "weights, reports)%s",
              same, files.size(), shards, differing.empty() ? "" : (";differ:" + differing).c_str()));
}

}  // namespace
}  // namespace avl

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  std::string cli, config, work;
  std::uint64_t seed = 1;
  app.add_option("--cli", cli, "Path of the avl tool")->required();
  app.add_option("--config", config, "Experiment configuration")->required();
  app.add_option("--work", work, "Scratch directory for the two pipeline runs")->required();
  app.add_option("--seed", seed, "Master seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  using namespace avl;
  try {
    noiseless_recovery();
    fim_correctness();
    gradient_suite();

    const ExperimentConfig c = load_config(config);
    std::printf("pipeline run A\n");
    const Run a = pipeline(cli, config, seed, fs::path(work) / "a");
    if (!a.ok) {
      std::printf("pipeline run A failed; see %s\n", (a.dir / "stderr.log").string().c_str());
      for (int id : {4, 5, 6, 7, 8, 9, 11}) verdict(id, false, "pipeline run A did not complete");
    } else {
      const std::vector<Shard> test = load_split((a.dir / "data").string(), Split::kTest);
      const EvalReport rep = report_from_json(read_json_file((a.dir / "eval/report.json").string()));
      invariance(test);
      recall_criteria(rep, test, a);
      throughput(c, a, test);
    }
    std::printf("pipeline run B\n");
    const Run b = pipeline(cli, config, seed, fs::path(work) / "b");
    determinism(a, b);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }

  std::sort(outcomes.begin(), outcomes.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
  int passed = 0;
  std::printf("\nsummary\n");
  for (const auto& o : outcomes) {
    std::printf("criterion %2d: %s\n", o.id, o.pass ? "PASS" : "FAIL");
    passed += o.pass;
  }
  std::printf("%d/%zu criteria passed\n", passed, outcomes.size());
  return passed == static_cast<int>(outcomes.size()) && outcomes.size() == 11 ? 0 : 1;
}
