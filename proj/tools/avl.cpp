// Command-line driver: gen-scene, map, gen-data, train, eval, report.
//
//   avl <stage> --config exp.json --seed 7 --run-dir runs/a
//
// Each stage reuses what earlier stages left in the run directory and
// builds anything missing.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "avl/errors.hpp"
#include "avl/harness.hpp"
#include "avl/json_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitFailure = 3;

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string run_dir = "run";
  std::string format;  // report only
};

std::string in_run(const Options& o, const std::string& rel) { return (fs::path(o.run_dir) / rel).string(); }

std::string world_stem(const Options& o, avl::Split s, int i) {
  return in_run(o, "scenes/" + avl::to_string(s) + "_" + std::to_string(i));
}

std::string map_path(const Options& o, avl::Split s, int i) {
  return in_run(o, "maps/" + avl::to_string(s) + "_" + std::to_string(i) + ".map.json");
}

template <typename F>
void for_each_scene(const avl::ExperimentConfig& c, F f) {
  for (int i = 0; i < c.train_scenes; ++i) f(avl::Split::kTrain, i);
  for (int i = 0; i < c.test_scenes; ++i) f(avl::Split::kTest, i);
}

// Scene and grid from the run directory when they belong to this seed.
avl::World scene_for(const avl::ExperimentConfig& c, const Options& o, avl::Split s, int i, bool write) {
  const std::string stem = world_stem(o, s, i);
  const std::uint64_t want = avl::scene_seed(o.seed, s, i);
  if (fs::exists(stem + ".scene.json") && fs::exists(stem + ".occ")) {
    avl::World w;
    w.split = s;
    w.index = i;
    w.seed = want;
    w.scene = avl::load_scene(stem + ".scene.json");
    if (w.scene.seed == want) {
      w.grid = avl::load_occupancy(stem + ".occ");
      return w;
    }
  }
  avl::World w = avl::build_scene(c, s, i, o.seed);
  if (write) {
    fs::create_directories(fs::path(stem).parent_path());
    avl::save_scene(w.scene, stem + ".scene.json");
    avl::save_occupancy(w.grid, stem + ".occ");
  }
  return w;
}

avl::World world_for(const avl::ExperimentConfig& c, const Options& o, avl::Split s, int i, bool write) {
  avl::World w = scene_for(c, o, s, i, write);
  const std::string mp = map_path(o, s, i);
  if (fs::exists(mp)) {
    w.map = avl::load_map(mp);
    if (w.map.source_scene_seed == w.seed) return w;
  }
  avl::build_map(c, w);
  if (write) {
    fs::create_directories(fs::path(mp).parent_path());
    avl::save_map(w.map, mp);
  }
  return w;
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw avl::IoError("cannot open for writing: " + path);
  out << text;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void gen_scene(const avl::ExperimentConfig& c, const Options& o) {
  json files = json::array();
  for_each_scene(c, [&](avl::Split s, int i) {
    const avl::World w = scene_for(c, o, s, i, true);
    std::clog << "scene " << avl::to_string(s) << " " << i << ": " << w.scene.landmarks.size()
              << " landmarks, " << w.scene.occluders.size() << " occluders\n";
    files.push_back(fs::relative(world_stem(o, s, i), o.run_dir).string());
  });
  avl::record_stage(o.run_dir, "gen-scene", c, o.seed, {{"scenes", files}});
}

void map(const avl::ExperimentConfig& c, const Options& o) {
  json files = json::array();
  for_each_scene(c, [&](avl::Split s, int i) {
    const avl::World w = world_for(c, o, s, i, true);
    std::clog << "map " << avl::to_string(s) << " " << i << ": " << w.map.landmarks.size()
              << " landmarks mapped\n";
    files.push_back(fs::relative(map_path(o, s, i), o.run_dir).string());
  });
  avl::record_stage(o.run_dir, "map", c, o.seed, {{"maps", files}});
}

void gen_data(const avl::ExperimentConfig& c, const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<avl::World> worlds;
  for_each_scene(c, [&](avl::Split s, int i) { worlds.push_back(world_for(c, o, s, i, true)); });
  const json sidecar = avl::gen_dataset(c, o.seed, in_run(o, "data"), &worlds);
  long records = 0;
  for (const json& e : sidecar["shards"]) records += e["records"].get<long>();
  std::clog << "gen-data: " << records << " records in " << seconds_since(t0) << " s\n";
  avl::record_stage(o.run_dir, "gen-data", c, o.seed,
                    {{"dataset", "data/dataset.schema.json"}, {"records", records}});
}

void train(const avl::ExperimentConfig& c, const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<avl::Shard> shards = avl::load_split(in_run(o, "data"), avl::Split::kTrain);
  if (shards.empty()) throw avl::ConfigError("no training shards; run gen-data with train_scenes > 0");
  const avl::TrainedModels m = avl::train_models(c, shards, o.seed);
  fs::create_directories(in_run(o, "models"));
  m.mlp.save(in_run(o, "models/mlp"));
  m.vpt.save(in_run(o, "models/vpt"));
  avl::write_json_file(m.log, in_run(o, "models/train_log.json"));
  const double secs = seconds_since(t0);
  avl::write_json_file({{"train_seconds", secs}}, in_run(o, "models/timing.json"));
  std::clog << "train: mlp val acc " << m.log["mlp"]["best_val_accuracy"] << ", vpt val acc "
            << m.log["vpt"]["best_val_accuracy"] << ", " << secs << " s\n";
  avl::record_stage(o.run_dir, "train", c, o.seed,
                    {{"models", {"models/mlp", "models/vpt"}}, {"log", "models/train_log.json"}});
}

void eval(const avl::ExperimentConfig& c, const Options& o) {
  const std::vector<avl::Shard> shards = avl::load_split(in_run(o, "data"), avl::Split::kTest);
  bool need_mlp = false, need_vpt = false;
  for (const std::string& p : c.policies) {
    const avl::PolicySpec s = avl::parse_policy(p);
    need_mlp = need_mlp || s.kind == avl::PolicyKind::kMlp;
    need_vpt = need_vpt || s.kind == avl::PolicyKind::kVpt;
  }
  avl::LearnedModel mlp, vpt;
  if (need_mlp) mlp = avl::LearnedModel::load(in_run(o, "models/mlp"));
  if (need_vpt) vpt = avl::LearnedModel::load(in_run(o, "models/vpt"));
  std::vector<avl::PolicyTiming> timing;
  const avl::EvalReport r =
      avl::evaluate(c, shards, need_mlp ? &mlp : nullptr, need_vpt ? &vpt : nullptr, o.seed, &timing);
  write_text(in_run(o, "eval/report.json"), avl::render_report(r, "json"));
  json t = json::array();
  for (const avl::PolicyTiming& p : timing) {
    t.push_back({{"policy", p.policy},
                 {"seconds", p.seconds},
                 {"candidates", p.candidates},
                 {"candidates_per_second", p.seconds > 0 ? p.candidates / p.seconds : 0.0}});
  }
  avl::write_json_file({{"policies", t}}, in_run(o, "eval/timing.json"));
  std::clog << "eval: " << r.waypoint_count << " waypoints\n" << avl::render_report(r, "markdown");
  avl::record_stage(o.run_dir, "eval", c, o.seed,
                    {{"report", "eval/report.json"}, {"timing", "eval/timing.json"}});
}

void report(const avl::ExperimentConfig& c, const Options& o) {
  const avl::EvalReport r = avl::report_from_json(avl::read_json_file(in_run(o, "eval/report.json")));
  const std::vector<std::string> formats =
      o.format.empty() ? std::vector<std::string>{"markdown", "csv", "json"} : std::vector<std::string>{o.format};
  json files = json::array();
  for (const std::string& f : formats) {
    const std::string text = avl::render_report(r, f);
    const std::string name = "report/report." + std::string(f == "markdown" ? "md" : f);
    write_text(in_run(o, name), text);
    files.push_back(name);
  }
  if (!o.format.empty()) std::cout << avl::render_report(r, o.format);
  avl::record_stage(o.run_dir, "report", c, o.seed, {{"files", files}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active viewpoint selection for visual localization: experiment pipeline"};
  app.require_subcommand(1);
  Options o;
  struct Stage {
    const char* name;
    const char* help;
    void (*run)(const avl::ExperimentConfig&, const Options&);
  };
  const Stage stages[] = {
      {"gen-scene", "Generate train and test scenes with occupancy grids", gen_scene},
      {"map", "Run the mapping simulation on every scene", map},
      {"gen-data", "Generate dataset shards with localization labels", gen_data},
      {"train", "Train the MLP and VPT scorers", train},
      {"eval", "Paired evaluation of every configured policy", eval},
      {"report", "Render the evaluation report", report},
  };
  std::vector<CLI::App*> subs;
  for (const Stage& s : stages) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", o.config, "Experiment configuration (JSON)")->required();
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--run-dir", o.run_dir, "Run directory")->capture_default_str();
    if (std::string(s.name) == "report") {
      sub->add_option("--format", o.format, "Only this format, also printed: markdown, csv or json");
    }
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const avl::ExperimentConfig c = avl::load_config(o.config);
    for (std::size_t k = 0; k < subs.size(); ++k) {
      if (subs[k]->parsed()) stages[k].run(c, o);
    }
  } catch (const avl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const avl::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const avl::GenerationError& e) {
    std::cerr << "generation failed: " << e.what() << '\n';
    return kExitFailure;
  } catch (const avl::TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOk;
}
