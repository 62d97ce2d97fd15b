// nbv: data generation, training, evaluation and next-best-view missions.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nbv/nbv.hpp"

namespace fs = std::filesystem;
using namespace nbv;

namespace {

enum ExitCode { kOk = 0, kRuntime = 1, kInvalidConfig = 2, kMissingInput = 3 };

struct Common {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "JSON config file (overrides defaults)");
  sub->add_option("-o,--out", c.out, "output directory (relative paths honour NBV_OUTPUT_ROOT)");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--set", c.sets, "override a config key, e.g. --set train.total_steps=500");
}

nlohmann::json parse_set(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw config::ConfigError("--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
  return patch;
}

config::RunConfig resolve(const Common& c, const nlohmann::json& flag_patch = nlohmann::json::object()) {
  config::RunConfig cfg;
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw IoError("config file not found: " + c.config_path);
    cfg = config::load_config(c.config_path);
  }
  for (const auto& s : c.sets) cfg = config::apply_overrides(cfg, parse_set(s));
  if (!flag_patch.empty()) cfg = config::apply_overrides(cfg, flag_patch);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.planner.seed = *c.seed;
    cfg.train.seed = *c.seed;
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

renderer::SceneBounds bounds_of(const RigConfig& rig) { return {rig.centre, rig.scene_radius}; }

renderer::NeuralRenderer<float> load_renderer(const fs::path& path, const RigConfig& rig) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  const auto ck = training::load_checkpoint(path);
  return renderer::NeuralRenderer<float>(ck.params.cast<float>(), bounds_of(rig));
}

fs::path checkpoint_or_default(const std::string& flag, const fs::path& out) {
  return flag.empty() ? config::checkpoints_dir(out) / "best.ckpt" : fs::path(flag);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string p; std::getline(ss, p, ',');)
    if (!p.empty()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_generate(const config::RunConfig& cfg, const fs::path& out) {
  for (bool held : {false, true}) {
    const int n = held ? cfg.data.held_out_scenes : cfg.data.train_scenes;
    for (int i = 0; i < n; ++i) {
      const std::uint64_t seed = (held ? cfg.data.held_out_seed_base : cfg.data.train_seed_base) + static_cast<std::uint64_t>(i);
      const Scene scene = build_scene(seed, cfg.data.difficulty_of(i), cfg.rig);
      const fs::path dir = out / "data" / (held ? "held_out" : "train") / ("scene_" + std::to_string(seed));
      const auto set = generate_dataset(scene, cfg.data.views_per_scene, cfg.data.resolution, cfg.data.resolution, dir, cfg.rig);
      std::cout << (held ? "held-out " : "train    ") << set.scene_id << " -> " << dir.string() << "\n";
    }
  }
  return kOk;
}

int cmd_train(const config::RunConfig& cfg, const fs::path& out, const std::string& resume) {
  const auto train_sets = config::load_split(cfg, false);
  const auto held_out = config::load_split(cfg, true);
  training::TrainOptions opts;
  opts.checkpoint_dir = config::checkpoints_dir(out);
  opts.log_path = config::reports_dir(out) / "train.jsonl";
  opts.config_snapshot = config::to_json_tree(cfg);
  opts.bounds = bounds_of(cfg.rig);
  if (!resume.empty()) {
    if (!fs::exists(resume)) throw IoError("checkpoint not found: " + resume);
    opts.resume = training::load_checkpoint(resume);
    require(opts.resume->params.config == cfg.model, "resume: checkpoint model config differs from the run config");
  }
  opts.on_record = [](const training::LogRecord& r) {
    if (r.val_psnr) std::cout << "step " << r.step << " loss " << r.loss << " val_psnr " << *r.val_psnr << std::endl;
  };
  const auto res = training::train(train_sets, held_out, cfg.model, cfg.train, opts);
  std::cout << "initial val_psnr " << res.initial_validation_psnr << " best " << res.best.best_validation_psnr
            << " at step " << res.best.step << "\n";
  return kOk;
}

int cmd_eval_uncertainty(const config::RunConfig& cfg, const fs::path& out, const std::string& ckpt) {
  const auto net = load_renderer(checkpoint_or_default(ckpt, out), cfg.rig);
  const auto held_out = config::load_split(cfg, true);
  evaluation::EvalReport report;
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    evaluation::UncertaintyProtocolConfig pc;
    pc.n_sets = cfg.eval.uncertainty_sets;
    pc.n_references = cfg.eval.uncertainty_references;
    pc.resolution = cfg.eval.uncertainty_resolution;
    pc.mc_samples = cfg.planner.mc_samples;
    pc.seed = derive_seed(cfg.seed, i);
    auto r = evaluation::eval_uncertainty_protocol(net, held_out[i], pc);
    std::cout << r.scene_id << " srcc " << (r.srcc ? std::to_string(*r.srcc) : std::string("undefined")) << " ause "
              << r.mean_ause << "\n";
    report.uncertainty.push_back(std::move(r));
  }
  write_json(config::reports_dir(out) / "uncertainty.json", report.to_json());
  return kOk;
}

struct MissionSource {
  int scene = 0;
  std::string dataset;  // discrete mode when set

  std::string scene_id() const {
    return dataset.empty() ? "held_out_" + std::to_string(scene) : fs::path(dataset).filename().string();
  }
  nlohmann::json to_json() const { return {{"scene", scene}, {"dataset", dataset}, {"scene_id", scene_id()}}; }
};

std::unique_ptr<MeasurementSource> make_oracle(const config::RunConfig& cfg, const MissionSource& src) {
  if (!src.dataset.empty()) return std::make_unique<DatasetMeasurement>(load_posed_dataset(src.dataset), cfg.rig);
  require(src.scene >= 0 && src.scene < cfg.data.held_out_scenes, "scene index outside the held-out range");
  return std::make_unique<SceneMeasurement>(config::held_out_oracle(cfg, src.scene));
}

void save_mission(const config::RunConfig& cfg, const MissionSource& src, const planner::MissionResult& m,
                  const fs::path& dir) {
  m.log.write(dir / "mission.jsonl");
  planner::export_manifest(m.collection, src.scene_id(), dir / "collection");
  write_json(dir / "source.json", src.to_json());
  config::write_snapshot(cfg, dir);
}

int cmd_plan(const config::RunConfig& cfg, const fs::path& out, const std::string& ckpt, const MissionSource& src) {
  const auto oracle = make_oracle(cfg, src);
  std::optional<renderer::NeuralRenderer<float>> net;
  if (planner::needs_renderer(cfg.planner.policy)) net.emplace(load_renderer(checkpoint_or_default(ckpt, out), cfg.rig));
  const auto m = planner::run_mission(*oracle, net ? &*net : nullptr, cfg.planner);
  const fs::path dir = config::mission_dir(out, planner::to_string(cfg.planner.policy), cfg.planner.seed);
  save_mission(cfg, src, m, dir);
  std::cout << "mission with " << m.collection.size() << " images -> " << dir.string() << "\n";
  return kOk;
}

int cmd_export(const std::string& mission, const std::string& dest) {
  const fs::path dir(mission);
  for (const char* f : {"mission.jsonl", "source.json", "config.snapshot"})
    if (!fs::exists(dir / f)) throw IoError("mission directory lacks " + std::string(f) + ": " + dir.string());
  const auto cfg = config::load_config(dir / "config.snapshot");
  std::ifstream sf(dir / "source.json");
  const auto sj = nlohmann::json::parse(sf);
  const MissionSource src{sj.at("scene").get<int>(), sj.at("dataset").get<std::string>()};
  const auto oracle = make_oracle(cfg, src);
  const auto log = planner::MissionLog::read(dir / "mission.jsonl");
  planner::ImageCollection c;
  for (const auto& v : log.init_views) c.add(oracle->measure(v), v);
  for (const auto& s : log.steps) c.add(oracle->measure(s.chosen_view()), s.chosen_view());
  planner::export_manifest(c, src.scene_id(), dest);
  std::cout << "exported " << c.size() << " images -> " << dest << "\n";
  return kOk;
}

int cmd_eval_planning(const config::RunConfig& cfg, const fs::path& out, const std::string& ckpt) {
  const auto net = load_renderer(checkpoint_or_default(ckpt, out), cfg.rig);
  std::vector<planner::Policy> policies;
  for (const auto& p : cfg.eval.policies) policies.push_back(planner::policy_from_string(p));
  evaluation::PlanningProtocolConfig proto;
  proto.every_n = cfg.eval.every_n;
  proto.max_references = cfg.planner.max_references;
  proto.resolution = cfg.eval.test_resolution;
  proto.mc_samples = cfg.planner.mc_samples;
  proto.seed = cfg.seed;

  std::map<std::string, std::vector<evaluation::PlanningCurve>> all;
  nlohmann::json per_scene = nlohmann::json::object();
  const int n_scenes = std::min(cfg.eval.scenes, cfg.data.held_out_scenes);
  for (int s = 0; s < n_scenes; ++s) {
    const auto oracle = config::held_out_oracle(cfg, s);
    const auto tests = evaluation::make_test_views(oracle, cfg.eval.test_views, cfg.eval.test_resolution, derive_seed(cfg.seed, static_cast<std::uint64_t>(s)));
    const MissionSource src{s, ""};
    const auto study = evaluation::run_planning_study(
        &net, oracle, tests, policies, cfg.eval.runs, cfg.planner, proto,
        [&](planner::Policy p, int r, const planner::MissionResult& m) {
          const fs::path dir = config::mission_dir(out, planner::to_string(p), cfg.planner.seed + static_cast<std::uint64_t>(r)) /
                               ("scene_" + std::to_string(s));
          save_mission(cfg, src, m, dir);
          std::cout << "scene " << s << " " << planner::to_string(p) << " run " << r << " done" << std::endl;
        });
    evaluation::EvalReport scene_report;
    scene_report.planning = study.stats;
    per_scene[std::to_string(s)] = scene_report.to_json()["planning"];
    for (const auto& [name, curves] : study.curves) all[name].insert(all[name].end(), curves.begin(), curves.end());
  }

  evaluation::EvalReport report;
  for (const auto& [name, curves] : all) report.planning[name] = evaluation::summarise(curves);
  auto j = report.to_json();
  j["per_scene"] = per_scene;
  write_json(config::reports_dir(out) / "planning.json", j);

  const std::string hash = config::config_hash(cfg);
  for (const bool is_psnr : {true, false}) {
    std::vector<plot::Series> series;
    for (const auto& [name, st] : report.planning) {
      plot::Series sr{name, {}, is_psnr ? st.psnr_mean : st.ssim_mean, is_psnr ? st.psnr_std : st.ssim_std};
      for (int n : st.sizes) sr.x.push_back(n);
      series.push_back(std::move(sr));
    }
    const auto img = plot::line_plot(series, is_psnr ? "Test-view PSNR" : "Test-view SSIM", "measurements",
                                     is_psnr ? "PSNR (dB)" : "SSIM");
    const fs::path path = config::plots_dir(out) / ((is_psnr ? "psnr_" : "ssim_") + hash + ".png");
    fs::create_directories(path.parent_path());
    write_png(path, img);
    std::cout << "plot -> " << path.string() << "\n";
  }
  for (const auto& [name, st] : report.planning)
    std::cout << name << " final psnr " << st.psnr_mean.back() << " +- " << st.psnr_std.back() << "\n";
  return kOk;
}

int cmd_render(const config::RunConfig& cfg, const fs::path& out, const std::string& ckpt, const MissionSource& src,
               int target, const std::string& refs_csv, int resolution) {
  const auto net = load_renderer(checkpoint_or_default(ckpt, out), cfg.rig);
  const PosedImageSet set = src.dataset.empty() ? config::procedural_scene(cfg, true, src.scene) : load_posed_dataset(src.dataset);
  require(target >= 0 && static_cast<std::size_t>(target) < set.size(), "render: target index out of range");
  std::vector<PosedImage> refs;
  for (const auto& r : split_csv(refs_csv)) {
    const int k = std::stoi(r);
    require(k >= 0 && static_cast<std::size_t>(k) < set.size(), "render: reference index out of range");
    refs.push_back(set.images[k]);
  }
  const int w = resolution > 0 ? resolution : set.images[target].image.width;
  const int h = resolution > 0 ? resolution : set.images[target].image.height;
  const auto view = net.render(set.images[target].view, refs, w, h);
  const auto mc = uncertainty::uncertainty_map(view, cfg.planner.mc_samples, cfg.seed);
  const Image& src_img = set.images[target].image;
  const Image gt = (src_img.width == w && src_img.height == h) ? src_img : resize_area(src_img, w, h);
  Image err(w, h, 1);
  const auto e = evaluation::squared_error_map(mc.rgb, gt);
  for (std::size_t p = 0; p < e.size(); ++p) err.data[p] = static_cast<float>(e[p]);

  const fs::path dir = out / "renders";
  fs::create_directories(dir);
  const std::string stem = "view_" + std::to_string(target);
  write_png(dir / (stem + "_rgb.png"), mc.rgb);
  const auto& uv = mc.uncertainty.values.data;
  const double umax = std::max(1e-6, static_cast<double>(*std::max_element(uv.begin(), uv.end())));
  const double emax = std::max(1e-6, *std::max_element(e.begin(), e.end()));
  const Image uheat = plot::heat_map(mc.uncertainty.values, umax);
  write_png(dir / (stem + "_uncertainty.png"), uheat);
  write_png(dir / (stem + "_panel.png"),
            plot::panels({{"truth", gt}, {"render", mc.rgb}, {"uncertainty", uheat}, {"error", plot::heat_map(err, emax)}}));
  std::cout << "psnr " << evaluation::psnr(mc.rgb, gt) << " mean_uncertainty " << mc.uncertainty.mean() << " -> "
            << (dir / (stem + "_panel.png")).string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-guided next-best-view planning with image-based neural rendering"};
  app.require_subcommand(1);

  Common common;
  std::string ckpt, resume, policy, dataset, mission, dest, refs = "0,1,2", policies_csv;
  std::optional<int> budget, candidates, steps, runs, scenes;
  int scene = 0, target = 3, resolution = 0;

  auto* gen = app.add_subcommand("generate-data", "render procedural training and held-out datasets");
  auto* train = app.add_subcommand("train", "train the renderer");
  train->add_option("--steps", steps, "total training steps");
  train->add_option("--resume", resume, "checkpoint to resume from");
  auto* evu = app.add_subcommand("eval-uncertainty", "SRCC and AUSE on held-out scenes");
  auto* plan = app.add_subcommand("plan", "run one mission");
  plan->add_option("--policy", policy, "uncertainty | random | max_view_distance | oracle_error");
  plan->add_option("--budget", budget, "images including initialisation");
  plan->add_option("--candidates", candidates, "candidates per step");
  plan->add_option("--scene", scene, "held-out scene index");
  plan->add_option("--dataset", dataset, "recorded dataset (discrete candidate mode)");
  auto* evp = app.add_subcommand("eval-planning", "multi-seed, multi-policy planning comparison");
  evp->add_option("--policies", policies_csv, "comma separated policies");
  evp->add_option("--runs", runs, "missions per policy and scene");
  evp->add_option("--scenes", scenes, "held-out scenes to use");
  auto* rend = app.add_subcommand("render", "render one view with its uncertainty");
  rend->add_option("--scene", scene, "held-out scene index");
  rend->add_option("--dataset", dataset, "recorded dataset instead of a procedural scene");
  rend->add_option("--target", target, "target image index");
  rend->add_option("--refs", refs, "comma separated reference indices");
  rend->add_option("--resolution", resolution, "square output size (0: native)");
  auto* exp = app.add_subcommand("export", "re-measure a mission's views into a posed dataset");
  exp->add_option("--mission", mission, "mission directory")->required();
  exp->add_option("--dest", dest, "output dataset directory")->required();

  for (auto* s : {gen, train, evu, plan, evp, rend}) add_common(s, common);
  for (auto* s : {evu, plan, evp, rend}) s->add_option("--checkpoint", ckpt, "checkpoint (default: {out}/checkpoints/best.ckpt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kInvalidConfig;
  }

  try {
    nlohmann::json patch = nlohmann::json::object();
    if (steps) patch["train"]["total_steps"] = *steps;
    if (!policy.empty()) patch["planner"]["policy"] = policy;
    if (budget) patch["planner"]["budget"] = *budget;
    if (candidates) patch["planner"]["candidates"] = *candidates;
    if (!policies_csv.empty()) patch["eval"]["policies"] = split_csv(policies_csv);
    if (runs) patch["eval"]["runs"] = *runs;
    if (scenes) patch["eval"]["scenes"] = *scenes;

    if (*exp) return cmd_export(mission, dest);
    const auto cfg = resolve(common, patch);
    const fs::path out = config::resolve_output_dir(cfg);
    config::write_snapshot(cfg, out);
    const MissionSource src{scene, dataset};
    if (*gen) return cmd_generate(cfg, out);
    if (*train) return cmd_train(cfg, out, resume);
    if (*evu) return cmd_eval_uncertainty(cfg, out, ckpt);
    if (*plan) return cmd_plan(cfg, out, ckpt, src);
    if (*evp) return cmd_eval_planning(cfg, out, ckpt);
    if (*rend) return cmd_render(cfg, out, ckpt, src, target, refs, resolution);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const IoError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return kMissingInput;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    const bool missing = e.kind() == DatasetError::Kind::missing_manifest || e.kind() == DatasetError::Kind::missing_image;
    return missing ? kMissingInput : kRuntime;
  } catch (const training::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return e.kind() == training::CheckpointError::Kind::io ? kMissingInput : kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}
