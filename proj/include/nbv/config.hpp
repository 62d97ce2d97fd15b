#pragma once

// Run configuration: defaults, strict JSON overlay, output layout and snapshots.

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "nbv/core.hpp"
#include "nbv/planner.hpp"
#include "nbv/renderer.hpp"
#include "nbv/scene_oracle.hpp"
#include "nbv/training.hpp"

namespace nbv::config {

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline constexpr const char* kOutputRootEnv = "NBV_OUTPUT_ROOT";

struct DataConfig {
  std::vector<std::string> train_dirs;     // recorded datasets; empty: generate procedurally
  std::vector<std::string> held_out_dirs;
  int train_scenes = 12;
  int held_out_scenes = 3;
  int views_per_scene = 50;
  int resolution = 64;
  std::uint64_t train_seed_base = 100;
  std::uint64_t held_out_seed_base = 900;
  std::string difficulty = "mixed";  // simple | cluttered | mixed (alternating)

  Difficulty difficulty_of(int index) const {
    if (difficulty == "mixed") return index % 2 ? Difficulty::cluttered : Difficulty::simple;
    return difficulty_from_string(difficulty);
  }
};

struct EvalConfig {
  int uncertainty_sets = 100;
  int uncertainty_references = 3;
  int uncertainty_resolution = 0;  // 0: native
  int test_views = 100;
  int test_resolution = 32;
  int every_n = 2;
  int runs = 10;
  int scenes = 2;  // held-out scenes used for planning evaluation
  std::vector<std::string> policies{"uncertainty", "random", "max_view_distance"};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  RigConfig rig;
  DataConfig data;
  renderer::ModelConfig model;
  training::TrainConfig train;
  planner::PlannerConfig planner;
  EvalConfig eval;

  void validate() const;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline nlohmann::json to_json_tree(const RunConfig& c) {
  using nlohmann::json;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["rig"] = {{"hemisphere_radius", c.rig.hemisphere_radius},
              {"centre", {c.rig.centre.x(), c.rig.centre.y(), c.rig.centre.z()}},
              {"fov_deg", c.rig.fov * 180.0 / std::numbers::pi},
              {"min_elevation_deg", c.rig.min_elevation * 180.0 / std::numbers::pi},
              {"scene_radius", c.rig.scene_radius}};
  j["data"] = {{"train_dirs", c.data.train_dirs},
               {"held_out_dirs", c.data.held_out_dirs},
               {"train_scenes", c.data.train_scenes},
               {"held_out_scenes", c.data.held_out_scenes},
               {"views_per_scene", c.data.views_per_scene},
               {"resolution", c.data.resolution},
               {"train_seed_base", c.data.train_seed_base},
               {"held_out_seed_base", c.data.held_out_seed_base},
               {"difficulty", c.data.difficulty}};
  j["model"] = c.model;
  j["train"] = c.train;
  j["planner"] = {{"candidates", c.planner.candidates},
                  {"max_view_change_deg", c.planner.max_view_change * 180.0 / std::numbers::pi},
                  {"max_references", c.planner.max_references},
                  {"budget", c.planner.budget},
                  {"n_init", c.planner.n_init},
                  {"utility_width", c.planner.utility_width},
                  {"utility_height", c.planner.utility_height},
                  {"mc_samples", c.planner.mc_samples},
                  {"oracle_resolution", c.planner.oracle_resolution},
                  {"policy", planner::to_string(c.planner.policy)}};
  j["eval"] = {{"uncertainty_sets", c.eval.uncertainty_sets},
               {"uncertainty_references", c.eval.uncertainty_references},
               {"uncertainty_resolution", c.eval.uncertainty_resolution},
               {"test_views", c.eval.test_views},
               {"test_resolution", c.eval.test_resolution},
               {"every_n", c.eval.every_n},
               {"runs", c.eval.runs},
               {"scenes", c.eval.scenes},
               {"policies", c.eval.policies}};
  return j;
}

inline RunConfig from_json_tree(const nlohmann::json& j) {
  RunConfig c;
  try {
    j.at("seed").get_to(c.seed);
    j.at("output_dir").get_to(c.output_dir);
    const auto& r = j.at("rig");
    r.at("hemisphere_radius").get_to(c.rig.hemisphere_radius);
    c.rig.centre = Vec3(r.at("centre").at(0), r.at("centre").at(1), r.at("centre").at(2));
    c.rig.fov = deg_to_rad(r.at("fov_deg").get<double>());
    c.rig.min_elevation = deg_to_rad(r.at("min_elevation_deg").get<double>());
    r.at("scene_radius").get_to(c.rig.scene_radius);
    const auto& d = j.at("data");
    d.at("train_dirs").get_to(c.data.train_dirs);
    d.at("held_out_dirs").get_to(c.data.held_out_dirs);
    d.at("train_scenes").get_to(c.data.train_scenes);
    d.at("held_out_scenes").get_to(c.data.held_out_scenes);
    d.at("views_per_scene").get_to(c.data.views_per_scene);
    d.at("resolution").get_to(c.data.resolution);
    d.at("train_seed_base").get_to(c.data.train_seed_base);
    d.at("held_out_seed_base").get_to(c.data.held_out_seed_base);
    d.at("difficulty").get_to(c.data.difficulty);
    c.model = j.at("model").get<renderer::ModelConfig>();
    const auto& t = j.at("train");
    t.at("learning_rate").get_to(c.train.learning_rate);
    t.at("lr_decay").get_to(c.train.lr_decay);
    t.at("steps_per_epoch").get_to(c.train.steps_per_epoch);
    t.at("rays_per_batch").get_to(c.train.rays_per_batch);
    t.at("n_ref_choices").get_to(c.train.n_ref_choices);
    t.at("total_steps").get_to(c.train.total_steps);
    t.at("validation_interval").get_to(c.train.validation_interval);
    t.at("validation_views").get_to(c.train.validation_views);
    t.at("validation_resolution").get_to(c.train.validation_resolution);
    t.at("checkpoint_interval").get_to(c.train.checkpoint_interval);
    t.at("grad_clip").get_to(c.train.grad_clip);
    t.at("colour_augment").get_to(c.train.colour_augment);
    t.at("seed").get_to(c.train.seed);
    const auto& p = j.at("planner");
    p.at("candidates").get_to(c.planner.candidates);
    c.planner.max_view_change = deg_to_rad(p.at("max_view_change_deg").get<double>());
    p.at("max_references").get_to(c.planner.max_references);
    p.at("budget").get_to(c.planner.budget);
    p.at("n_init").get_to(c.planner.n_init);
    p.at("utility_width").get_to(c.planner.utility_width);
    p.at("utility_height").get_to(c.planner.utility_height);
    p.at("mc_samples").get_to(c.planner.mc_samples);
    p.at("oracle_resolution").get_to(c.planner.oracle_resolution);
    c.planner.policy = planner::policy_from_string(p.at("policy").get<std::string>());
    const auto& e = j.at("eval");
    e.at("uncertainty_sets").get_to(c.eval.uncertainty_sets);
    e.at("uncertainty_references").get_to(c.eval.uncertainty_references);
    e.at("uncertainty_resolution").get_to(c.eval.uncertainty_resolution);
    e.at("test_views").get_to(c.eval.test_views);
    e.at("test_resolution").get_to(c.eval.test_resolution);
    e.at("every_n").get_to(c.eval.every_n);
    e.at("runs").get_to(c.eval.runs);
    e.at("scenes").get_to(c.eval.scenes);
    e.at("policies").get_to(c.eval.policies);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("invalid configuration: ") + ex.what());
  } catch (const ContractViolation& ex) {
    throw ConfigError(std::string("invalid configuration: ") + ex.what());
  }
  c.planner.seed = c.seed;
  return c;
}

namespace detail {

inline bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

/// Overlays `patch` onto `base`; every key in patch must already exist in base
/// with a compatible type.
inline void strict_merge(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("configuration at '" + path + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown configuration key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      strict_merge(slot, it.value(), key);
    } else {
      if (!same_kind(slot, it.value()))
        throw ConfigError("configuration key '" + key + "' has the wrong type (expected " + slot.type_name() + ")");
      if (slot.is_array() && !slot.empty() && !it.value().empty() && !same_kind(slot.front(), it.value().front()))
        throw ConfigError("configuration key '" + key + "' has elements of the wrong type");
      slot = it.value();
    }
  }
}

}  // namespace detail

inline void RunConfig::validate() const {
  try {
    rig.intrinsics(8, 8);
    require(rig.hemisphere_radius > rig.scene_radius, "rig: hemisphere radius must exceed the scene radius");
    require(rig.fov > 0 && rig.fov < std::numbers::pi, "rig: fov must lie in (0, 180) degrees");
    require(rig.min_elevation >= 0 && rig.min_elevation < std::numbers::pi / 2, "rig: min elevation outside [0, 90)");
    require(data.train_scenes >= 1 && data.held_out_scenes >= 1, "data: need at least one training and held-out scene");
    require(data.views_per_scene >= 6, "data: at least 6 views per scene");
    require(data.resolution >= model.min_input_size, "data: resolution below encoder minimum");
    require(data.difficulty == "mixed" || data.difficulty == "simple" || data.difficulty == "cluttered",
            "data: difficulty must be simple, cluttered or mixed");
    model.validate();
    train.validate();
    planner.validate();
    require(planner.max_references <= model.max_references, "planner: max_references exceeds the model's limit");
    require(eval.uncertainty_sets >= 2 && eval.uncertainty_references >= 1, "eval: uncertainty protocol sizes");
    require(eval.uncertainty_resolution >= 0, "eval: uncertainty_resolution must be >= 0");
    require(eval.test_views >= 1 && eval.test_resolution >= 11, "eval: test views and resolution (>= 11 for SSIM)");
    require(eval.every_n >= 1 && eval.runs >= 1 && eval.scenes >= 1, "eval: every_n, runs and scenes must be >= 1");
    require(!eval.policies.empty(), "eval: at least one policy");
    for (const auto& p : eval.policies) planner::policy_from_string(p);
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

/// Defaults overlaid with a JSON document (unknown keys and type mismatches rejected).
inline RunConfig apply_overrides(const RunConfig& base, const nlohmann::json& patch) {
  auto tree = to_json_tree(base);
  detail::strict_merge(tree, patch, "");
  return from_json_tree(tree);
}

inline RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = {}) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return apply_overrides(base, j);
}

/// Output directory with the NBV_OUTPUT_ROOT override applied to relative paths.
inline std::filesystem::path resolve_output_dir(const RunConfig& c) {
  std::filesystem::path out(c.output_dir);
  if (out.is_relative())
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) out = std::filesystem::path(root) / out;
  return out;
}

inline std::string canonical_text(const RunConfig& c) { return to_json_tree(c).dump(2) + "\n"; }

/// Stable 16-hex-digit hash of the resolved configuration.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json_tree(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline void write_snapshot(const RunConfig& c, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(out_dir / "config.snapshot", std::ios::trunc);
  if (!f) throw IoError("cannot write " + (out_dir / "config.snapshot").string());
  f << canonical_text(c);
}

// Output layout.
inline std::filesystem::path checkpoints_dir(const std::filesystem::path& out) { return out / "checkpoints"; }
inline std::filesystem::path mission_dir(const std::filesystem::path& out, const std::string& policy,
                                         std::uint64_t seed) {
  return out / "missions" / policy / std::to_string(seed);
}
inline std::filesystem::path reports_dir(const std::filesystem::path& out) { return out / "reports"; }
inline std::filesystem::path plots_dir(const std::filesystem::path& out) { return out / "plots"; }

// ---------------------------------------------------------------------------
// Datasets named by a configuration

inline PosedImageSet procedural_scene(const RunConfig& c, bool held_out, int index) {
  const std::uint64_t seed = (held_out ? c.data.held_out_seed_base : c.data.train_seed_base) + static_cast<std::uint64_t>(index);
  return generate_dataset(build_scene(seed, c.data.difficulty_of(index), c.rig), c.data.views_per_scene,
                          c.data.resolution, c.data.resolution, "", c.rig);
}

inline std::vector<PosedImageSet> load_split(const RunConfig& c, bool held_out) {
  const auto& dirs = held_out ? c.data.held_out_dirs : c.data.train_dirs;
  std::vector<PosedImageSet> out;
  if (!dirs.empty()) {
    for (const auto& d : dirs) out.push_back(load_posed_dataset(d));
    return out;
  }
  const int n = held_out ? c.data.held_out_scenes : c.data.train_scenes;
  for (int i = 0; i < n; ++i) out.push_back(procedural_scene(c, held_out, i));
  return out;
}

/// Live measurement oracle for held-out scene `index`.
inline SceneMeasurement held_out_oracle(const RunConfig& c, int index) {
  return SceneMeasurement(build_scene(c.data.held_out_seed_base + static_cast<std::uint64_t>(index),
                                      c.data.difficulty_of(index), c.rig),
                          c.rig, c.data.resolution, c.data.resolution);
}

}  // namespace nbv::config
