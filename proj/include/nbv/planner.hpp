#pragma once

// Mapless next-best-view missions on the scene hemisphere.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nbv/core.hpp"
#include "nbv/geometry.hpp"
#include "nbv/renderer.hpp"
#include "nbv/scene_oracle.hpp"
#include "nbv/uncertainty.hpp"

namespace nbv::planner {

enum class Policy { uncertainty, random, max_view_distance, oracle_error };

inline std::string to_string(Policy p) {
  switch (p) {
    case Policy::uncertainty: return "uncertainty";
    case Policy::random: return "random";
    case Policy::max_view_distance: return "max_view_distance";
    case Policy::oracle_error: return "oracle_error";
  }
  return "unknown";
}

inline Policy policy_from_string(const std::string& s) {
  for (Policy p : {Policy::uncertainty, Policy::random, Policy::max_view_distance, Policy::oracle_error})
    if (to_string(p) == s) return p;
  throw ContractViolation("unknown policy '" + s + "'");
}

inline bool needs_renderer(Policy p) { return p == Policy::uncertainty || p == Policy::oracle_error; }

struct PlannerConfig {
  int candidates = 50;
  double max_view_change = deg_to_rad(60.0);
  int max_references = 5;
  int budget = 20;
  int n_init = 2;
  int utility_width = 60;
  int utility_height = 60;
  int mc_samples = uncertainty::kDefaultSamples;
  int oracle_resolution = 24;  // render size for the ground-truth-error policy
  std::uint64_t seed = 0;
  Policy policy = Policy::uncertainty;

  void validate() const {
    require(candidates >= 1, "PlannerConfig: K must be >= 1");
    require(max_references >= 1, "PlannerConfig: N_max must be >= 1");
    require(n_init >= 1, "PlannerConfig: n_init must be >= 1");
    require(budget > n_init, "PlannerConfig: budget must exceed n_init");
    require(max_view_change > 0 && max_view_change <= std::numbers::pi, "PlannerConfig: max view change outside (0, pi]");
    require(utility_width >= 1 && utility_height >= 1, "PlannerConfig: utility resolution must be positive");
    require(mc_samples >= 1 && oracle_resolution >= 1, "PlannerConfig: sample counts must be positive");
  }
};

struct CollectedImage {
  PosedImage posed;
  SphericalViewpoint viewpoint;
  int step = 0;  // acquisition index, 0-based
};

inline constexpr double kMinViewSeparation = 1e-6;

/// Acquisition-ordered posed images with pairwise distinct viewpoints.
class ImageCollection {
 public:
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const CollectedImage& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<CollectedImage>& items() const { return items_; }
  const CollectedImage& latest() const {
    require(!items_.empty(), "ImageCollection: empty");
    return items_.back();
  }

  bool contains(const SphericalViewpoint& v) const {
    for (const auto& it : items_)
      if (angular_distance(it.viewpoint, v) <= kMinViewSeparation) return true;
    return false;
  }

  void add(PosedImage posed, const SphericalViewpoint& v) {
    require(!contains(v), "ImageCollection: viewpoint already collected");
    items_.push_back({std::move(posed), v, static_cast<int>(items_.size())});
  }

  /// The first n acquisitions.
  ImageCollection prefix(std::size_t n) const {
    require(n <= items_.size(), "ImageCollection::prefix: too many");
    ImageCollection c;
    c.items_.assign(items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(n));
    return c;
  }

  std::vector<PosedImage> images() const {
    std::vector<PosedImage> out;
    for (const auto& it : items_) out.push_back(it.posed);
    return out;
  }

 private:
  std::vector<CollectedImage> items_;
};

/// Indices of up to n_max collected views closest to target, ascending by
/// angular distance, earlier acquisitions first on ties.
inline std::vector<std::size_t> select_reference_indices(const std::vector<SphericalViewpoint>& collected,
                                                         const SphericalViewpoint& target, int n_max) {
  require(!collected.empty(), "select_references: empty collection");
  require(n_max >= 1, "select_references: N_max must be >= 1");
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < collected.size(); ++i) order.emplace_back(angular_distance(collected[i], target), i);
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < order.size() && static_cast<int>(i) < n_max; ++i) out.push_back(order[i].second);
  return out;
}

inline std::vector<std::size_t> select_reference_indices(const ImageCollection& c, const SphericalViewpoint& target,
                                                         int n_max) {
  std::vector<SphericalViewpoint> views;
  for (const auto& it : c.items()) views.push_back(it.viewpoint);
  return select_reference_indices(views, target, n_max);
}

inline std::vector<PosedImage> select_references(const ImageCollection& c, const SphericalViewpoint& target, int n_max) {
  std::vector<PosedImage> out;
  for (std::size_t i : select_reference_indices(c, target, n_max)) out.push_back(c[i].posed);
  return out;
}

/// Mean over all entries of the candidate's uncertainty map.
inline double utility_from_map(const uncertainty::UncertaintyMap& map) { return map.mean(); }

/// g(k) of a candidate view rendered from already-encoded references.
inline double view_utility(const renderer::NeuralRenderer<float>& net, const CameraView& target,
                           const std::vector<const renderer::FeatureVolume<float>*>& refs, const PlannerConfig& cfg,
                           const uncertainty::NormalTable& normals) {
  require(!refs.empty(), "view_utility: no references");
  const auto view = net.render(target, refs, cfg.utility_width, cfg.utility_height);
  return utility_from_map(uncertainty::uncertainty_map(view, normals).uncertainty);
}

/// Index of the largest score; the lowest index wins ties.
inline std::size_t argmax_lowest(const std::vector<double>& scores) {
  require(!scores.empty(), "argmax: empty scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

/// Maximin angular distance to the collection.
inline std::vector<double> view_distance_scores(const ImageCollection& c,
                                                const std::vector<SphericalViewpoint>& candidates) {
  std::vector<double> scores;
  for (const auto& cand : candidates) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& it : c.items()) d = std::min(d, angular_distance(it.viewpoint, cand));
    scores.push_back(d);
  }
  return scores;
}

struct StepRecord {
  int step = 0;  // collection size before the acquisition
  std::vector<SphericalViewpoint> candidates;
  std::vector<double> scores;
  std::size_t chosen = 0;
  Policy policy = Policy::uncertainty;

  const SphericalViewpoint& chosen_view() const { return candidates[chosen]; }
};

struct MissionLog {
  Policy policy = Policy::uncertainty;
  std::uint64_t seed = 0;
  int budget = 0;
  int n_init = 0;
  double radius = 0.0;
  Vec3 centre = Vec3::Zero();
  std::vector<SphericalViewpoint> init_views;
  std::vector<StepRecord> steps;

  /// One JSON object per line: a header, then one record per planning step.
  std::string to_jsonl() const {
    auto vp = [](const SphericalViewpoint& v) { return nlohmann::json::array({v.azimuth, v.elevation}); };
    std::string out;
    nlohmann::json header = {{"type", "mission"},
                             {"policy", to_string(policy)},
                             {"seed", seed},
                             {"budget", budget},
                             {"n_init", n_init},
                             {"radius", radius},
                             {"centre", {centre.x(), centre.y(), centre.z()}},
                             {"init_views", nlohmann::json::array()}};
    for (const auto& v : init_views) header["init_views"].push_back(vp(v));
    out += header.dump() + "\n";
    for (const auto& s : steps) {
      nlohmann::json rec = {{"type", "step"},
                            {"step", s.step},
                            {"policy", to_string(s.policy)},
                            {"candidates", nlohmann::json::array()},
                            {"scores", s.scores},
                            {"chosen_index", s.chosen},
                            {"chosen", vp(s.chosen_view())}};
      for (const auto& c : s.candidates) rec["candidates"].push_back(vp(c));
      out += rec.dump() + "\n";
    }
    return out;
  }

  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write mission log " + path.string());
    f << to_jsonl();
  }

  static MissionLog read(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read mission log " + path.string());
    MissionLog log;
    std::string line;
    bool have_header = false;
    auto vp = [&log](const nlohmann::json& j) {
      return SphericalViewpoint{j.at(0).get<double>(), j.at(1).get<double>(), log.radius, log.centre};
    };
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.at("type") == "mission") {
        log.policy = policy_from_string(j.at("policy"));
        log.seed = j.at("seed").get<std::uint64_t>();
        log.budget = j.at("budget");
        log.n_init = j.at("n_init");
        log.radius = j.at("radius");
        const auto& c = j.at("centre");
        log.centre = Vec3(c.at(0), c.at(1), c.at(2));
        for (const auto& v : j.at("init_views")) log.init_views.push_back(vp(v));
        have_header = true;
      } else {
        require(have_header, "mission log: step before header");
        StepRecord s;
        s.step = j.at("step");
        s.policy = policy_from_string(j.at("policy"));
        for (const auto& v : j.at("candidates")) s.candidates.push_back(vp(v));
        s.scores = j.at("scores").get<std::vector<double>>();
        s.chosen = j.at("chosen_index");
        log.steps.push_back(std::move(s));
      }
    }
    require(have_header, "mission log: missing header");
    return log;
  }
};

/// Everything a policy may consult when scoring candidates.
struct PlanningContext {
  const MeasurementSource* oracle = nullptr;
  const renderer::NeuralRenderer<float>* net = nullptr;
  std::vector<renderer::FeatureVolume<float>> volumes;  // parallel to the collection
};

struct Selection {
  std::size_t index = 0;
  std::vector<double> scores;
};

inline std::vector<const renderer::FeatureVolume<float>*> volumes_for(const PlanningContext& ctx,
                                                                      const std::vector<std::size_t>& idx) {
  std::vector<const renderer::FeatureVolume<float>*> out;
  for (std::size_t i : idx) out.push_back(&ctx.volumes.at(i));
  return out;
}

/// Scores candidates under the policy and picks one. `step_seed` drives the MC
/// draws (one shared normal table for all candidates) and the random policy.
inline Selection select_next(const ImageCollection& collection, const std::vector<SphericalViewpoint>& candidates,
                             Policy policy, const PlanningContext& ctx, const PlannerConfig& cfg,
                             std::uint64_t step_seed) {
  require(!candidates.empty(), "select_next: no candidates");
  Selection sel;
  switch (policy) {
    case Policy::random: {
      Rng rng(step_seed);
      sel.index = rng.index(candidates.size());
      sel.scores.assign(candidates.size(), 0.0);
      return sel;
    }
    case Policy::max_view_distance:
      sel.scores = view_distance_scores(collection, candidates);
      break;
    case Policy::uncertainty: {
      require(ctx.net != nullptr, "select_next: the uncertainty policy needs a renderer");
      const uncertainty::NormalTable normals(step_seed, static_cast<std::size_t>(cfg.utility_width) * cfg.utility_height,
                                             cfg.mc_samples);
      const Intrinsics intr = ctx.oracle->rig().intrinsics(cfg.utility_width, cfg.utility_height);
      for (const auto& cand : candidates) {
        const auto refs = volumes_for(ctx, select_reference_indices(collection, cand, cfg.max_references));
        sel.scores.push_back(view_utility(*ctx.net, {intr, pose_from_spherical(cand)}, refs, cfg, normals));
      }
      break;
    }
    case Policy::oracle_error: {
      require(ctx.net != nullptr && ctx.oracle != nullptr, "select_next: the oracle policy needs a renderer and oracle");
      const int res = cfg.oracle_resolution;
      const Intrinsics intr = ctx.oracle->rig().intrinsics(res, res);
      for (const auto& cand : candidates) {
        const auto refs = volumes_for(ctx, select_reference_indices(collection, cand, cfg.max_references));
        const auto pred = uncertainty::mean_colour(ctx.net->render({intr, pose_from_spherical(cand)}, refs, res, res));
        const Image gt = ctx.oracle->ground_truth(cand, res, res);
        double mse = 0.0;
        for (std::size_t k = 0; k < gt.data.size(); ++k) mse += std::pow(pred.data[k] - gt.data[k], 2);
        sel.scores.push_back(mse / static_cast<double>(gt.data.size()));
      }
      break;
    }
  }
  sel.index = argmax_lowest(sel.scores);
  return sel;
}

/// n_init distinct random viewpoints (uniform on the hemisphere cap, or drawn
/// from the discrete view list), measured and inserted.
inline ImageCollection init_mission(const MeasurementSource& oracle, const PlannerConfig& cfg, Rng& rng) {
  cfg.validate();
  const RigConfig& rig = oracle.rig();
  ImageCollection c;
  const auto discrete = oracle.discrete_views();
  if (!discrete.empty()) {
    require(static_cast<int>(discrete.size()) >= cfg.budget, "init_mission: fewer discrete views than the budget");
    for (std::size_t i : sample_without_replacement(discrete.size(), static_cast<std::size_t>(cfg.n_init), rng))
      c.add(oracle.measure(discrete[i]), discrete[i]);
    return c;
  }
  while (static_cast<int>(c.size()) < cfg.n_init) {
    const auto v = sample_hemisphere_view(rig.hemisphere_radius, rig.centre, rng, rig.min_elevation);
    if (!c.contains(v)) c.add(oracle.measure(v), v);
  }
  return c;
}

struct MissionResult {
  MissionLog log;
  ImageCollection collection;
};

/// Init, then budget - n_init acquisitions. Candidates come from the cone
/// around the most recent view, or are all unvisited views in discrete mode.
inline MissionResult run_mission(const MeasurementSource& oracle, const renderer::NeuralRenderer<float>* net,
                                 const PlannerConfig& cfg) {
  cfg.validate();
  if (needs_renderer(cfg.policy)) require(net != nullptr, "run_mission: policy '" + to_string(cfg.policy) + "' needs a renderer");
  const RigConfig& rig = oracle.rig();
  const Rng root(cfg.seed);
  Rng init_rng = root.split(1);

  MissionResult res;
  res.collection = init_mission(oracle, cfg, init_rng);
  res.log.policy = cfg.policy;
  res.log.seed = cfg.seed;
  res.log.budget = cfg.budget;
  res.log.n_init = cfg.n_init;
  res.log.radius = rig.hemisphere_radius;
  res.log.centre = rig.centre;
  for (const auto& it : res.collection.items()) res.log.init_views.push_back(it.viewpoint);

  PlanningContext ctx{&oracle, net, {}};
  auto encode_new = [&] {
    if (!net) return;
    while (ctx.volumes.size() < res.collection.size()) ctx.volumes.push_back(net->encode(res.collection[ctx.volumes.size()].posed));
  };
  encode_new();

  const auto discrete = oracle.discrete_views();
  for (int step = cfg.n_init; step < cfg.budget; ++step) {
    std::vector<SphericalViewpoint> candidates;
    if (!discrete.empty()) {
      for (const auto& v : discrete)
        if (!res.collection.contains(v)) candidates.push_back(v);
    } else {
      Rng cand_rng = root.split(1000 + static_cast<std::uint64_t>(step));
      const SphericalViewpoint current = res.collection.latest().viewpoint;
      for (int k = 0; k < cfg.candidates; ++k)
        candidates.push_back(sample_view_within_cone(current, cfg.max_view_change, cand_rng, rig.min_elevation));
    }
    const auto sel = select_next(res.collection, candidates, cfg.policy, ctx, cfg,
                                 derive_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(step)));
    const SphericalViewpoint chosen = candidates[sel.index];
    res.collection.add(oracle.measure(chosen), chosen);
    encode_new();
    res.log.steps.push_back({step, std::move(candidates), sel.scores, sel.index, cfg.policy});
  }
  return res;
}

/// Writes a collection in the dataset format (images + pose manifest).
inline void export_manifest(const ImageCollection& c, const std::string& scene_id, const std::filesystem::path& dir) {
  require(!c.empty(), "export_manifest: empty collection");
  PosedImageSet set;
  set.scene_id = scene_id;
  set.images = c.images();
  write_posed_dataset(set, dir);
}

}  // namespace nbv::planner
