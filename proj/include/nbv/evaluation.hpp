#pragma once

// Image and uncertainty metrics, and the two evaluation protocols.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "nbv/core.hpp"
#include "nbv/image.hpp"
#include "nbv/planner.hpp"
#include "nbv/renderer.hpp"
#include "nbv/scene_oracle.hpp"
#include "nbv/uncertainty.hpp"

namespace nbv::evaluation {

inline constexpr double kPsnrCap = 100.0;

inline double mse(const Image& a, const Image& b) {
  require(a.same_shape(b), "mse: shape mismatch");
  require(!a.data.empty(), "mse: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

inline double psnr(const Image& pred, const Image& gt) {
  const double m = mse(pred, gt);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(m));
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Mean SSIM over the fully covered ("valid") window positions, per channel, then
/// averaged over channels. Dynamic range 1.
inline double ssim(const Image& pred, const Image& gt) {
  require(pred.same_shape(gt), "ssim: shape mismatch");
  require(pred.width >= kSsimWindow && pred.height >= kSsimWindow, "ssim: image smaller than the 11x11 window");
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  std::array<double, kSsimWindow> g{};
  double gs = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;

  const int W = pred.width, H = pred.height, ow = W - kSsimWindow + 1, oh = H - kSsimWindow + 1;
  // Separable filtering: rows first into (ow x H), then columns into (ow x oh).
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> tmp(static_cast<std::size_t>(ow) * H), out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int k = 0; k < kSsimWindow; ++k) acc += g[k] * src[static_cast<std::size_t>(y) * W + x + k];
        tmp[static_cast<std::size_t>(y) * ow + x] = acc;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int k = 0; k < kSsimWindow; ++k) acc += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
        out[static_cast<std::size_t>(y) * ow + x] = acc;
      }
    return out;
  };

  double total = 0.0;
  const std::size_t n = pred.pixel_count();
  for (int c = 0; c < pred.channels; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = pred.data[i * pred.channels + c];
      y[i] = gt.data[i * gt.channels + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / pred.channels;
}

/// Average ranks (1-based); tied values share the mean of their ranks.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation; empty when either series is constant.
inline std::optional<double> srcc(const std::vector<double>& xs, const std::vector<double>& ys) {
  require(xs.size() == ys.size(), "srcc: series lengths differ");
  require(xs.size() >= 2, "srcc: need at least two points");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline constexpr int kSparsificationSteps = 100;  // fractions 0.00 .. 0.99

struct SparsificationResult {
  std::vector<double> fractions;
  std::vector<double> uncertainty_curve;
  std::vector<double> oracle_curve;
  double ause = 0.0;
};

namespace detail {

/// Normalised remaining-error curve for errors listed in removal order.
inline std::vector<double> remaining_error_curve(const std::vector<double>& removal_order) {
  const std::size_t n = removal_order.size();
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + removal_order[i];
  const double base = suffix[0] / static_cast<double>(n);
  std::vector<double> curve;
  for (int s = 0; s < kSparsificationSteps; ++s) {
    const std::size_t k = static_cast<std::size_t>(s) * n / kSparsificationSteps;
    curve.push_back(base > 0.0 ? (suffix[k] / static_cast<double>(n - k)) / base : 0.0);
  }
  return curve;
}

}  // namespace detail

/// Sparsification curves and AUSE. Pixels are removed most-uncertain first; within
/// a group of equal uncertainty the expected (group-mean) error is removed, so the
/// result does not depend on pixel order.
inline SparsificationResult ause(const std::vector<double>& uncertainty, const std::vector<double>& error) {
  require(uncertainty.size() == error.size(), "ause: maps differ in size");
  require(!error.empty(), "ause: empty maps");
  const std::size_t n = error.size();

  std::vector<std::size_t> by_u(n);
  std::iota(by_u.begin(), by_u.end(), 0);
  std::sort(by_u.begin(), by_u.end(), [&](std::size_t a, std::size_t b) {
    if (uncertainty[a] != uncertainty[b]) return uncertainty[a] > uncertainty[b];
    return error[a] > error[b];
  });
  std::vector<double> u_order(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    bool uniform = true;
    double sum = error[by_u[i]];
    while (j + 1 < n && uncertainty[by_u[j + 1]] == uncertainty[by_u[i]]) {
      ++j;
      sum += error[by_u[j]];
      uniform = uniform && error[by_u[j]] == error[by_u[i]];
    }
    const double group_mean = sum / static_cast<double>(j - i + 1);
    for (std::size_t k = i; k <= j; ++k) u_order[k] = uniform ? error[by_u[k]] : group_mean;
    i = j + 1;
  }

  std::vector<double> oracle_order = error;
  std::sort(oracle_order.begin(), oracle_order.end(), std::greater<>());

  SparsificationResult r;
  for (int s = 0; s < kSparsificationSteps; ++s) r.fractions.push_back(s / static_cast<double>(kSparsificationSteps));
  r.uncertainty_curve = detail::remaining_error_curve(u_order);
  r.oracle_curve = detail::remaining_error_curve(oracle_order);
  double area = 0.0;
  for (int s = 0; s < kSparsificationSteps; ++s) area += r.uncertainty_curve[s] - r.oracle_curve[s];
  r.ause = area / kSparsificationSteps;
  return r;
}

/// Channel-mean of a multi-channel map, one value per pixel.
inline std::vector<double> channel_mean(const Image& img) {
  std::vector<double> out(img.pixel_count(), 0.0);
  for (std::size_t p = 0; p < out.size(); ++p) {
    for (int c = 0; c < img.channels; ++c) out[p] += img.data[p * img.channels + c];
    out[p] /= img.channels;
  }
  return out;
}

/// Per-pixel channel-mean squared error.
inline std::vector<double> squared_error_map(const Image& pred, const Image& gt) {
  require(pred.same_shape(gt), "squared_error_map: shape mismatch");
  std::vector<double> out(pred.pixel_count(), 0.0);
  for (std::size_t p = 0; p < out.size(); ++p) {
    for (int c = 0; c < pred.channels; ++c) {
      const double d = static_cast<double>(pred.data[p * pred.channels + c]) - gt.data[p * gt.channels + c];
      out[p] += d * d;
    }
    out[p] /= pred.channels;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Uncertainty protocol

struct UncertaintyEvalResult {
  std::string scene_id;
  std::optional<double> srcc;
  double mean_ause = 0.0;
  std::vector<double> view_uncertainty;  // mean U per test set
  std::vector<double> view_mse;          // MSE of the MC-mean colour per test set
  std::vector<double> view_ause;
};

struct UncertaintyProtocolConfig {
  int n_sets = 100;
  int n_references = 3;
  int resolution = 0;  // 0: native image size
  int mc_samples = uncertainty::kDefaultSamples;
  std::uint64_t seed = 0;
};

/// Random sets of (references + 1 test view) from one scene; per set the mean
/// uncertainty, MSE and AUSE of the test-view render; SRCC across sets.
inline UncertaintyEvalResult eval_uncertainty_protocol(const renderer::NeuralRenderer<float>& net,
                                                       const PosedImageSet& dataset,
                                                       const UncertaintyProtocolConfig& cfg) {
  require(dataset.size() >= static_cast<std::size_t>(cfg.n_references) + 1,
          "eval_uncertainty_protocol: dataset needs at least n_references + 1 images");
  require(cfg.n_sets >= 2, "eval_uncertainty_protocol: need at least two test sets");
  UncertaintyEvalResult res;
  res.scene_id = dataset.scene_id;
  Rng rng(derive_seed(cfg.seed, 0x5e75));
  for (int s = 0; s < cfg.n_sets; ++s) {
    const auto pick = sample_without_replacement(dataset.size(), static_cast<std::size_t>(cfg.n_references) + 1, rng);
    const PosedImage& test = dataset.images[pick.back()];
    std::vector<PosedImage> refs;
    for (std::size_t k = 0; k + 1 < pick.size(); ++k) refs.push_back(dataset.images[pick[k]]);
    const int w = cfg.resolution > 0 ? cfg.resolution : test.image.width;
    const int h = cfg.resolution > 0 ? cfg.resolution : test.image.height;
    const auto view = net.render(test.view, refs, w, h);
    const auto mc = uncertainty::uncertainty_map(view, cfg.mc_samples, derive_seed(cfg.seed, static_cast<std::uint64_t>(s)));
    const Image gt = (w == test.image.width && h == test.image.height) ? test.image : resize_area(test.image, w, h);
    res.view_uncertainty.push_back(mc.uncertainty.mean());
    res.view_mse.push_back(mse(mc.rgb, gt));
    res.view_ause.push_back(ause(channel_mean(mc.uncertainty.values), squared_error_map(mc.rgb, gt)).ause);
  }
  res.srcc = srcc(res.view_uncertainty, res.view_mse);
  res.mean_ause = std::accumulate(res.view_ause.begin(), res.view_ause.end(), 0.0) / res.view_ause.size();
  return res;
}

// ---------------------------------------------------------------------------
// Planning protocol

struct TestView {
  SphericalViewpoint viewpoint;
  Image ground_truth;
};

/// Fixed random test views (uniform on the hemisphere cap) with ground truth.
inline std::vector<TestView> make_test_views(const MeasurementSource& oracle, int count, int resolution,
                                             std::uint64_t seed) {
  const RigConfig& rig = oracle.rig();
  Rng rng(derive_seed(seed, 0x7e57));
  std::vector<TestView> out;
  for (int i = 0; i < count; ++i) {
    const auto v = sample_hemisphere_view(rig.hemisphere_radius, rig.centre, rng, rig.min_elevation);
    out.push_back({v, oracle.ground_truth(v, resolution, resolution)});
  }
  return out;
}

struct PlanningProtocolConfig {
  int every_n = 2;
  int max_references = 5;
  int resolution = 32;
  int mc_samples = uncertainty::kDefaultSamples;
  std::uint64_t seed = 0;
};

struct CurveStats {
  std::vector<int> sizes;
  std::vector<double> psnr_mean, psnr_std, ssim_mean, ssim_std;
  std::vector<std::vector<double>> psnr_runs, ssim_runs;  // [run][checkpoint]
};

struct PlanningCurve {
  std::vector<int> sizes;
  std::vector<double> psnr;  // mean over test views
  std::vector<double> ssim;
};

/// Test-view quality of one collection at sizes every_n, 2 every_n, ..., |collection|.
inline PlanningCurve evaluate_collection(const renderer::NeuralRenderer<float>& net, const RigConfig& rig,
                                         const planner::ImageCollection& collection,
                                         const std::vector<TestView>& tests, const PlanningProtocolConfig& cfg) {
  require(!tests.empty(), "evaluate_collection: no test views");
  require(cfg.every_n >= 1, "evaluate_collection: every_n must be >= 1");
  PlanningCurve curve;
  std::vector<renderer::FeatureVolume<float>> volumes;
  for (const auto& it : collection.items()) volumes.push_back(net.encode(it.posed));
  std::vector<SphericalViewpoint> views;
  for (const auto& it : collection.items()) views.push_back(it.viewpoint);

  // Per test view: reference set of the last evaluation and its scores.
  std::vector<std::vector<std::size_t>> last_refs(tests.size());
  std::vector<std::pair<double, double>> last_scores(tests.size());
  const Intrinsics intr = rig.intrinsics(cfg.resolution, cfg.resolution);
  for (std::size_t m = static_cast<std::size_t>(cfg.every_n); m <= collection.size();
       m += static_cast<std::size_t>(cfg.every_n)) {
    const std::vector<SphericalViewpoint> prefix(views.begin(), views.begin() + static_cast<std::ptrdiff_t>(m));
    double ps = 0.0, ss = 0.0;
    for (std::size_t t = 0; t < tests.size(); ++t) {
      const auto idx = planner::select_reference_indices(prefix, tests[t].viewpoint, cfg.max_references);
      if (idx != last_refs[t]) {
        std::vector<const renderer::FeatureVolume<float>*> refs;
        for (std::size_t i : idx) refs.push_back(&volumes[i]);
        const auto view = net.render({intr, pose_from_spherical(tests[t].viewpoint)}, refs, cfg.resolution, cfg.resolution);
        const auto mc = uncertainty::uncertainty_map(view, cfg.mc_samples, derive_seed(cfg.seed, t));
        last_scores[t] = {psnr(mc.rgb, tests[t].ground_truth), ssim(mc.rgb, tests[t].ground_truth)};
        last_refs[t] = idx;
      }
      ps += last_scores[t].first;
      ss += last_scores[t].second;
    }
    curve.sizes.push_back(static_cast<int>(m));
    curve.psnr.push_back(ps / static_cast<double>(tests.size()));
    curve.ssim.push_back(ss / static_cast<double>(tests.size()));
  }
  return curve;
}

inline CurveStats summarise(const std::vector<PlanningCurve>& runs) {
  require(!runs.empty(), "summarise: no runs");
  CurveStats st;
  st.sizes = runs.front().sizes;
  for (const auto& r : runs) {
    require(r.sizes == st.sizes, "summarise: runs evaluated at different sizes");
    st.psnr_runs.push_back(r.psnr);
    st.ssim_runs.push_back(r.ssim);
  }
  auto stats = [&](const std::vector<std::vector<double>>& rows, std::vector<double>& mean, std::vector<double>& sd) {
    for (std::size_t k = 0; k < st.sizes.size(); ++k) {
      double m = 0.0;
      for (const auto& r : rows) m += r[k];
      m /= static_cast<double>(rows.size());
      double v = 0.0;
      for (const auto& r : rows) v += (r[k] - m) * (r[k] - m);
      mean.push_back(m);
      sd.push_back(std::sqrt(v / static_cast<double>(rows.size())));
    }
  };
  stats(st.psnr_runs, st.psnr_mean, st.psnr_std);
  stats(st.ssim_runs, st.ssim_mean, st.ssim_std);
  return st;
}

struct EvalReport {
  std::vector<UncertaintyEvalResult> uncertainty;
  std::map<std::string, CurveStats> planning;  // by policy name

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["uncertainty"] = nlohmann::json::array();
    for (const auto& u : uncertainty)
      j["uncertainty"].push_back({{"scene", u.scene_id},
                                  {"srcc", u.srcc ? nlohmann::json(*u.srcc) : nlohmann::json(nullptr)},
                                  {"mean_ause", u.mean_ause},
                                  {"n_sets", u.view_mse.size()}});
    j["planning"] = nlohmann::json::object();
    for (const auto& [policy, c] : planning)
      j["planning"][policy] = {{"sizes", c.sizes},         {"psnr_mean", c.psnr_mean}, {"psnr_std", c.psnr_std},
                               {"ssim_mean", c.ssim_mean}, {"ssim_std", c.ssim_std},   {"psnr_runs", c.psnr_runs},
                               {"ssim_runs", c.ssim_runs}};
    return j;
  }
};

/// Curves per policy from mission collections that share one scene and test set.
inline std::map<std::string, CurveStats> eval_planning_protocol(
    const renderer::NeuralRenderer<float>& net, const RigConfig& rig,
    const std::map<std::string, std::vector<planner::ImageCollection>>& collections, const std::vector<TestView>& tests,
    const PlanningProtocolConfig& cfg) {
  std::map<std::string, CurveStats> out;
  for (const auto& [policy, runs] : collections) {
    std::vector<PlanningCurve> curves;
    for (const auto& c : runs) curves.push_back(evaluate_collection(net, rig, c, tests, cfg));
    out[policy] = summarise(curves);
  }
  return out;
}

struct PlanningStudy {
  std::map<std::string, std::vector<planner::MissionResult>> missions;  // by policy, in seed order
  std::map<std::string, std::vector<PlanningCurve>> curves;
  std::map<std::string, CurveStats> stats;
};

/// Missions for every (policy, run) pair on one scene, then their test-view
/// curves. Run r uses planner seed base.seed + r for every policy, so runs are
/// paired across policies.
inline PlanningStudy run_planning_study(
    const renderer::NeuralRenderer<float>* net, const MeasurementSource& oracle, const std::vector<TestView>& tests,
    const std::vector<planner::Policy>& policies, int runs, const planner::PlannerConfig& base,
    const PlanningProtocolConfig& proto,
    const std::function<void(planner::Policy, int, const planner::MissionResult&)>& on_mission = {}) {
  require(net != nullptr, "run_planning_study: evaluation needs a renderer");
  require(runs >= 1, "run_planning_study: runs must be >= 1");
  PlanningStudy study;
  for (planner::Policy p : policies) {
    const std::string name = planner::to_string(p);
    for (int r = 0; r < runs; ++r) {
      planner::PlannerConfig cfg = base;
      cfg.policy = p;
      cfg.seed = base.seed + static_cast<std::uint64_t>(r);
      auto m = planner::run_mission(oracle, net, cfg);
      study.curves[name].push_back(evaluate_collection(*net, oracle.rig(), m.collection, tests, proto));
      if (on_mission) on_mission(p, r, m);
      study.missions[name].push_back(std::move(m));
    }
    study.stats[name] = summarise(study.curves[name]);
  }
  return study;
}

}  // namespace nbv::evaluation
