#include <gtest/gtest.h>

#include <algorithm>

#include "nbv/evaluation.hpp"
#include "support/fixtures.hpp"

using namespace nbv;
using namespace nbv::evaluation;
using nbv::testing::tiny_config;

namespace {

Image noise_image(int w, int h, Rng& rng) {
  Image img(w, h, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

Image checker(int w, int h, int cell) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = ((x / cell + y / cell) % 2) ? 1.0f : 0.0f;
  return img;
}

// Direct (non-separable) SSIM over every valid 11x11 window.
double ssim_reference(const Image& a, const Image& b) {
  double g[11][11], gs = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      gs += g[i][j];
    }
  const double C1 = 1e-4, C2 = 9e-4;
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    double acc = 0;
    int count = 0;
    for (int y0 = 0; y0 + 11 <= a.height; ++y0)
      for (int x0 = 0; x0 + 11 <= a.width; ++x0) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = g[i][j] / gs, x = a.at(x0 + j, y0 + i, c), y = b.at(x0 + j, y0 + i, c);
            mx += w * x;
            my += w * y;
            sxx += w * x * x;
            syy += w * y * y;
            sxy += w * x * y;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        acc += (2 * mx * my + C1) * (2 * cxy + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        ++count;
      }
    total += acc / count;
  }
  return total / 3;
}

// Ranks by counting, then the textbook Pearson formula.
double srcc_reference(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += rx[i];
    sy += ry[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (rx[i] - sx / n) * (rx[i] - sx / n);
    syy += (ry[i] - sy / n) * (ry[i] - sy / n);
    sxy += (rx[i] - sx / n) * (ry[i] - sy / n);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(Psnr, FormulaCapAndExtremes) {
  Image a(4, 4, 3, 0.5f), b(4, 4, 3, 0.6f);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-4);
  EXPECT_EQ(psnr(a, a), 100.0);
  EXPECT_NEAR(psnr(Image(4, 4, 3, 0.0f), Image(4, 4, 3, 1.0f)), 0.0, 1e-12);
  EXPECT_THROW(psnr(a, Image(4, 5, 3)), ContractViolation);
}

TEST(Psnr, DecreasesWithNoise) {
  Rng rng(1);
  const Image gt = noise_image(16, 16, rng);
  Image pattern(16, 16, 3);
  for (auto& v : pattern.data) v = static_cast<float>(rng.uniform(-1, 1));
  double prev = 101;
  for (double amp : {0.001, 0.01, 0.05, 0.1, 0.3}) {
    Image noisy = gt;
    for (std::size_t i = 0; i < noisy.data.size(); ++i) noisy.data[i] += static_cast<float>(amp) * pattern.data[i];
    const double p = psnr(noisy, gt);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Ssim, IdentityCheckerAndShift) {
  Rng rng(2);
  const Image img = noise_image(20, 16, rng);
  EXPECT_NEAR(ssim(img, img), 1.0, 1e-12);
  const Image chk = checker(24, 24, 3);
  Image inv = chk;
  for (auto& v : inv.data) v = 1.0f - v;
  EXPECT_LT(ssim(chk, inv), 0.2);
  EXPECT_NEAR(ssim(chk, inv), ssim_reference(chk, inv), 1e-10);
  Image shifted = img;
  for (auto& v : shifted.data) v = std::min(1.0f, v + 0.1f);
  EXPECT_NEAR(ssim(shifted, img), ssim_reference(shifted, img), 1e-10);
  EXPECT_THROW(ssim(Image(10, 20, 3), Image(10, 20, 3)), ContractViolation);
}

TEST(Srcc, ExamplesAndUndefined) {
  EXPECT_NEAR(*srcc({1, 2, 3}, {1, 4, 9}), 1.0, 1e-15);
  EXPECT_NEAR(*srcc({1, 2, 3}, {3, 2, 1}), -1.0, 1e-15);
  EXPECT_NEAR(*srcc({1, 2, 2, 3}, {1, 2, 3, 4}), srcc_reference({1, 2, 2, 3}, {1, 2, 3, 4}), 1e-12);
  EXPECT_FALSE(srcc({1, 1, 1}, {1, 2, 3}));
  EXPECT_THROW(srcc({1}, {1}), ContractViolation);
}

TEST(Srcc, MatchesBruteForceAndMonotoneInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.index(30);
    const bool tied = trial % 2 == 0;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = tied ? static_cast<double>(rng.index(5)) : rng.normal();
      y[i] = tied ? static_cast<double>(rng.index(4)) : rng.normal();
    }
    const auto s = srcc(x, y);
    const bool constant = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
                          std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
    ASSERT_EQ(s.has_value(), !constant);
    if (!s) continue;
    EXPECT_NEAR(*s, srcc_reference(x, y), 1e-12);
    std::vector<double> tx(n);
    for (std::size_t i = 0; i < n; ++i) tx[i] = std::exp(3 * x[i]) + 7;
    EXPECT_NEAR(*srcc(tx, y), *s, 1e-12);
  }
}

TEST(Ause, PerfectReversedAndConstant) {
  Rng rng(4);
  std::vector<double> err(256);
  for (auto& e : err) e = rng.uniform() * rng.uniform();
  const auto perfect = ause(err, err);
  EXPECT_EQ(perfect.ause, 0.0);
  EXPECT_EQ(perfect.fractions.size(), 100u);
  EXPECT_DOUBLE_EQ(perfect.fractions[99], 0.99);

  std::vector<double> neg(err.size());
  std::transform(err.begin(), err.end(), neg.begin(), [](double e) { return -e; });
  const auto reversed = ause(neg, err);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> u(err.size());
    for (auto& v : u) v = rng.uniform();
    EXPECT_LE(ause(u, err).ause, reversed.ause);
  }

  // 16 pixels, constant uncertainty: the curve stays at 1.
  std::vector<double> e16(16);
  for (auto& e : e16) e = rng.uniform();
  const auto flat = ause(std::vector<double>(16, 0.3), e16);
  std::vector<double> sorted = e16;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double total = std::accumulate(e16.begin(), e16.end(), 0.0);
  double area = 0;
  for (int s = 0; s < 100; ++s) {
    const int k = s * 16 / 100;
    const double rest = std::accumulate(sorted.begin() + k, sorted.end(), 0.0) / (16 - k);
    EXPECT_NEAR(flat.uncertainty_curve[s], 1.0, 1e-12);
    area += 1.0 - rest / (total / 16);
  }
  EXPECT_NEAR(flat.ause, area / 100, 1e-12);
}

TEST(Ause, ZeroErrorAndPermutationInvariance) {
  EXPECT_EQ(ause({0.1, 0.5, 0.2}, {0, 0, 0}).ause, 0.0);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10 + rng.index(40);
    std::vector<double> u(n), e(n);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = static_cast<double>(rng.index(4));  // heavy ties
      e[i] = rng.uniform();
    }
    const auto base = ause(u, e);
    EXPECT_GE(base.ause, -1e-12);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    std::vector<double> pu(n), pe(n);
    for (std::size_t i = 0; i < n; ++i) {
      pu[i] = u[perm[i]];
      pe[i] = e[perm[i]];
    }
    EXPECT_EQ(ause(pu, pe).ause, base.ause);
  }
}

TEST(Ause, OracleCurveIsExhaustiveMinimum) {
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> e(8);
    for (auto& v : e) v = rng.uniform();
    const auto r = ause(e, e);
    std::vector<double> best(100, std::numeric_limits<double>::infinity());
    std::vector<int> order{0, 1, 2, 3, 4, 5, 6, 7};
    const double mean = std::accumulate(e.begin(), e.end(), 0.0) / 8;
    do {
      for (int s = 0; s < 100; ++s) {
        const int k = s * 8 / 100;
        double rest = 0;
        for (int i = k; i < 8; ++i) rest += e[order[i]];
        best[s] = std::min(best[s], rest / (8 - k) / mean);
      }
    } while (std::next_permutation(order.begin(), order.end()));
    for (int s = 0; s < 100; ++s) EXPECT_NEAR(r.oracle_curve[s], best[s], 1e-12);
    for (int s = 1; s < 100; ++s) EXPECT_LE(r.oracle_curve[s], r.oracle_curve[s - 1] + 1e-15);
  }
}

TEST(Protocols, UncertaintyProtocolRuns) {
  const renderer::NeuralRenderer<float> net(renderer::init_parameters<float>(tiny_config(), 1));
  const auto set = nbv::testing::small_dataset(7, 8, 12);
  UncertaintyProtocolConfig cfg;
  cfg.n_sets = 6;
  cfg.mc_samples = 20;
  const auto a = eval_uncertainty_protocol(net, set, cfg);
  EXPECT_EQ(a.view_mse.size(), 6u);
  if (a.srcc) {
    EXPECT_GE(*a.srcc, -1.0);
    EXPECT_LE(*a.srcc, 1.0);
  }
  const auto b = eval_uncertainty_protocol(net, set, cfg);
  EXPECT_EQ(a.view_uncertainty, b.view_uncertainty);
}

TEST(Protocols, PlanningCurvesAtEveryTwoAndDeterministic) {
  const RigConfig rig;
  const SceneMeasurement orc(build_scene(8, Difficulty::simple, rig), rig, 12, 12);
  const renderer::NeuralRenderer<float> net(renderer::init_parameters<float>(tiny_config(), 2));
  planner::PlannerConfig pc;
  pc.policy = planner::Policy::random;
  pc.budget = 6;
  pc.candidates = 4;
  const auto m = planner::run_mission(orc, nullptr, pc);
  const auto tests = make_test_views(orc, 3, 12, 1);
  PlanningProtocolConfig cfg;
  cfg.resolution = 12;
  cfg.mc_samples = 10;
  const auto report = eval_planning_protocol(net, rig, {{"random", {m.collection}}, {"copy", {m.collection}}}, tests, cfg);
  EXPECT_EQ(report.at("random").sizes, (std::vector<int>{2, 4, 6}));
  EXPECT_EQ(report.at("random").psnr_mean, report.at("copy").psnr_mean);
  EXPECT_EQ(report.at("random").psnr_std, (std::vector<double>{0, 0, 0}));
  EvalReport r;
  r.planning = report;
  EXPECT_TRUE(r.to_json()["planning"].contains("random"));
}
