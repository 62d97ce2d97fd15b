#include <gtest/gtest.h>

#include <algorithm>

#include "nbv/renderer.hpp"
#include "nbv/training.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace nbv;
using namespace nbv::renderer;
using nbv::testing::small_dataset;
using nbv::testing::tiny_config;

TEST(Encoder, DeterministicAndHalfResolution) {
  const auto params = init_parameters<float>(tiny_config(), 1);
  const NeuralRenderer<float> net(params);
  const auto set = small_dataset(3, 4, 17);
  const auto a = net.encode(set.images[0]);
  const auto b = net.encode(set.images[0]);
  EXPECT_EQ(a.grid_w, 9);
  EXPECT_EQ(a.grid_h, 9);
  EXPECT_EQ(a.grid.value().rows(), tiny_config().feature_channels());
  EXPECT_TRUE(a.grid.value() == b.grid.value());
}

TEST(Encoder, RejectsTinyInput) {
  const auto params = init_parameters<float>(tiny_config(), 1);
  const NeuralRenderer<float> net(params);
  PosedImage p{Image(3, 3, 3, 0.5f), {Intrinsics::from_fov(3, 3, 0.8), Pose{}}};
  EXPECT_THROW(net.encode(p), ContractViolation);
}

TEST(QueryFeature, NodeMidpointAndOutside) {
  const auto params = init_parameters<double>(tiny_config(), 2);
  const auto set = small_dataset(4, 4, 16);
  const auto vol = encode_image(bind(params, false), params.config, set.images[0]);
  const auto& F = vol.grid.value();
  // 16 px image, 8 cell grid: node i sits at pixel coordinate 2i + 1.
  const auto node = query_feature(vol, Vec2(5.0, 7.0));
  ASSERT_TRUE(node);
  EXPECT_LT((*node - F.col(3 * 8 + 2)).cwiseAbs().maxCoeff(), 1e-12);
  const auto mid = query_feature(vol, Vec2(6.0, 7.0));
  ASSERT_TRUE(mid);
  EXPECT_LT((*mid - 0.5 * (F.col(3 * 8 + 2) + F.col(3 * 8 + 3))).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_FALSE(query_feature(vol, Vec2(-0.5, 3.0)));
  EXPECT_FALSE(query_feature(vol, Vec2(3.0, 16.5)));
}

TEST(ReferenceFeatureStep, WeightRangeAndMasking) {
  const auto cfg = tiny_config();
  const auto params = init_parameters<double>(cfg, 3);
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 x(rng.normal(), rng.normal(), rng.normal()), d = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const PoseFeature pf{positional_encoding(x, cfg.n_freq), d};
    Eigen::VectorXd f(cfg.feature_channels());
    for (int i = 0; i < f.size(); ++i) f(i) = 3.0 * rng.normal();
    const auto [feat, w] = reference_feature_step(params, pf, f, true);
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
    const auto [feat2, w2] = reference_feature_step(params, pf, f, true);
    EXPECT_TRUE(feat == feat2);
    EXPECT_EQ(w, w2);
    EXPECT_EQ(reference_feature_step(params, pf, f, false).second, 0.0);
  }
}

TEST(Aggregate, HandComputedMoments) {
  using V = Eigen::VectorXd;
  const auto single = aggregate<double>({{V::Constant(3, 0.7), 0.4}});
  EXPECT_LT((single.mean - V::Constant(3, 0.7)).norm(), 1e-15);
  EXPECT_EQ(single.variance.norm(), 0.0);

  const auto degenerate = aggregate<double>({{V::Constant(2, 1.5), 1.0}, {V::Constant(2, -4.0), 0.0}});
  EXPECT_LT((degenerate.mean - V::Constant(2, 1.5)).norm(), 1e-15);

  const auto pair = aggregate<double>({{V::Zero(4), 0.5}, {V::Constant(4, 2.0), 0.5}});
  EXPECT_LT((pair.mean - V::Ones(4)).norm(), 1e-15);
  EXPECT_LT((pair.variance - V::Ones(4)).norm(), 1e-15);

  // All-zero weights fall back to uniform.
  const auto fallback = aggregate<double>({{V::Zero(1), 0.0}, {V::Constant(1, 4.0), 0.0}});
  EXPECT_DOUBLE_EQ(fallback.mean(0), 2.0);
  EXPECT_DOUBLE_EQ(fallback.variance(0), 4.0);
  EXPECT_THROW(aggregate<double>({}), ContractViolation);
}

TEST(Aggregate, PermutationInvariant) {
  Rng rng(6);
  std::vector<std::pair<Eigen::VectorXd, double>> e;
  for (int n = 0; n < 5; ++n) {
    Eigen::VectorXd f(6);
    for (int i = 0; i < 6; ++i) f(i) = rng.normal();
    e.emplace_back(f, rng.uniform());
  }
  const auto a = aggregate(e);
  std::reverse(e.begin(), e.end());
  std::swap(e[0], e[2]);
  const auto b = aggregate(e);
  EXPECT_LT((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.variance - b.variance).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE((a.variance.array() >= 0).all());
}

TEST(DecodeOutput, SigmaFloorAndStability) {
  const auto cfg = tiny_config();
  const auto params = init_parameters<double>(cfg, 7);
  Rng rng(8);
  for (double mag : {1e-3, 1.0, 1e2, 1e3}) {
    AggregatedFeature<double> agg{Eigen::VectorXd(cfg.agg_channels), Eigen::VectorXd(cfg.agg_channels)};
    for (int i = 0; i < cfg.agg_channels; ++i) {
      agg.mean(i) = rng.normal() * mag;
      agg.variance(i) = std::abs(rng.normal()) * mag;
    }
    const auto [mu, sigma] = decode_output(params, agg);
    EXPECT_TRUE(mu.allFinite());
    EXPECT_TRUE(sigma.allFinite());
    EXPECT_TRUE((sigma.array() >= cfg.sigma_min).all());
    const auto again = decode_output(params, agg);
    EXPECT_TRUE(again.first == mu);
  }
}

TEST(SceneBounds, NearClamp) {
  const SceneBounds b;
  const auto [n, f] = b.ray_bounds(Vec3(3, 0, 0));
  EXPECT_DOUBLE_EQ(n, 3.0 - 1.25);
  EXPECT_DOUBLE_EQ(f, 3.0 + 1.25);
  const auto [n2, f2] = b.ray_bounds(Vec3(0.5, 0, 0));
  EXPECT_DOUBLE_EQ(n2, 0.01);
  EXPECT_DOUBLE_EQ(f2, 1.75);
}

TEST(MarchRays, MonotoneAndBounded) {
  const auto set = small_dataset(9, 4, 16);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cfg = tiny_config();
    cfg.step_bias_init = (static_cast<double>(seed) - 5.0);  // vary step sizes strongly
    const auto params = init_parameters<double>(cfg, seed);
    const auto bound = bind(params, false);
    std::vector<FeatureVolume<double>> vols;
    for (int r = 0; r < 2; ++r) vols.push_back(encode_image(bound, cfg, set.images[r]));
    std::vector<const FeatureVolume<double>*> refs{&vols[0], &vols[1]};
    const auto rays = make_ray_bundle<double>(pixel_rays(set.images[2].view, 4, 4), SceneBounds{});
    const auto m = march_rays(bound, cfg, rays, refs, true);
    ASSERT_EQ(m.t_trace.size(), static_cast<std::size_t>(cfg.n_iter + 1));
    for (std::size_t i = 1; i < m.t_trace.size(); ++i)
      EXPECT_TRUE((m.t_trace[i].array() >= m.t_trace[i - 1].array()).all());
    EXPECT_TRUE((m.depth.value().array() >= rays.t_near.array()).all());
    EXPECT_TRUE((m.depth.value().array() <= rays.t_far.array()).all());
  }
}

TEST(RenderView, ShapesPermutationAndErrors) {
  const auto cfg = tiny_config();
  const NeuralRenderer<float> net(init_parameters<float>(cfg, 10));
  const auto set = small_dataset(11, 7, 16);
  const CameraView target = set.images[6].view;
  for (int n = 1; n <= cfg.max_references; ++n) {
    std::vector<PosedImage> refs(set.images.begin(), set.images.begin() + n);
    const auto v = net.render(target, refs, 5, 3);
    EXPECT_EQ(v.mu.width, 5);
    EXPECT_EQ(v.mu.height, 3);
    EXPECT_EQ(v.sigma.channels, 3);
    EXPECT_EQ(v.depth.channels, 1);
    for (float s : v.sigma.data) EXPECT_GT(s, 0.0f);
  }
  const auto one = net.render(target, std::vector<PosedImage>{set.images[0]}, 1, 1);
  EXPECT_EQ(one.mu.data.size(), 3u);

  std::vector<PosedImage> refs{set.images[0], set.images[1], set.images[2]};
  const auto a = net.render(target, refs, 8, 8);
  std::vector<PosedImage> perm{set.images[2], set.images[0], set.images[1]};
  const auto b = net.render(target, perm, 8, 8);
  for (std::size_t i = 0; i < a.mu.data.size(); ++i) {
    EXPECT_NEAR(a.mu.data[i], b.mu.data[i], 1e-6);
    EXPECT_NEAR(a.sigma.data[i], b.sigma.data[i], 1e-6);
  }
  const auto again = net.render(target, refs, 8, 8);
  EXPECT_TRUE(again.mu == a.mu);

  EXPECT_THROW(net.render(target, std::vector<PosedImage>{}, 4, 4), ContractViolation);
  EXPECT_THROW(net.render(target, std::vector<PosedImage>(set.images.begin(), set.images.begin() + 6), 4, 4),
               ContractViolation);
}

TEST(RenderView, CopiedReferenceGivesIdenticalRender) {
  const NeuralRenderer<float> net(init_parameters<float>(tiny_config(), 12));
  const auto set = small_dataset(13, 4, 16);
  PosedImage copy = set.images[0];
  const auto a = net.render(set.images[3].view, std::vector<PosedImage>{set.images[0], set.images[1]}, 6, 6);
  const auto b = net.render(set.images[3].view, std::vector<PosedImage>{copy, set.images[1]}, 6, 6);
  EXPECT_TRUE(a.mu == b.mu);
  EXPECT_TRUE(a.depth == b.depth);
}

TEST(EndToEnd, GradientMatchesFiniteDifferences) {
  auto cfg = tiny_config();
  cfg.encoder_channels = 5;  // L = 8
  const auto params = init_parameters<double>(cfg, 14);
  const std::vector<PosedImageSet> sets{small_dataset(15, 6, 8)};
  training::Batch batch;
  batch.references = {0, 1};
  batch.target = 2;
  batch.pixels = {10, 37};
  const auto all_rays = pixel_rays(sets[0].images[2].view, 8, 8);
  batch.colours.resize(3, 2);
  for (int k = 0; k < 2; ++k) {
    batch.rays.push_back(all_rays[batch.pixels[k]]);
    for (int c = 0; c < 3; ++c) batch.colours(c, k) = sets[0].images[2].image.data[batch.pixels[k] * 3 + c];
  }
  const auto [loss, grads] = training::loss_and_gradients(params, sets, batch, SceneBounds{});
  ASSERT_TRUE(std::isfinite(loss));
  Rng rng(16);
  const double h = 1e-6;
  double worst = 0.0;
  for (int id = 0; id < kParamCount; ++id) {
    for (int probe = 0; probe < 3; ++probe) {
      const auto& t = params.tensors[id];
      const Eigen::Index r = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(t.rows())));
      const Eigen::Index c = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(t.cols())));
      auto plus = params, minus = params;
      plus.tensors[id](r, c) += h;
      minus.tensors[id](r, c) -= h;
      const double fd = (training::loss_and_gradients(plus, sets, batch, SceneBounds{}).first -
                         training::loss_and_gradients(minus, sets, batch, SceneBounds{}).first) /
                        (2 * h);
      const double an = grads[id](r, c);
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  }
  EXPECT_LT(worst, 1e-3);
}
