#pragma once

// Logistic-normal colour model: density, negative log-likelihood and
// Monte-Carlo moments (RGB mean and per-channel variance).

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "nbv/core.hpp"
#include "nbv/image.hpp"
#include "nbv/nn/autodiff.hpp"
#include "nbv/renderer.hpp"

namespace nbv::uncertainty {

inline constexpr double kTargetMin = 0.001;
inline constexpr double kTargetMax = 0.999;
inline constexpr double kMaxVariance = 0.25;
inline constexpr int kDefaultSamples = 100;

struct LogisticNormalParams {
  Vec3 mu = Vec3::Zero();
  Vec3 sigma = Vec3::Ones();

  void validate() const {
    if (!mu.allFinite() || !sigma.allFinite()) throw ContractViolation("logistic-normal parameters must be finite");
    require((sigma.array() > 0).all(), "logistic-normal sigma must be positive");
  }
};

struct RGBWithUncertainty {
  Vec3 c = Vec3::Zero();  // in [0,1]
  Vec3 u = Vec3::Zero();  // in [0,0.25]
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double clamp_target(double y) { return std::clamp(y, kTargetMin, kTargetMax); }

/// Density of a value in (0,1) whose logit is Normal(mu, sigma^2).
inline double logistic_normal_pdf(double c, double mu, double sigma) {
  require(c > 0.0 && c < 1.0, "logistic_normal_pdf: c must lie in (0,1)");
  require(sigma > 0.0, "logistic_normal_pdf: sigma must be positive");
  const double z = (logit(c) - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi) * c * (1.0 - c));
}

/// Negative log-likelihood of an RGB observation (constant log 2pi dropped).
inline double nll_loss(const Vec3& y, const LogisticNormalParams& p) {
  p.validate();
  double loss = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double yc = clamp_target(y[i]);
    const double r = logit(yc) - p.mu[i];
    const double s2 = p.sigma[i] * p.sigma[i];
    loss += 0.5 * std::log(s2) + std::log(yc * (1.0 - yc)) + r * r / (2.0 * s2);
  }
  return loss;
}

struct NllGradient {
  Vec3 d_mu;
  Vec3 d_sigma;
};

inline NllGradient nll_gradient(const Vec3& y, const LogisticNormalParams& p) {
  p.validate();
  NllGradient g;
  for (int i = 0; i < 3; ++i) {
    const double r = logit(clamp_target(y[i])) - p.mu[i];
    const double s = p.sigma[i];
    g.d_mu[i] = -r / (s * s);
    g.d_sigma[i] = 1.0 / s - r * r / (s * s * s);
  }
  return g;
}

/// Batched loss node: mean over rays (columns) of the per-ray channel sum.
/// mu, sigma and y are 3 x B; y is clamped before use.
template <typename T>
nn::Var<T> nll_loss(const nn::Var<T>& mu, const nn::Var<T>& sigma, const nn::Matrix<T>& y) {
  require(mu.rows() == y.rows() && mu.cols() == y.cols() && sigma.rows() == y.rows() && sigma.cols() == y.cols(),
          "nll_loss: shape mismatch");
  require(y.cols() >= 1, "nll_loss: empty batch");
  const auto yc = y.array().min(static_cast<T>(kTargetMax)).max(static_cast<T>(kTargetMin)).eval();
  const nn::Matrix<T> target = (yc / (T(1) - yc)).log().matrix();
  const nn::Matrix<T> r = target - mu.value();
  const auto s2 = sigma.value().array().square().eval();
  const T inv_b = T(1) / static_cast<T>(y.cols());
  const T total = (T(0.5) * s2.log() + (yc * (T(1) - yc)).log() + r.array().square() / (T(2) * s2)).sum() * inv_b;
  nn::Matrix<T> value(1, 1);
  value(0, 0) = total;
  auto mn = mu.node();
  auto sn = sigma.node();
  return nn::make_op<T>(std::move(value), {mu, sigma}, [mn, sn, r, inv_b](nn::Node<T>& out) {
    const T g = out.grad(0, 0) * inv_b;
    const auto s = sn->value.array();
    if (mn->requires_grad) mn->accumulate((-g * r.array() / s.square()).matrix());
    if (sn->requires_grad) sn->accumulate((g * (T(1) / s - r.array().square() / s.cube())).matrix());
  });
}

/// Draws n normals per channel (channel-major) from rng.
inline std::vector<double> draw_normals(Rng& rng, int n_samples) {
  std::vector<double> z(static_cast<std::size_t>(3) * n_samples);
  for (auto& v : z) v = rng.normal();
  return z;
}

/// Moments of sigmoid(mu + sigma z) over the given standard normal draws
/// (3 * n values, channel-major). Population variance, clamped to [0, 0.25].
inline RGBWithUncertainty moments_from_normals(const Vec3& mu, const Vec3& sigma, const double* z, int n_samples) {
  RGBWithUncertainty out;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sum_sq = 0.0;
    const double* zc = z + static_cast<std::ptrdiff_t>(c) * n_samples;
    for (int s = 0; s < n_samples; ++s) {
      const double v = sigmoid(mu[c] + sigma[c] * zc[s]);
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / n_samples;
    out.c[c] = std::clamp(mean, 0.0, 1.0);
    out.u[c] = std::clamp(sum_sq / n_samples - mean * mean, 0.0, kMaxVariance);
  }
  return out;
}

inline RGBWithUncertainty mc_moments(const LogisticNormalParams& p, int n_samples, Rng& rng) {
  p.validate();
  require(n_samples >= 1, "mc_moments: n_samples must be >= 1");
  const auto z = draw_normals(rng, n_samples);
  return moments_from_normals(p.mu, p.sigma, z.data(), n_samples);
}

struct UncertaintyMap {
  Image values;  // H x W x 3, each in [0, 0.25]

  int width() const { return values.width; }
  int height() const { return values.height; }
  /// Mean over all entries, i.e. the planning utility of the rendered view.
  double mean() const {
    if (values.data.empty()) return 0.0;
    double s = 0.0;
    for (float v : values.data) s += v;
    return s / static_cast<double>(values.data.size());
  }
};

struct PixelMoments {
  Image rgb;
  UncertaintyMap uncertainty;
};

/// Pre-drawn standard normals for every pixel of a map. Pixel p uses the stream
/// rng(seed).split(p), so a table and on-the-fly sampling agree exactly. Sharing
/// one table across candidate views gives common random numbers.
class NormalTable {
 public:
  NormalTable(std::uint64_t seed, std::size_t pixels, int n_samples) : seed_(seed), pixels_(pixels), n_(n_samples) {
    require(n_samples >= 1, "NormalTable: n_samples must be >= 1");
    const Rng root(seed);
    z_.resize(pixels * 3 * static_cast<std::size_t>(n_samples));
    for (std::size_t p = 0; p < pixels; ++p) {
      Rng px = root.split(p);
      double* dst = z_.data() + p * 3 * static_cast<std::size_t>(n_samples);
      for (int k = 0; k < 3 * n_samples; ++k) dst[k] = px.normal();
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::size_t pixels() const { return pixels_; }
  int samples() const { return n_; }
  const double* pixel(std::size_t p) const { return z_.data() + p * 3 * static_cast<std::size_t>(n_); }

 private:
  std::uint64_t seed_;
  std::size_t pixels_;
  int n_;
  std::vector<double> z_;
};

inline PixelMoments uncertainty_map(const renderer::RenderedView& view, const NormalTable& table) {
  require(view.mu.same_shape(view.sigma) && view.mu.channels == 3, "uncertainty_map: malformed rendered view");
  require(table.pixels() == view.mu.pixel_count(), "uncertainty_map: normal table size mismatch");
  PixelMoments out{Image(view.width, view.height, 3), {Image(view.width, view.height, 3)}};
  for (std::size_t p = 0; p < view.mu.pixel_count(); ++p) {
    const Vec3 mu(view.mu.data[p * 3], view.mu.data[p * 3 + 1], view.mu.data[p * 3 + 2]);
    const Vec3 sigma(view.sigma.data[p * 3], view.sigma.data[p * 3 + 1], view.sigma.data[p * 3 + 2]);
    const auto m = moments_from_normals(mu, sigma, table.pixel(p), table.samples());
    for (int c = 0; c < 3; ++c) {
      out.rgb.data[p * 3 + c] = static_cast<float>(m.c[c]);
      out.uncertainty.values.data[p * 3 + c] = static_cast<float>(m.u[c]);
    }
  }
  return out;
}

inline PixelMoments uncertainty_map(const renderer::RenderedView& view, int n_samples, std::uint64_t seed) {
  return uncertainty_map(view, NormalTable(seed, view.mu.pixel_count(), n_samples));
}

/// The deterministic (sigma -> 0) colour: sigmoid of the mean.
inline Image mean_colour(const renderer::RenderedView& view) {
  Image out(view.width, view.height, 3);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(sigmoid(view.mu.data[i]));
  return out;
}

}  // namespace nbv::uncertainty
