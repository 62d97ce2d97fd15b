#pragma once

// Image-based neural renderer with per-pixel logistic-normal outputs.
//
// Each reference image is encoded once into a feature grid. A target ray is
// marched from its near bound: at every step the current point is expressed in
// each reference frame, its pose feature and bilinearly sampled image feature go
// through a shared per-reference MLP that also predicts a weight, the processed
// features are reduced to a weighted mean and variance, and an LSTM turns that
// aggregate into the next (positive, bounded) jump along the ray. After a fixed
// number of jumps the aggregate at the final point is decoded into per-channel
// logit-space means and standard deviations; the final distance is the depth.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nbv/core.hpp"
#include "nbv/geometry.hpp"
#include "nbv/image.hpp"
#include "nbv/nn/autodiff.hpp"
#include "nbv/nn/render_ops.hpp"
#include "nbv/scene_oracle.hpp"

namespace nbv::renderer {

using nn::Matrix;
using nn::Var;

struct ModelConfig {
  int encoder_channels = 13;  // learned channels; the grid also carries 3 colour channels
  int n_freq = 6;
  int feat_hidden = 32;
  int agg_channels = 16;  // L'
  int lstm_hidden = 16;
  int out_hidden = 32;
  int n_iter = 16;
  double step_divisor = 4.0;
  double sigma_min = 1e-3;
  double step_bias_init = -2.2;  // untrained rays travel ~40% of their bounds over n_iter jumps
  int min_input_size = 4;
  int max_references = 5;

  int feature_channels() const { return encoder_channels + 3; }
  int pose_feature_size() const { return positional_encoding_size(n_freq) + 3; }
  int feat_input_size() const { return pose_feature_size() + feature_channels(); }

  void validate() const {
    require(encoder_channels >= 1 && n_freq >= 0 && feat_hidden >= 1 && agg_channels >= 1 && lstm_hidden >= 1 &&
                out_hidden >= 1,
            "ModelConfig: layer sizes must be positive");
    require(n_iter >= 1, "ModelConfig: n_iter must be >= 1");
    require(step_divisor > 0, "ModelConfig: step_divisor must be positive");
    require(sigma_min > 0, "ModelConfig: sigma_min must be positive");
    require(min_input_size >= 2, "ModelConfig: min_input_size must be >= 2");
    require(max_references >= 1, "ModelConfig: max_references must be >= 1");
  }
  bool operator==(const ModelConfig&) const = default;
};

enum ParamId : int {
  kEnc1W,
  kEnc1B,
  kEnc2W,
  kEnc2B,
  kFeat1W,
  kFeat1B,
  kFeat2W,
  kFeat2B,
  kLstmWx,
  kLstmWh,
  kLstmB,
  kStepW,
  kStepB,
  kOut1W,
  kOut1B,
  kOut2W,
  kOut2B,
  kParamCount
};

inline constexpr std::array<const char*, kParamCount> kParamNames = {
    "encoder.conv1.weight", "encoder.conv1.bias", "encoder.conv2.weight", "encoder.conv2.bias",
    "mlp_feat.0.weight",    "mlp_feat.0.bias",    "mlp_feat.1.weight",    "mlp_feat.1.bias",
    "lstm.weight_input",    "lstm.weight_hidden", "lstm.bias",            "lstm.step.weight",
    "lstm.step.bias",       "mlp_out.0.weight",   "mlp_out.0.bias",       "mlp_out.1.weight",
    "mlp_out.1.bias"};

inline constexpr int kEncoderKernel = 4;  // stride-2 layer; centred on 2x2 pixel blocks
inline constexpr int kEncoderStride = 2;

/// (rows, cols) of every parameter tensor for a configuration.
inline std::array<std::pair<int, int>, kParamCount> parameter_shapes(const ModelConfig& c) {
  const int C = c.encoder_channels, Lp = c.agg_channels, H = c.lstm_hidden;
  return {{{C, 3 * kEncoderKernel * kEncoderKernel},
           {C, 1},
           {C, C * 9},
           {C, 1},
           {c.feat_hidden, c.feat_input_size()},
           {c.feat_hidden, 1},
           {Lp + 1, c.feat_hidden},
           {Lp + 1, 1},
           {4 * H, 2 * Lp},
           {4 * H, H},
           {4 * H, 1},
           {1, H},
           {1, 1},
           {c.out_hidden, 2 * Lp},
           {c.out_hidden, 1},
           {6, c.out_hidden},
           {6, 1}}};
}

template <typename T>
struct ModelParameters {
  ModelConfig config;
  std::array<Matrix<T>, kParamCount> tensors;

  Matrix<T>& operator[](ParamId id) { return tensors[id]; }
  const Matrix<T>& operator[](ParamId id) const { return tensors[id]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
  }
  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.allFinite()) return false;
    return true;
  }
  template <typename U>
  ModelParameters<U> cast() const {
    ModelParameters<U> out;
    out.config = config;
    for (int i = 0; i < kParamCount; ++i) out.tensors[i] = tensors[i].template cast<U>();
    return out;
  }
  bool operator==(const ModelParameters& o) const {
    if (!(config == o.config)) return false;
    for (int i = 0; i < kParamCount; ++i)
      if (tensors[i].rows() != o.tensors[i].rows() || tensors[i].cols() != o.tensors[i].cols() ||
          tensors[i] != o.tensors[i])
        return false;
    return true;
  }
};

/// He-uniform weights, zero biases, LSTM forget bias 1, a negative bias on the
/// jump head (short initial jumps) and sigma initialised near 1.
template <typename T>
ModelParameters<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParameters<T> p;
  p.config = config;
  Rng rng(derive_seed(seed, 0x1417));
  const auto shapes = parameter_shapes(config);
  for (int i = 0; i < kParamCount; ++i) {
    const auto [rows, cols] = shapes[i];
    Matrix<T> m = Matrix<T>::Zero(rows, cols);
    if (cols > 1 || i == kStepW) {
      const double bound = std::sqrt(6.0 / cols);
      const double gain = (i == kLstmWx || i == kLstmWh || i == kStepW) ? 0.5 : 1.0;
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<T>(gain * rng.uniform(-bound, bound));
    }
    p.tensors[i] = std::move(m);
  }
  const int H = config.lstm_hidden;
  p[kLstmB].middleRows(H, H).setConstant(T(1));
  p[kStepB](0, 0) = static_cast<T>(config.step_bias_init);
  p[kOut2B].bottomRows(3).setConstant(T(0.5));
  return p;
}

template <typename T>
using BoundParameters = std::array<Var<T>, kParamCount>;

/// Wraps parameters as graph leaves (trainable) or constants.
template <typename T>
BoundParameters<T> bind(const ModelParameters<T>& p, bool trainable) {
  BoundParameters<T> b;
  for (int i = 0; i < kParamCount; ++i) b[i] = Var<T>(p.tensors[i], trainable);
  return b;
}

/// Latent grid of one reference image plus the camera it was taken from.
template <typename T>
struct FeatureVolume {
  Var<T> grid;  // L x (grid_h * grid_w), column y * grid_w + x
  int grid_w = 0;
  int grid_h = 0;
  CameraView view;

  nn::GridShape shape() const { return {grid_w, grid_h, view.intrinsics.width, view.intrinsics.height}; }
};

template <typename T>
Matrix<T> image_to_matrix(const Image& img) {
  Matrix<T> m(3, static_cast<Eigen::Index>(img.pixel_count()));
  for (Eigen::Index i = 0; i < m.cols(); ++i)
    for (int c = 0; c < 3; ++c) m(c, i) = static_cast<T>(img.data[static_cast<std::size_t>(i) * 3 + c]);
  return m;
}

/// 2x2 block means on the stride-2 grid (partial blocks at odd borders).
template <typename T>
Matrix<T> colour_pyramid_level(const Image& img, int grid_w, int grid_h) {
  Matrix<T> m = Matrix<T>::Zero(3, static_cast<Eigen::Index>(grid_w) * grid_h);
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx) {
      int count = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int x = 2 * gx + dx, y = 2 * gy + dy;
          if (x >= img.width || y >= img.height) continue;
          for (int c = 0; c < 3; ++c) m(c, static_cast<Eigen::Index>(gy) * grid_w + gx) += img.at(x, y, c);
          ++count;
        }
      m.col(static_cast<Eigen::Index>(gy) * grid_w + gx) /= static_cast<T>(count);
    }
  return m;
}

/// Shared convolutional encoder: a stride-2 4x4 convolution, a 3x3 convolution
/// and the 2x2-averaged colour, all on the half-resolution grid.
template <typename T>
FeatureVolume<T> encode_image(const BoundParameters<T>& p, const ModelConfig& cfg, const PosedImage& posed) {
  const Image& img = posed.image;
  require(img.channels == 3, "encode_image: expected an RGB image");
  require(img.width >= cfg.min_input_size && img.height >= cfg.min_input_size,
          "encode_image: resolution below encoder minimum of " + std::to_string(cfg.min_input_size));
  const int gw = (img.width + 1) / 2, gh = (img.height + 1) / 2;
  const Var<T> input = nn::constant<T>(image_to_matrix<T>(img));
  const nn::ConvShape s1{3, img.height, img.width, kEncoderKernel, kEncoderStride, 1, gh, gw};
  const nn::ConvShape s2{cfg.encoder_channels, gh, gw, 3, 1, 1, gh, gw};
  const Var<T> h1 = nn::relu(nn::conv2d(input, p[kEnc1W], p[kEnc1B], s1));
  const Var<T> h2 = nn::relu(nn::conv2d(h1, p[kEnc2W], p[kEnc2B], s2));
  const Var<T> colour = nn::constant<T>(colour_pyramid_level<T>(img, gw, gh));
  return {nn::concat_rows<T>({h2, colour}), gw, gh, posed.view};
}

/// Bilinear feature lookup at a pixel of the volume's source image. Empty when the
/// position lies outside the image.
template <typename T>
std::optional<Eigen::Matrix<T, Eigen::Dynamic, 1>> query_feature(const FeatureVolume<T>& vol, const Vec2& uv) {
  const auto& intr = vol.view.intrinsics;
  if (!(uv.x() >= 0 && uv.x() <= intr.width && uv.y() >= 0 && uv.y() <= intr.height)) return std::nullopt;
  const auto tap = nn::bilinear_tap<T>(static_cast<T>(uv.x()), static_cast<T>(uv.y()), intr.width, intr.height,
                                       vol.grid_w, vol.grid_h);
  const Matrix<T>& F = vol.grid.value();
  return ((T(1) - tap.ax) * (T(1) - tap.ay) * F.col(tap.i00) + tap.ax * (T(1) - tap.ay) * F.col(tap.i10) +
          (T(1) - tap.ax) * tap.ay * F.col(tap.i01) + tap.ax * tap.ay * F.col(tap.i11))
      .eval();
}

/// Shared per-reference MLP on batched inputs (pose features ++ image features).
/// Returns processed features (L' x M) and weights in [0,1] (1 x M), with masked
/// columns forced to weight 0.
template <typename T>
std::pair<Var<T>, Var<T>> reference_features(const BoundParameters<T>& p, const ModelConfig& cfg,
                                             const Var<T>& inputs, const Matrix<T>& valid) {
  const Var<T> hidden = nn::relu(nn::linear(p[kFeat1W], p[kFeat1B], inputs));
  const Var<T> out = nn::linear(p[kFeat2W], p[kFeat2B], hidden);
  const Var<T> features = nn::slice_rows(out, 0, cfg.agg_channels);
  const Var<T> weights = nn::mul_const(nn::sigmoid(nn::slice_rows(out, cfg.agg_channels, 1)), valid);
  return {features, weights};
}

/// Single-sample form of the per-reference step.
template <typename T>
std::pair<Eigen::Matrix<T, Eigen::Dynamic, 1>, T> reference_feature_step(const ModelParameters<T>& params,
                                                                         const PoseFeature& pose,
                                                                         const Eigen::Matrix<T, Eigen::Dynamic, 1>& f,
                                                                         bool in_view) {
  nn::NoGradGuard no_grad;
  const auto& cfg = params.config;
  require(pose.encoded_position.size() == positional_encoding_size(cfg.n_freq), "reference_feature_step: n_freq mismatch");
  require(f.size() == cfg.feature_channels(), "reference_feature_step: feature size mismatch");
  Matrix<T> in(cfg.feat_input_size(), 1);
  in << pose.concatenated().cast<T>(), f;
  Matrix<T> valid = Matrix<T>::Constant(1, 1, in_view ? T(1) : T(0));
  const auto [feat, w] = reference_features(bind(params, false), cfg, nn::constant<T>(in), valid);
  return {feat.value().col(0), w.value()(0, 0)};
}

template <typename T>
struct AggregatedFeature {
  Eigen::Matrix<T, Eigen::Dynamic, 1> mean;
  Eigen::Matrix<T, Eigen::Dynamic, 1> variance;
};

/// Weighted mean/variance of processed reference features (single sample).
template <typename T>
AggregatedFeature<T> aggregate(const std::vector<std::pair<Eigen::Matrix<T, Eigen::Dynamic, 1>, T>>& entries) {
  require(!entries.empty(), "aggregate: at least one reference required");
  nn::NoGradGuard no_grad;
  const Eigen::Index C = entries.front().first.size();
  const Eigen::Index N = static_cast<Eigen::Index>(entries.size());
  Matrix<T> F(C, N), W(1, N);
  for (Eigen::Index n = 0; n < N; ++n) {
    require(entries[n].first.size() == C, "aggregate: feature sizes differ");
    F.col(n) = entries[n].first;
    W(0, n) = entries[n].second;
  }
  const Var<T> out = nn::weighted_moments(nn::constant<T>(F), nn::constant<T>(W), 1);
  return {out.value().topRows(C).col(0), out.value().bottomRows(C).col(0)};
}

/// Batch of rays with per-ray marching bounds.
template <typename T>
struct RayBundle {
  Matrix<T> origins;     // 3 x B
  Matrix<T> directions;  // 3 x B, unit
  Matrix<T> t_near;      // 1 x B
  Matrix<T> t_far;       // 1 x B

  Eigen::Index size() const { return origins.cols(); }
};

/// Sphere bounding the scene content; marching runs between its near and far
/// distances from each camera.
struct SceneBounds {
  Vec3 centre = Vec3::Zero();
  double radius = 1.25;

  std::pair<double, double> ray_bounds(const Vec3& origin) const {
    const double d = (origin - centre).norm();
    const double near = std::max(0.01, d - radius);
    return {near, std::max(near + 1e-6, d + radius)};
  }
};

template <typename T>
RayBundle<T> make_ray_bundle(const std::vector<Ray>& rays, const SceneBounds& bounds) {
  RayBundle<T> b;
  const auto B = static_cast<Eigen::Index>(rays.size());
  b.origins.resize(3, B);
  b.directions.resize(3, B);
  b.t_near.resize(1, B);
  b.t_far.resize(1, B);
  for (Eigen::Index i = 0; i < B; ++i) {
    b.origins.col(i) = rays[i].origin.cast<T>();
    b.directions.col(i) = rays[i].direction.cast<T>();
    const auto [tn, tf] = bounds.ray_bounds(rays[i].origin);
    b.t_near(0, i) = static_cast<T>(tn);
    b.t_far(0, i) = static_cast<T>(tf);
  }
  return b;
}

template <typename T>
struct MarchResult {
  Var<T> aggregated;  // 2L' x B: [mean; variance] at the final point
  Var<T> depth;       // 1 x B
  std::vector<Matrix<T>> t_trace;  // t before every jump and after the last one
};

/// LSTM-guided marching of a ray bundle against encoded references.
template <typename T>
MarchResult<T> march_rays(const BoundParameters<T>& p, const ModelConfig& cfg, const RayBundle<T>& rays,
                          const std::vector<const FeatureVolume<T>*>& refs, bool keep_trace = false) {
  require(!refs.empty(), "march_rays: at least one reference required");
  require(static_cast<int>(refs.size()) <= cfg.max_references, "march_rays: too many references");
  require(((rays.t_far - rays.t_near).array() > T(0)).all(), "march_rays: t_near must be < t_far");
  const Eigen::Index B = rays.size();
  const Eigen::Index N = static_cast<Eigen::Index>(refs.size());
  const int H = cfg.lstm_hidden;

  std::vector<nn::ReferenceCamera<T>> cams;
  std::vector<nn::GridShape> shapes;
  std::vector<Var<T>> grids;
  Matrix<T> dirs_ref(3, N * B);
  for (Eigen::Index n = 0; n < N; ++n) {
    cams.push_back(nn::ReferenceCamera<T>::from(refs[n]->view));
    shapes.push_back(refs[n]->shape());
    grids.push_back(refs[n]->grid);
    dirs_ref.middleCols(n * B, B) = cams.back().rotation_t * rays.directions;
  }
  const Var<T> dirs_ref_var = nn::constant<T>(std::move(dirs_ref));
  const Matrix<T> step_scale = (rays.t_far - rays.t_near) / static_cast<T>(cfg.step_divisor);

  auto gather = [&](const Var<T>& t) {
    const Var<T> x = nn::ray_points(rays.origins, rays.directions, t);
    const Var<T> x_ref = nn::to_reference_frames(x, cams);
    const Var<T> encoded = nn::positional_encoding(x_ref, cfg.n_freq);
    Matrix<T> valid;
    const Var<T> uv = nn::project_points(x_ref, cams, B, valid);
    const Var<T> sampled = nn::bilinear_sample(grids, shapes, uv, valid, B);
    const Var<T> inputs = nn::concat_rows<T>({encoded, dirs_ref_var, sampled});
    const auto [features, weights] = reference_features(p, cfg, inputs, valid);
    return nn::weighted_moments(features, weights, B);
  };

  MarchResult<T> result;
  Var<T> t = nn::constant<T>(rays.t_near);
  Var<T> h = nn::constant<T>(Matrix<T>::Zero(H, B));
  Var<T> c = nn::constant<T>(Matrix<T>::Zero(H, B));
  for (int i = 0; i < cfg.n_iter; ++i) {
    if (keep_trace) result.t_trace.push_back(t.value());
    const Var<T> agg = gather(t);
    const Var<T> gates = nn::add(nn::linear(p[kLstmWx], p[kLstmB], agg), nn::matmul(p[kLstmWh], h));
    const Var<T> in_gate = nn::sigmoid(nn::slice_rows(gates, 0, H));
    const Var<T> forget_gate = nn::sigmoid(nn::slice_rows(gates, H, H));
    const Var<T> cell_in = nn::tanh(nn::slice_rows(gates, 2 * H, H));
    const Var<T> out_gate = nn::sigmoid(nn::slice_rows(gates, 3 * H, H));
    c = nn::add(nn::mul(forget_gate, c), nn::mul(in_gate, cell_in));
    h = nn::mul(out_gate, nn::tanh(c));
    const Var<T> jump = nn::mul_row_const(nn::sigmoid(nn::linear(p[kStepW], p[kStepB], h)), step_scale);
    t = nn::clamp_max(nn::add(t, jump), rays.t_far);
  }
  if (keep_trace) result.t_trace.push_back(t.value());
  result.aggregated = gather(t);
  result.depth = t;
  return result;
}

/// MLP_out: aggregate -> (mu, sigma), sigma = softplus(raw) + sigma_min.
template <typename T>
std::pair<Var<T>, Var<T>> decode(const BoundParameters<T>& p, const ModelConfig& cfg, const Var<T>& aggregated) {
  const Var<T> hidden = nn::relu(nn::linear(p[kOut1W], p[kOut1B], aggregated));
  const Var<T> out = nn::linear(p[kOut2W], p[kOut2B], hidden);
  const Var<T> mu = nn::slice_rows(out, 0, 3);
  const Var<T> sigma = nn::add_scalar(nn::softplus(nn::slice_rows(out, 3, 3)), static_cast<T>(cfg.sigma_min));
  return {mu, sigma};
}

/// Single-sample decode of an aggregated feature.
template <typename T>
std::pair<Eigen::Matrix<T, 3, 1>, Eigen::Matrix<T, 3, 1>> decode_output(const ModelParameters<T>& params,
                                                                         const AggregatedFeature<T>& agg) {
  nn::NoGradGuard no_grad;
  Matrix<T> in(agg.mean.size() + agg.variance.size(), 1);
  in << agg.mean, agg.variance;
  const auto [mu, sigma] = decode(bind(params, false), params.config, nn::constant<T>(in));
  return {mu.value().col(0), sigma.value().col(0)};
}

/// Per-pixel distribution parameters of a rendered view.
struct RenderedView {
  int width = 0;
  int height = 0;
  Image mu;     // logit-space means
  Image sigma;  // logit-space standard deviations, > 0
  Image depth;  // single channel, metres
};

/// Rays through the pixel centres of a view resampled to width x height.
inline std::vector<Ray> pixel_rays(const CameraView& view, int width, int height) {
  const Intrinsics intr = view.intrinsics.rescaled(width, height);
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) rays.push_back(ray_through_pixel(intr, view.pose, Vec2(x + 0.5, y + 0.5)));
  return rays;
}

/// Strict weak order on reference volumes: camera pose, then feature values.
template <typename T>
bool canonical_less(const FeatureVolume<T>& a, const FeatureVolume<T>& b) {
  const Pose& pa = a.view.pose;
  const Pose& pb = b.view.pose;
  for (int i = 0; i < 3; ++i)
    if (pa.translation[i] != pb.translation[i]) return pa.translation[i] < pb.translation[i];
  for (int i = 0; i < 9; ++i)
    if (pa.rotation(i) != pb.rotation(i)) return pa.rotation(i) < pb.rotation(i);
  const auto& ga = a.grid.value();
  const auto& gb = b.grid.value();
  if (ga.size() != gb.size()) return ga.size() < gb.size();
  return std::lexicographical_compare(ga.data(), ga.data() + ga.size(), gb.data(), gb.data() + gb.size());
}

/// Inference-time renderer: parameters bound once as constants, references
/// encoded on demand. Rendering is read-only and deterministic.
template <typename T>
class NeuralRenderer {
 public:
  explicit NeuralRenderer(ModelParameters<T> params, SceneBounds bounds = {}, int chunk_size = 1024)
      : params_(std::move(params)), bounds_(bounds), chunk_(chunk_size) {
    params_.config.validate();
    bound_ = bind(params_, false);
  }

  const ModelParameters<T>& parameters() const { return params_; }
  const ModelConfig& config() const { return params_.config; }
  const SceneBounds& bounds() const { return bounds_; }

  FeatureVolume<T> encode(const PosedImage& image) const {
    nn::NoGradGuard no_grad;
    return encode_image(bound_, params_.config, image);
  }

  RenderedView render(const CameraView& target, const std::vector<const FeatureVolume<T>*>& refs, int width,
                      int height) const {
    require(!refs.empty(), "render_view: empty reference list");
    require(static_cast<int>(refs.size()) <= params_.config.max_references, "render_view: too many references");
    require(width >= 1 && height >= 1, "render_view: empty resolution");
    nn::NoGradGuard no_grad;
    // Floating-point reductions over references depend on their order; a canonical
    // order makes the output exactly permutation invariant.
    std::vector<const FeatureVolume<T>*> ordered = refs;
    std::stable_sort(ordered.begin(), ordered.end(), [](const FeatureVolume<T>* a, const FeatureVolume<T>* b) {
      return canonical_less(*a, *b);
    });
    const auto rays = pixel_rays(target, width, height);
    RenderedView out{width, height, Image(width, height, 3), Image(width, height, 3), Image(width, height, 1)};
    for (std::size_t start = 0; start < rays.size(); start += static_cast<std::size_t>(chunk_)) {
      const std::size_t end = std::min(rays.size(), start + static_cast<std::size_t>(chunk_));
      const std::vector<Ray> chunk(rays.begin() + static_cast<std::ptrdiff_t>(start),
                                   rays.begin() + static_cast<std::ptrdiff_t>(end));
      const auto bundle = make_ray_bundle<T>(chunk, bounds_);
      const auto marched = march_rays(bound_, params_.config, bundle, ordered);
      const auto [mu, sigma] = decode(bound_, params_.config, marched.aggregated);
      for (std::size_t i = start; i < end; ++i) {
        const auto col = static_cast<Eigen::Index>(i - start);
        for (int c = 0; c < 3; ++c) {
          out.mu.data[i * 3 + c] = static_cast<float>(mu.value()(c, col));
          out.sigma.data[i * 3 + c] = static_cast<float>(sigma.value()(c, col));
        }
        out.depth.data[i] = static_cast<float>(marched.depth.value()(0, col));
      }
    }
    return out;
  }

  RenderedView render(const CameraView& target, const std::vector<PosedImage>& refs, int width, int height) const {
    require(!refs.empty(), "render_view: empty reference list");
    std::vector<FeatureVolume<T>> volumes;
    volumes.reserve(refs.size());
    for (const auto& r : refs) volumes.push_back(encode(r));
    std::vector<const FeatureVolume<T>*> ptrs;
    for (const auto& v : volumes) ptrs.push_back(&v);
    return render(target, ptrs, width, height);
  }

 private:
  ModelParameters<T> params_;
  SceneBounds bounds_;
  int chunk_;
  BoundParameters<T> bound_;
};

template <typename T>
RenderedView render_view(const ModelParameters<T>& params, const CameraView& target, const std::vector<PosedImage>& refs,
                         int width, int height, const SceneBounds& bounds = {}) {
  return NeuralRenderer<T>(params, bounds).render(target, refs, width, height);
}

}  // namespace nbv::renderer
