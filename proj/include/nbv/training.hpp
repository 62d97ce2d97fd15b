#pragma once

// Cross-scene training: ray batches, Adam, checkpoints and the training loop.

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nbv/core.hpp"
#include "nbv/image.hpp"
#include "nbv/renderer.hpp"
#include "nbv/scene_oracle.hpp"
#include "nbv/uncertainty.hpp"

namespace nbv::training {

using renderer::ModelConfig;
using renderer::ModelParameters;

struct TrainConfig {
  double learning_rate = 1e-5;
  double lr_decay = 0.999;  // multiplier per epoch
  int steps_per_epoch = 100;
  int rays_per_batch = 512;
  std::vector<int> n_ref_choices{3, 4, 5};
  int total_steps = 10000;
  int validation_interval = 500;
  int validation_views = 4;  // per held-out scene
  int validation_resolution = 32;
  int checkpoint_interval = 500;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  bool colour_augment = false;  // random RGB permutation per batch, shared by target and references
  std::uint64_t seed = 0;

  void validate() const {
    require(learning_rate > 0, "TrainConfig: learning rate must be positive");
    require(lr_decay > 0 && lr_decay <= 1, "TrainConfig: lr_decay must lie in (0, 1]");
    require(steps_per_epoch >= 1, "TrainConfig: steps_per_epoch must be >= 1");
    require(rays_per_batch >= 1, "TrainConfig: rays per batch must be >= 1");
    require(!n_ref_choices.empty(), "TrainConfig: n_ref choices must be non-empty");
    for (int n : n_ref_choices) require(n >= 1, "TrainConfig: n_ref choices must be >= 1");
    require(total_steps >= 0, "TrainConfig: total_steps must be >= 0");
    require(validation_interval >= 1 && checkpoint_interval >= 1, "TrainConfig: intervals must be >= 1");
    require(validation_views >= 1 && validation_resolution >= 1, "TrainConfig: validation settings must be positive");
    require(grad_clip >= 0, "TrainConfig: grad_clip must be >= 0");
  }

  double lr_at(std::int64_t step) const {
    return learning_rate * std::pow(lr_decay, static_cast<double>(step / steps_per_epoch));
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"lr_decay", c.lr_decay},
       {"steps_per_epoch", c.steps_per_epoch},
       {"rays_per_batch", c.rays_per_batch},
       {"n_ref_choices", c.n_ref_choices},
       {"total_steps", c.total_steps},
       {"validation_interval", c.validation_interval},
       {"validation_views", c.validation_views},
       {"validation_resolution", c.validation_resolution},
       {"checkpoint_interval", c.checkpoint_interval},
       {"grad_clip", c.grad_clip},
       {"colour_augment", c.colour_augment},
       {"seed", c.seed}};
}

}  // namespace nbv::training

namespace nbv::renderer {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder_channels", c.encoder_channels},
       {"n_freq", c.n_freq},
       {"feat_hidden", c.feat_hidden},
       {"agg_channels", c.agg_channels},
       {"lstm_hidden", c.lstm_hidden},
       {"out_hidden", c.out_hidden},
       {"n_iter", c.n_iter},
       {"step_divisor", c.step_divisor},
       {"sigma_min", c.sigma_min},
       {"step_bias_init", c.step_bias_init},
       {"min_input_size", c.min_input_size},
       {"max_references", c.max_references}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("encoder_channels").get_to(c.encoder_channels);
  j.at("n_freq").get_to(c.n_freq);
  j.at("feat_hidden").get_to(c.feat_hidden);
  j.at("agg_channels").get_to(c.agg_channels);
  j.at("lstm_hidden").get_to(c.lstm_hidden);
  j.at("out_hidden").get_to(c.out_hidden);
  j.at("n_iter").get_to(c.n_iter);
  j.at("step_divisor").get_to(c.step_divisor);
  j.at("sigma_min").get_to(c.sigma_min);
  j.at("step_bias_init").get_to(c.step_bias_init);
  j.at("min_input_size").get_to(c.min_input_size);
  j.at("max_references").get_to(c.max_references);
}

}  // namespace nbv::renderer

namespace nbv::training {

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  std::size_t scene = 0;
  std::size_t target = 0;
  std::vector<std::size_t> references;  // image indices within the scene, never the target
  std::vector<std::size_t> pixels;      // row-major pixel indices of the target
  std::vector<Ray> rays;
  Eigen::MatrixXd colours;  // 3 x rays
  std::array<int, 3> channels{0, 1, 2};  // output channel c reads input channel channels[c]
};

inline Image permute_channels(const Image& img, const std::array<int, 3>& ch) {
  Image out(img.width, img.height, 3);
  for (std::size_t p = 0; p < img.pixel_count(); ++p)
    for (int c = 0; c < 3; ++c) out.data[3 * p + c] = img.data[3 * p + ch[c]];
  return out;
}

inline Batch sample_batch(const std::vector<PosedImageSet>& datasets, const TrainConfig& cfg, Rng& rng) {
  require(!datasets.empty(), "sample_batch: no datasets");
  const int max_ref = *std::max_element(cfg.n_ref_choices.begin(), cfg.n_ref_choices.end());
  Batch b;
  b.scene = rng.index(datasets.size());
  const PosedImageSet& set = datasets[b.scene];
  if (set.size() < 6 || static_cast<int>(set.size()) < max_ref + 1)
    throw Error("sample_batch: scene '" + set.scene_id + "' has too few images (" + std::to_string(set.size()) + ")");
  b.target = rng.index(set.size());
  const int n_ref = cfg.n_ref_choices[rng.index(cfg.n_ref_choices.size())];
  for (std::size_t i : sample_without_replacement(set.size() - 1, static_cast<std::size_t>(n_ref), rng))
    b.references.push_back(i < b.target ? i : i + 1);

  const PosedImage& target = set.images[b.target];
  const std::size_t n_pixels = target.image.pixel_count();
  const auto n_rays = static_cast<std::size_t>(cfg.rays_per_batch);
  if (n_rays <= n_pixels) {
    b.pixels = sample_without_replacement(n_pixels, n_rays, rng);
  } else {
    for (std::size_t i = 0; i < n_rays; ++i) b.pixels.push_back(rng.index(n_pixels));
  }
  if (cfg.colour_augment) std::shuffle(b.channels.begin(), b.channels.end(), rng.engine());
  b.colours.resize(3, static_cast<Eigen::Index>(b.pixels.size()));
  for (std::size_t k = 0; k < b.pixels.size(); ++k) {
    const int x = static_cast<int>(b.pixels[k] % target.image.width);
    const int y = static_cast<int>(b.pixels[k] / target.image.width);
    b.rays.push_back(ray_through_pixel(target.view.intrinsics, target.view.pose, Vec2(x + 0.5, y + 0.5)));
    for (int c = 0; c < 3; ++c) b.colours(c, static_cast<Eigen::Index>(k)) = target.image.at(x, y, b.channels[c]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Optimiser

template <typename T>
struct AdamState {
  std::array<nn::Matrix<T>, renderer::kParamCount> m;
  std::array<nn::Matrix<T>, renderer::kParamCount> v;
  std::int64_t t = 0;

  static AdamState zeros_like(const ModelParameters<T>& p) {
    AdamState s;
    for (int i = 0; i < renderer::kParamCount; ++i) {
      s.m[i] = nn::Matrix<T>::Zero(p.tensors[i].rows(), p.tensors[i].cols());
      s.v[i] = s.m[i];
    }
    return s;
  }
  template <typename U>
  AdamState<U> cast() const {
    AdamState<U> o;
    for (int i = 0; i < renderer::kParamCount; ++i) {
      o.m[i] = m[i].template cast<U>();
      o.v[i] = v[i].template cast<U>();
    }
    o.t = t;
    return o;
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

template <typename T>
void adam_update(ModelParameters<T>& p, const std::array<nn::Matrix<T>, renderer::kParamCount>& grads,
                 AdamState<T>& s, double lr) {
  ++s.t;
  const T b1 = static_cast<T>(kAdamBeta1), b2 = static_cast<T>(kAdamBeta2);
  const T c1 = static_cast<T>(1.0 - std::pow(kAdamBeta1, static_cast<double>(s.t)));
  const T c2 = static_cast<T>(1.0 - std::pow(kAdamBeta2, static_cast<double>(s.t)));
  for (int i = 0; i < renderer::kParamCount; ++i) {
    s.m[i] = b1 * s.m[i] + (T(1) - b1) * grads[i];
    s.v[i] = b2 * s.v[i] + (T(1) - b2) * grads[i].cwiseAbs2();
    const auto m_hat = s.m[i].array() / c1;
    const auto v_hat = s.v[i].array() / c2;
    p.tensors[i].array() -= static_cast<T>(lr) * m_hat / (v_hat.sqrt() + static_cast<T>(kAdamEpsilon));
  }
}

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// Loss and parameter gradients of one batch (no update).
template <typename T>
std::pair<double, std::array<nn::Matrix<T>, renderer::kParamCount>> loss_and_gradients(
    const ModelParameters<T>& params, const std::vector<PosedImageSet>& datasets, const Batch& batch,
    const renderer::SceneBounds& bounds) {
  const auto& cfg = params.config;
  const auto bound = renderer::bind(params, true);
  const PosedImageSet& set = datasets[batch.scene];
  std::vector<renderer::FeatureVolume<T>> volumes;
  const bool permuted = batch.channels != std::array<int, 3>{0, 1, 2};
  for (std::size_t r : batch.references) {
    if (!permuted) {
      volumes.push_back(renderer::encode_image(bound, cfg, set.images[r]));
      continue;
    }
    PosedImage recoloured{permute_channels(set.images[r].image, batch.channels), set.images[r].view};
    volumes.push_back(renderer::encode_image(bound, cfg, recoloured));
  }
  std::vector<const renderer::FeatureVolume<T>*> refs;
  for (const auto& v : volumes) refs.push_back(&v);
  const auto rays = renderer::make_ray_bundle<T>(batch.rays, bounds);
  const auto marched = renderer::march_rays(bound, cfg, rays, refs);
  const auto [mu, sigma] = renderer::decode(bound, cfg, marched.aggregated);
  const auto loss = uncertainty::nll_loss(mu, sigma, batch.colours.cast<T>().eval());
  const double value = static_cast<double>(loss.value()(0, 0));
  std::array<nn::Matrix<T>, renderer::kParamCount> grads;
  if (!std::isfinite(value)) return {value, grads};
  nn::backward(loss);
  for (int i = 0; i < renderer::kParamCount; ++i) {
    grads[i] = bound[i].grad();
    if (grads[i].size() == 0) grads[i] = nn::Matrix<T>::Zero(params.tensors[i].rows(), params.tensors[i].cols());
  }
  return {value, grads};
}

inline std::string describe_batch(const std::vector<PosedImageSet>& datasets, const Batch& b) {
  std::ostringstream os;
  os << "scene '" << datasets[b.scene].scene_id << "' target view " << b.target << " references [";
  for (std::size_t i = 0; i < b.references.size(); ++i) os << (i ? "," : "") << b.references[i];
  os << "]";
  return os.str();
}

/// One Adam step on the mean per-ray loss. A non-finite loss or gradient leaves
/// parameters untouched and throws NonFiniteLoss naming the batch.
template <typename T>
StepResult train_step(ModelParameters<T>& params, AdamState<T>& opt, const std::vector<PosedImageSet>& datasets,
                      const Batch& batch, double lr, double grad_clip = 0.0, const renderer::SceneBounds& bounds = {}) {
  if (!params.all_finite()) throw NonFiniteLoss("train_step: parameters are not finite");
  auto [loss, grads] = loss_and_gradients(params, datasets, batch, bounds);
  if (!std::isfinite(loss)) throw NonFiniteLoss("non-finite loss at " + describe_batch(datasets, batch));
  double sq = 0.0;
  for (const auto& g : grads) sq += g.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NonFiniteLoss("non-finite gradient at " + describe_batch(datasets, batch));
  if (grad_clip > 0 && norm > grad_clip)
    for (auto& g : grads) g *= static_cast<T>(grad_clip / norm);
  adam_update(params, grads, opt, lr);
  return {loss, norm};
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'N', 'B', 'V', 'C', 'K', 'P', 'T', '\0'};

class CheckpointError : public Error {
 public:
  enum class Kind { version_mismatch, corrupt, io };
  CheckpointError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  ModelParameters<double> params;
  std::optional<AdamState<double>> optimiser;
  std::int64_t step = 0;
  double best_validation_psnr = -std::numeric_limits<double>::infinity();
  nlohmann::json config_snapshot = nlohmann::json::object();
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename V>
void put(std::string& out, const V& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(V));
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}
  template <typename V>
  V get() {
    if (pos_ + sizeof(V) > data_.size()) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint truncated");
    V v;
    std::memcpy(&v, data_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint truncated");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

inline void put_matrix(std::string& out, const nn::Matrix<double>& m) {
  out.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
}

inline nn::Matrix<double> get_matrix(Reader& r, int rows, int cols) {
  nn::Matrix<double> m(rows, cols);
  const std::string raw = r.bytes(sizeof(double) * static_cast<std::size_t>(rows) * cols);
  std::memcpy(m.data(), raw.data(), raw.size());
  return m;
}

}  // namespace detail

/// Writes a checkpoint atomically (temporary file, then rename).
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto shapes = renderer::parameter_shapes(ck.params.config);
  for (int i = 0; i < renderer::kParamCount; ++i)
    require(ck.params.tensors[i].rows() == shapes[i].first && ck.params.tensors[i].cols() == shapes[i].second,
            "save_checkpoint: parameter shape does not match config");
  nlohmann::json header = {{"model", ck.params.config},
                           {"step", ck.step},
                           {"has_optimiser", ck.optimiser.has_value()},
                           {"adam_t", ck.optimiser ? ck.optimiser->t : 0},
                           {"best_validation_psnr", std::isfinite(ck.best_validation_psnr)
                                                        ? nlohmann::json(ck.best_validation_psnr)
                                                        : nlohmann::json(nullptr)},
                           {"config", ck.config_snapshot}};
  const std::string header_text = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint64_t>(header_text.size()));
  out += header_text;
  for (const auto& t : ck.params.tensors) detail::put_matrix(out, t);
  if (ck.optimiser) {
    for (const auto& t : ck.optimiser->m) detail::put_matrix(out, t);
    for (const auto& t : ck.optimiser->v) detail::put_matrix(out, t);
  }
  detail::put(out, detail::fnv1a(out));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  using Kind = CheckpointError::Kind;
  if (data.size() < sizeof(kCheckpointMagic) + sizeof(std::uint32_t) ||
      std::memcmp(data.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError(Kind::corrupt, "not a checkpoint file: " + path.string());
  detail::Reader r(data);
  r.bytes(sizeof(kCheckpointMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::version_mismatch, "checkpoint schema version " + std::to_string(version) +
                                                      " is not supported (expected " +
                                                      std::to_string(kCheckpointVersion) + ")");
  if (data.size() < sizeof(std::uint64_t) ||
      detail::fnv1a(data.substr(0, data.size() - sizeof(std::uint64_t))) !=
          [&] {
            std::uint64_t h;
            std::memcpy(&h, data.data() + data.size() - sizeof(h), sizeof(h));
            return h;
          }())
    throw CheckpointError(Kind::corrupt, "checkpoint checksum mismatch (truncated or damaged): " + path.string());

  Checkpoint ck;
  try {
    const auto header_len = r.get<std::uint64_t>();
    const auto header = nlohmann::json::parse(r.bytes(header_len));
    ck.params.config = header.at("model").get<ModelConfig>();
    ck.params.config.validate();
    ck.step = header.at("step").get<std::int64_t>();
    if (!header.at("best_validation_psnr").is_null())
      ck.best_validation_psnr = header.at("best_validation_psnr").get<double>();
    ck.config_snapshot = header.at("config");
    const auto shapes = renderer::parameter_shapes(ck.params.config);
    for (int i = 0; i < renderer::kParamCount; ++i)
      ck.params.tensors[i] = detail::get_matrix(r, shapes[i].first, shapes[i].second);
    if (header.at("has_optimiser").get<bool>()) {
      AdamState<double> s;
      for (int i = 0; i < renderer::kParamCount; ++i) s.m[i] = detail::get_matrix(r, shapes[i].first, shapes[i].second);
      for (int i = 0; i < renderer::kParamCount; ++i) s.v[i] = detail::get_matrix(r, shapes[i].first, shapes[i].second);
      s.t = header.at("adam_t").get<std::int64_t>();
      ck.optimiser = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::corrupt, std::string("malformed checkpoint header: ") + e.what());
  } catch (const ContractViolation& e) {
    throw CheckpointError(Kind::corrupt, std::string("invalid checkpoint contents: ") + e.what());
  }
  if (r.position() + sizeof(std::uint64_t) != data.size())
    throw CheckpointError(Kind::corrupt, "checkpoint has unexpected trailing data: " + path.string());
  return ck;
}

// ---------------------------------------------------------------------------
// Validation and the training loop

struct ValidationItem {
  std::size_t scene;
  std::size_t target;
  std::vector<std::size_t> references;
};

/// Fixed (seeded) target/reference draws on held-out scenes.
inline std::vector<ValidationItem> make_validation_plan(const std::vector<PosedImageSet>& held_out, int views_per_scene,
                                                        int n_ref, std::uint64_t seed) {
  std::vector<ValidationItem> plan;
  Rng rng(derive_seed(seed, 0x7a11d));
  for (std::size_t s = 0; s < held_out.size(); ++s) {
    const std::size_t n = held_out[s].size();
    require(n >= 2, "validation scene needs at least two images");
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(n_ref), n - 1);
    for (int v = 0; v < views_per_scene; ++v) {
      ValidationItem item{s, rng.index(n), {}};
      for (std::size_t i : sample_without_replacement(n - 1, k, rng))
        item.references.push_back(i < item.target ? i : i + 1);
      plan.push_back(std::move(item));
    }
  }
  return plan;
}

/// Mean PSNR of MC-mean colour over a validation plan (rendered at res x res).
template <typename T>
double validation_psnr(const ModelParameters<T>& params, const std::vector<PosedImageSet>& held_out,
                       const std::vector<ValidationItem>& plan, int res, std::uint64_t seed,
                       const renderer::SceneBounds& bounds = {}) {
  renderer::NeuralRenderer<T> r(params, bounds);
  double total = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& item = plan[i];
    const auto& set = held_out[item.scene];
    std::vector<PosedImage> refs;
    for (std::size_t k : item.references) refs.push_back(set.images[k]);
    const auto& target = set.images[item.target];
    const auto view = r.render(target.view, refs, res, res);
    const auto mc = uncertainty::uncertainty_map(view, uncertainty::kDefaultSamples, derive_seed(seed, i));
    const Image gt = resize_area(target.image, res, res);
    double mse = 0.0;
    for (std::size_t k = 0; k < gt.data.size(); ++k) {
      const double d = mc.rgb.data[k] - gt.data[k];
      mse += d * d;
    }
    mse /= static_cast<double>(gt.data.size());
    total += mse <= 1e-10 ? 100.0 : -10.0 * std::log10(mse);
  }
  return plan.empty() ? 0.0 : total / static_cast<double>(plan.size());
}

struct LogRecord {
  std::int64_t step;
  double loss;
  double lr;
  std::optional<double> val_psnr;

  nlohmann::json to_json() const {
    return {{"step", step},
            {"loss", loss},
            {"lr", lr},
            {"val_psnr", val_psnr ? nlohmann::json(*val_psnr) : nlohmann::json(nullptr)}};
  }
};

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: keep in memory only
  std::filesystem::path log_path;        // JSONL, appended
  std::optional<Checkpoint> resume;
  nlohmann::json config_snapshot = nlohmann::json::object();
  renderer::SceneBounds bounds;
  std::function<void(const LogRecord&)> on_record;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint latest;
  std::vector<LogRecord> trace;
  double initial_validation_psnr = 0.0;
};

/// Trains in single precision. Batches are drawn from Rng(derive_seed(seed, step)),
/// so resuming from a checkpoint continues the exact sequence.
inline TrainResult train(const std::vector<PosedImageSet>& train_sets, const std::vector<PosedImageSet>& held_out,
                         const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainOptions& opts = {}) {
  cfg.validate();
  require(!train_sets.empty(), "train: at least one training scene required");
  require(!held_out.empty(), "train: at least one held-out scene required");
  for (const auto& h : held_out)
    for (const auto& t : train_sets)
      require(h.scene_id != t.scene_id, "train: held-out scene '" + h.scene_id + "' also appears in training");

  ModelParameters<float> params;
  AdamState<float> opt;
  std::int64_t step = 0;
  double best_psnr = -std::numeric_limits<double>::infinity();
  if (opts.resume) {
    params = opts.resume->params.cast<float>();
    opt = opts.resume->optimiser ? opts.resume->optimiser->cast<float>() : AdamState<float>::zeros_like(params);
    step = opts.resume->step;
    best_psnr = opts.resume->best_validation_psnr;
  } else {
    params = renderer::init_parameters<float>(model_cfg, cfg.seed);
    opt = AdamState<float>::zeros_like(params);
  }

  const int max_ref = *std::max_element(cfg.n_ref_choices.begin(), cfg.n_ref_choices.end());
  const auto plan = make_validation_plan(held_out, cfg.validation_views, std::min(max_ref, 4), cfg.seed);
  const auto validate_now = [&] {
    return validation_psnr(params, held_out, plan, cfg.validation_resolution, cfg.seed, opts.bounds);
  };

  std::ofstream log;
  if (!opts.log_path.empty()) {
    if (opts.log_path.has_parent_path()) std::filesystem::create_directories(opts.log_path.parent_path());
    log.open(opts.log_path, std::ios::app);
    if (!log) throw IoError("cannot open training log " + opts.log_path.string());
  }

  auto snapshot = [&](std::int64_t at_step) {
    Checkpoint ck;
    ck.params = params.cast<double>();
    ck.optimiser = opt.cast<double>();
    ck.step = at_step;
    ck.best_validation_psnr = best_psnr;
    ck.config_snapshot = opts.config_snapshot;
    return ck;
  };

  auto persist = [&](const Checkpoint& ck, const char* name) {
    if (!opts.checkpoint_dir.empty()) save_checkpoint(ck, opts.checkpoint_dir / name);
  };

  TrainResult result;
  result.initial_validation_psnr = validate_now();
  if (!opts.resume) {
    best_psnr = result.initial_validation_psnr;
    result.best = snapshot(0);
    persist(result.best, "best.ckpt");
  } else {
    result.best = *opts.resume;
  }

  while (step < cfg.total_steps) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step)));
    const Batch batch = sample_batch(train_sets, cfg, rng);
    const double lr = cfg.lr_at(step);
    const auto sr = train_step(params, opt, train_sets, batch, lr, cfg.grad_clip, opts.bounds);
    ++step;
    LogRecord rec{step, sr.loss, lr, std::nullopt};
    if (step % cfg.validation_interval == 0 || step == cfg.total_steps) {
      rec.val_psnr = validate_now();
      if (*rec.val_psnr > best_psnr) {
        best_psnr = *rec.val_psnr;
        result.best = snapshot(step);
        persist(result.best, "best.ckpt");
      }
    }
    if (step % cfg.checkpoint_interval == 0 || step == cfg.total_steps) persist(snapshot(step), "latest.ckpt");
    if (log) log << rec.to_json().dump() << '\n' << std::flush;
    if (opts.on_record) opts.on_record(rec);
    result.trace.push_back(rec);
  }
  result.latest = snapshot(step);
  result.latest.best_validation_psnr = best_psnr;
  result.best.best_validation_psnr = best_psnr;
  return result;
}

}  // namespace nbv::training
