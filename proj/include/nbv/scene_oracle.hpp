#pragma once

// Procedural ground-truth scenes (spheres and boxes on a checkered disc, lit by a
// directional light), an analytic ray tracer for them, and the on-disk posed
// image dataset format shared by generation, loading and export.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nbv/core.hpp"
#include "nbv/geometry.hpp"
#include "nbv/image.hpp"

namespace nbv {

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

/// Camera rig shared by dataset generation, missions and evaluation.
struct RigConfig {
  double hemisphere_radius = 3.0;
  Vec3 centre = Vec3::Zero();
  double fov = deg_to_rad(45.0);
  double min_elevation = deg_to_rad(10.0);
  /// Radius of the sphere that bounds all scene content (ray marching bounds).
  double scene_radius = 1.25;

  Intrinsics intrinsics(int width, int height) const { return Intrinsics::from_fov(width, height, fov); }
};

enum class Difficulty { simple, cluttered };

inline std::string to_string(Difficulty d) { return d == Difficulty::simple ? "simple" : "cluttered"; }
inline Difficulty difficulty_from_string(const std::string& s) {
  if (s == "simple") return Difficulty::simple;
  if (s == "cluttered") return Difficulty::cluttered;
  throw ContractViolation("unknown difficulty: " + s);
}

struct Primitive {
  enum class Kind { sphere, box };
  Kind kind = Kind::sphere;
  Vec3 centre = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.3);  // sphere: size.x() is the radius; box: half extents
  Vec3 albedo = Vec3::Constant(0.8);
  Vec3 albedo_alt = Vec3::Constant(0.2);
  double texture_frequency = 0.0;  // 0 = plain colour; otherwise 3D checker cells per metre
};

struct Scene {
  std::uint64_t seed = 0;
  Difficulty difficulty = Difficulty::simple;
  std::vector<Primitive> primitives;
  double ground_height = -0.4;
  double ground_radius = 1.1;
  Vec3 ground_albedo = Vec3(0.75, 0.75, 0.7);
  Vec3 ground_albedo_alt = Vec3(0.35, 0.35, 0.4);
  double ground_checker = 4.0;
  Vec3 light_direction = Vec3(0.3, 0.2, 1.0).normalized();  // towards the light
  double light_intensity = 0.7;
  double ambient = 0.25;
  Vec3 background = Vec3(0.55, 0.65, 0.8);
};

/// Deterministic scene from a seed. Simple scenes hold 1-2 plain primitives,
/// cluttered ones 4-8 primitives with high-frequency checker textures.
inline Scene build_scene(std::uint64_t seed, Difficulty difficulty, const RigConfig& rig = {}) {
  Rng rng(derive_seed(seed, 0x5ce7e));
  Scene scene;
  scene.seed = seed;
  scene.difficulty = difficulty;

  const double placement_radius = std::min(0.75, 0.5 * rig.hemisphere_radius - 0.45);
  const int count = difficulty == Difficulty::simple ? 1 + static_cast<int>(rng.index(2))
                                                     : 4 + static_cast<int>(rng.index(5));
  auto random_colour = [&rng]() {
    Vec3 c(rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0));
    c[rng.index(3)] = rng.uniform(0.75, 1.0);  // keep at least one strong channel
    return c;
  };
  for (int i = 0; i < count; ++i) {
    Primitive p;
    p.kind = rng.uniform() < 0.5 ? Primitive::Kind::sphere : Primitive::Kind::box;
    const double r = std::sqrt(rng.uniform()) * placement_radius;
    const double phi = rng.uniform(0.0, 2 * std::numbers::pi);
    const double scale = difficulty == Difficulty::simple ? rng.uniform(0.25, 0.45) : rng.uniform(0.12, 0.32);
    if (p.kind == Primitive::Kind::sphere) {
      p.size = Vec3::Constant(scale);
    } else {
      p.size = Vec3(scale * rng.uniform(0.6, 1.2), scale * rng.uniform(0.6, 1.2), scale * rng.uniform(0.6, 1.6));
    }
    p.centre = Vec3(r * std::cos(phi), r * std::sin(phi), scene.ground_height + p.size.z());
    p.albedo = random_colour();
    p.albedo_alt = 0.25 * p.albedo + Vec3::Constant(rng.uniform(0.0, 0.15));
    if (difficulty == Difficulty::cluttered) p.texture_frequency = rng.uniform(6.0, 14.0);
    scene.primitives.push_back(p);
  }
  const double light_az = rng.uniform(0.0, 2 * std::numbers::pi);
  const double light_el = rng.uniform(deg_to_rad(35.0), deg_to_rad(80.0));
  scene.light_direction = SphericalViewpoint{light_az, light_el, 1.0, Vec3::Zero()}.direction();
  scene.background = Vec3(rng.uniform(0.45, 0.7), rng.uniform(0.55, 0.75), rng.uniform(0.7, 0.9));
  return scene;
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::UnitZ();
  Vec3 albedo = Vec3::Zero();
};

namespace detail {

inline std::optional<std::pair<double, Vec3>> intersect_sphere(const Ray& ray, const Vec3& c, double r) {
  const Vec3 oc = ray.origin - c;
  const double b = oc.dot(ray.direction);
  const double cc = oc.squaredNorm() - r * r;
  const double disc = b * b - cc;
  if (disc < 0) return std::nullopt;
  const double s = std::sqrt(disc);
  double t = -b - s;
  if (t <= 1e-9) t = -b + s;
  if (t <= 1e-9) return std::nullopt;
  return std::make_pair(t, (ray.at(t) - c).normalized());
}

inline std::optional<std::pair<double, Vec3>> intersect_box(const Ray& ray, const Vec3& c, const Vec3& half) {
  double t_min = -std::numeric_limits<double>::infinity();
  double t_max = std::numeric_limits<double>::infinity();
  int axis_min = 0;
  double sign_min = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = c[k] - half[k], hi = c[k] + half[k];
    if (std::abs(ray.direction[k]) < 1e-15) {
      if (ray.origin[k] < lo || ray.origin[k] > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - ray.origin[k]) / ray.direction[k];
    double t1 = (hi - ray.origin[k]) / ray.direction[k];
    double s = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      s = 1.0;
    }
    if (t0 > t_min) {
      t_min = t0;
      axis_min = k;
      sign_min = s;
    }
    t_max = std::min(t_max, t1);
  }
  if (t_min > t_max || t_min <= 1e-9) return std::nullopt;
  Vec3 n = Vec3::Zero();
  n[axis_min] = sign_min;
  return std::make_pair(t_min, n);
}

inline bool checker(const Vec3& p, double freq) {
  const long s = static_cast<long>(std::floor(p.x() * freq)) + static_cast<long>(std::floor(p.y() * freq)) +
                 static_cast<long>(std::floor(p.z() * freq));
  return (s & 1) == 0;
}

}  // namespace detail

/// Closest intersection of a ray with the scene geometry.
inline Hit trace(const Scene& scene, const Ray& ray) {
  Hit hit;
  for (const auto& p : scene.primitives) {
    const auto h = p.kind == Primitive::Kind::sphere ? detail::intersect_sphere(ray, p.centre, p.size.x())
                                                     : detail::intersect_box(ray, p.centre, p.size);
    if (h && h->first < hit.t) {
      hit.t = h->first;
      hit.normal = h->second;
      const Vec3 x = ray.at(h->first);
      hit.albedo = (p.texture_frequency > 0 && !detail::checker(x, p.texture_frequency)) ? p.albedo_alt : p.albedo;
    }
  }
  if (std::abs(ray.direction.z()) > 1e-12) {
    const double t = (scene.ground_height - ray.origin.z()) / ray.direction.z();
    if (t > 1e-9 && t < hit.t) {
      const Vec3 x = ray.at(t);
      if (x.head<2>().norm() <= scene.ground_radius) {
        hit.t = t;
        hit.normal = ray.origin.z() >= scene.ground_height ? Vec3::UnitZ() : Vec3(-Vec3::UnitZ());
        hit.albedo = detail::checker(Vec3(x.x(), x.y(), 0.0), scene.ground_checker) ? scene.ground_albedo
                                                                                    : scene.ground_albedo_alt;
      }
    }
  }
  return hit;
}

/// Lambertian shading with an additive grey ambient term, clamped to [0,1].
inline Vec3 shade(const Scene& scene, const Hit& hit) {
  if (!std::isfinite(hit.t)) return scene.background;
  const double lambert = std::max(0.0, hit.normal.dot(scene.light_direction));
  Vec3 c = Vec3::Constant(scene.ambient) + scene.light_intensity * lambert * hit.albedo;
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

struct PosedImage {
  Image image;
  CameraView view;
};

struct RenderedGroundTruth {
  PosedImage posed;
  Image depth;  // single channel, ray distance t; +inf where the background is visible
};

/// Ground-truth image (and depth) of a scene from a camera, one ray per pixel centre.
inline RenderedGroundTruth render_ground_truth(const Scene& scene, const CameraView& view, int width, int height) {
  view.intrinsics.validate();
  const Intrinsics intr = view.intrinsics.rescaled(width, height);
  RenderedGroundTruth out;
  out.posed.view = {intr, view.pose};
  out.posed.image = Image(width, height, 3);
  out.depth = Image(width, height, 1);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Ray ray = ray_through_pixel(intr, view.pose, Vec2(x + 0.5, y + 0.5));
      const Hit hit = trace(scene, ray);
      const Vec3 c = shade(scene, hit);
      for (int k = 0; k < 3; ++k) out.posed.image.at(x, y, k) = static_cast<float>(c[k]);
      out.depth.at(x, y) = static_cast<float>(hit.t);
    }
  }
  return out;
}

inline PosedImage render_view(const Scene& scene, const CameraView& view, int width, int height) {
  return render_ground_truth(scene, view, width, height).posed;
}

// ---------------------------------------------------------------------------
// Posed image datasets

struct PosedImageSet {
  std::string scene_id;
  std::vector<PosedImage> images;
  std::vector<std::string> split;  // optional, parallel to images

  std::size_t size() const { return images.size(); }
};

class DatasetError : public Error {
 public:
  enum class Kind { missing_manifest, malformed_manifest, count_mismatch, non_orthonormal_rotation, missing_image };
  DatasetError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr int kManifestSchemaVersion = 1;

inline std::string frame_file_name(std::size_t index) {
  std::ostringstream os;
  os << "images/" << std::setw(6) << std::setfill('0') << index << ".png";
  return os.str();
}

/// Writes `images/{index:06d}.png` plus `manifest.json`. All images must share intrinsics.
inline void write_posed_dataset(const PosedImageSet& set, const std::filesystem::path& dir) {
  require(!set.images.empty(), "write_posed_dataset: empty set");
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  const Intrinsics& intr = set.images.front().view.intrinsics;
  nlohmann::json manifest;
  manifest["schema_version"] = kManifestSchemaVersion;
  manifest["scene_id"] = set.scene_id;
  manifest["units"] = "metres";
  manifest["intrinsics"] = {{"fx", intr.fx}, {"fy", intr.fy}, {"cx", intr.cx},
                            {"cy", intr.cy}, {"width", intr.width}, {"height", intr.height}};
  manifest["num_frames"] = set.images.size();
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const PosedImage& pi = set.images[i];
    require(pi.view.intrinsics == intr, "write_posed_dataset: images must share intrinsics");
    const std::string file = frame_file_name(i);
    write_png(dir / file, pi.image);
    const Mat4 m = pi.view.pose.matrix();
    std::vector<double> flat;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) flat.push_back(m(r, c));
    nlohmann::json frame = {{"file", file}, {"camera_to_world", flat}};
    if (i < set.split.size()) frame["split"] = set.split[i];
    frames.push_back(frame);
  }
  manifest["frames"] = frames;
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot write manifest in " + dir.string());
    os << manifest.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, dir / "manifest.json", ec);
  if (ec) throw IoError("cannot finalise manifest in " + dir.string() + ": " + ec.message());
}

/// Loads a posed image directory and validates its invariants.
inline PosedImageSet load_posed_dataset(const std::filesystem::path& dir) {
  using Kind = DatasetError::Kind;
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw DatasetError(Kind::missing_manifest, "missing manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    std::ifstream is(manifest_path);
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(Kind::malformed_manifest, "malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  PosedImageSet set;
  try {
    set.scene_id = manifest.value("scene_id", dir.filename().string());
    const auto& ji = manifest.at("intrinsics");
    Intrinsics intr{ji.at("fx").get<double>(), ji.at("fy").get<double>(), ji.at("cx").get<double>(),
                    ji.at("cy").get<double>(), ji.at("width").get<int>(),  ji.at("height").get<int>()};
    if (!intr.valid()) throw DatasetError(Kind::malformed_manifest, "invalid intrinsics in " + manifest_path.string());
    const auto& frames = manifest.at("frames");
    if (manifest.contains("num_frames") && manifest["num_frames"].get<std::size_t>() != frames.size())
      throw DatasetError(Kind::count_mismatch, "manifest declares " + manifest["num_frames"].dump() + " frames but lists " +
                                                   std::to_string(frames.size()));
    if (std::filesystem::is_directory(dir / "images")) {
      std::size_t png_count = 0;
      for (const auto& entry : std::filesystem::directory_iterator(dir / "images"))
        if (entry.path().extension() == ".png") ++png_count;
      if (png_count != frames.size())
        throw DatasetError(Kind::count_mismatch, std::to_string(frames.size()) + " poses but " +
                                                     std::to_string(png_count) + " images in " +
                                                     (dir / "images").string());
    }
    for (const auto& frame : frames) {
      const std::string file = frame.at("file").get<std::string>();
      const auto flat = frame.at("camera_to_world").get<std::vector<double>>();
      if (flat.size() != 16) throw DatasetError(Kind::malformed_manifest, "camera_to_world must have 16 numbers: " + file);
      Mat4 m;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m(r, c) = flat[r * 4 + c];
      Pose pose = Pose::from_matrix(m);
      if (!pose.is_rotation(1e-4))
        throw DatasetError(Kind::non_orthonormal_rotation, "non-orthonormal rotation for frame " + file);
      const auto image_path = dir / file;
      if (!std::filesystem::exists(image_path))
        throw DatasetError(Kind::missing_image, "missing image file: " + file);
      PosedImage pi{read_png(image_path), {intr, pose}};
      if (pi.image.width != intr.width || pi.image.height != intr.height)
        throw DatasetError(Kind::malformed_manifest, "image size does not match intrinsics: " + file);
      set.images.push_back(std::move(pi));
      if (frame.contains("split")) set.split.push_back(frame["split"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(Kind::malformed_manifest, "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!set.split.empty() && set.split.size() != set.images.size()) set.split.clear();
  return set;
}

/// Renders `n_views` Fibonacci-lattice hemisphere views of a scene and persists them.
/// Returned images are 8-bit quantised so that they equal what a reload yields.
inline PosedImageSet generate_dataset(const Scene& scene, int n_views, int width, int height,
                                      const std::filesystem::path& out_dir, const RigConfig& rig = {}) {
  require(n_views >= 2, "generate_dataset: need at least 2 views");
  PosedImageSet set;
  set.scene_id = "scene_" + std::to_string(scene.seed) + "_" + to_string(scene.difficulty);
  const Intrinsics intr = rig.intrinsics(width, height);
  for (const auto& v : fibonacci_hemisphere(n_views, rig.hemisphere_radius, rig.centre, rig.min_elevation)) {
    PosedImage pi = render_view(scene, {intr, pose_from_spherical(v)}, width, height);
    pi.image = quantize_8bit(pi.image);
    set.images.push_back(std::move(pi));
  }
  if (!out_dir.empty()) write_posed_dataset(set, out_dir);
  return set;
}

// ---------------------------------------------------------------------------
// Measurement sources used by missions

/// Something a mission can point a camera at.
class MeasurementSource {
 public:
  virtual ~MeasurementSource() = default;
  virtual const RigConfig& rig() const = 0;
  virtual PosedImage measure(const SphericalViewpoint& view) const = 0;
  /// Ground truth at an arbitrary resolution, for evaluation harnesses.
  virtual Image ground_truth(const SphericalViewpoint& view, int width, int height) const = 0;
  /// Finite candidate set for discrete missions; empty for the continuous hemisphere.
  virtual std::vector<SphericalViewpoint> discrete_views() const { return {}; }
};

/// Live procedural scene: every viewpoint can be measured.
class SceneMeasurement : public MeasurementSource {
 public:
  SceneMeasurement(Scene scene, RigConfig rig, int width, int height)
      : scene_(std::move(scene)), rig_(rig), width_(width), height_(height) {}

  const RigConfig& rig() const override { return rig_; }
  const Scene& scene() const { return scene_; }

  PosedImage measure(const SphericalViewpoint& view) const override {
    PosedImage pi = render_view(scene_, {rig_.intrinsics(width_, height_), pose_from_spherical(view)}, width_, height_);
    pi.image = quantize_8bit(pi.image);
    return pi;
  }
  Image ground_truth(const SphericalViewpoint& view, int width, int height) const override {
    return render_view(scene_, {rig_.intrinsics(width, height), pose_from_spherical(view)}, width, height).image;
  }

 private:
  Scene scene_;
  RigConfig rig_;
  int width_;
  int height_;
};

/// A recorded posed image set whose frames are the only measurable views.
class DatasetMeasurement : public MeasurementSource {
 public:
  DatasetMeasurement(PosedImageSet set, RigConfig rig) : set_(std::move(set)), rig_(rig) {
    require(!set_.images.empty(), "DatasetMeasurement: empty dataset");
    for (const auto& pi : set_.images) {
      SphericalViewpoint v = spherical_from_pose(pi.view.pose, rig_.centre);
      v.radius = rig_.hemisphere_radius;
      v.elevation = std::clamp(v.elevation, 0.0, std::numbers::pi / 2);
      views_.push_back(v);
    }
  }

  const RigConfig& rig() const override { return rig_; }
  std::vector<SphericalViewpoint> discrete_views() const override { return views_; }

  PosedImage measure(const SphericalViewpoint& view) const override { return set_.images[index_of(view)]; }
  Image ground_truth(const SphericalViewpoint& view, int width, int height) const override {
    const Image& img = set_.images[index_of(view)].image;
    if (img.width == width && img.height == height) return img;
    return resize_area(img, width, height);
  }

  std::size_t index_of(const SphericalViewpoint& view) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < views_.size(); ++i) {
      const double d = angular_distance(views_[i], view);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    require(best_d < 1e-9, "DatasetMeasurement: viewpoint is not one of the recorded frames");
    return best;
  }

 private:
  PosedImageSet set_;
  RigConfig rig_;
  std::vector<SphericalViewpoint> views_;
};

}  // namespace nbv
