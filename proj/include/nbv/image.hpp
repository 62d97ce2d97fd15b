#pragma once

// RGB float images and 8-bit PNG persistence.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nbv/core.hpp"

namespace nbv {

class IoError : public Error {
 public:
  using Error::Error;
};

/// Row-major, channel-interleaved image of `channels` floats per pixel.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c = 3, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool operator==(const Image&) const = default;
};

inline std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

/// Writes a 1- or 3-channel image as 8-bit PNG; values are clamped to [0,1].
inline void write_png(const std::filesystem::path& path, const Image& img) {
  require(img.channels == 1 || img.channels == 3, "write_png: only 1 or 3 channels supported");
  require(img.width > 0 && img.height > 0, "write_png: empty image");
  std::vector<std::uint8_t> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);

  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&desc, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    std::string msg = desc.message;
    png_image_free(&desc);
    throw IoError("cannot write PNG " + path.string() + ": " + msg);
  }
}

/// Reads any PNG into a 3-channel float image in [0,1].
inline Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing image file: " + path.string());
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&desc, path.string().c_str())) {
    std::string msg = desc.message;
    png_image_free(&desc);
    throw IoError("cannot read PNG " + path.string() + ": " + msg);
  }
  desc.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, bytes.data(), 0, nullptr)) {
    std::string msg = desc.message;
    png_image_free(&desc);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image img(static_cast<int>(desc.width), static_cast<int>(desc.height), 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0f;
  return img;
}

/// Rounds every value to the nearest 8-bit level, i.e. what a PNG round trip yields.
inline Image quantize_8bit(const Image& img) {
  Image out = img;
  for (auto& v : out.data) v = to_byte(v) / 255.0f;
  return out;
}

/// Box-filter resampling (used for ground truth at coarser evaluation resolutions).
inline Image resize_area(const Image& src, int width, int height) {
  require(width > 0 && height > 0, "resize_area: empty target");
  Image dst(width, height, src.channels);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx, y0 = y * sy, y1 = (y + 1) * sy;
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int yy = static_cast<int>(y0); yy < std::min(src.height, static_cast<int>(std::ceil(y1))); ++yy) {
          const double wy = std::min(y1, yy + 1.0) - std::max(y0, static_cast<double>(yy));
          for (int xx = static_cast<int>(x0); xx < std::min(src.width, static_cast<int>(std::ceil(x1))); ++xx) {
            const double wx = std::min(x1, xx + 1.0) - std::max(x0, static_cast<double>(xx));
            acc += wx * wy * src.at(xx, yy, c);
            wsum += wx * wy;
          }
        }
        dst.at(x, y, c) = static_cast<float>(acc / wsum);
      }
    }
  }
  return dst;
}

}  // namespace nbv
