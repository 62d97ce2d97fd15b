#pragma once

// Raster plots: metric curves with std bands, heat maps and image panels.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "nbv/core.hpp"
#include "nbv/image.hpp"

namespace nbv::plot {

using Colour = std::array<float, 3>;

inline constexpr std::array<Colour, 6> kPalette{{{0.84f, 0.15f, 0.16f},
                                                  {0.12f, 0.47f, 0.71f},
                                                  {0.17f, 0.63f, 0.17f},
                                                  {0.58f, 0.40f, 0.74f},
                                                  {1.00f, 0.50f, 0.05f},
                                                  {0.55f, 0.34f, 0.29f}}};

namespace font {

// 5x7 glyphs, one byte per row, bit 4 = leftmost column.
struct Glyph {
  char c;
  std::array<std::uint8_t, 7> rows;
};

inline constexpr Glyph kGlyphs[] = {
    {'0', {14, 17, 19, 21, 25, 17, 14}}, {'1', {4, 12, 4, 4, 4, 4, 14}},     {'2', {14, 17, 1, 2, 4, 8, 31}},
    {'3', {30, 1, 1, 14, 1, 1, 30}},     {'4', {2, 6, 10, 18, 31, 2, 2}},    {'5', {31, 16, 30, 1, 1, 17, 14}},
    {'6', {6, 8, 16, 30, 17, 17, 14}},   {'7', {31, 1, 2, 4, 8, 8, 8}},      {'8', {14, 17, 17, 14, 17, 17, 14}},
    {'9', {14, 17, 17, 15, 1, 2, 12}},   {'A', {14, 17, 17, 31, 17, 17, 17}}, {'B', {30, 17, 17, 30, 17, 17, 30}},
    {'C', {14, 17, 16, 16, 16, 17, 14}}, {'D', {28, 18, 17, 17, 17, 18, 28}}, {'E', {31, 16, 16, 30, 16, 16, 31}},
    {'F', {31, 16, 16, 30, 16, 16, 16}}, {'G', {14, 17, 16, 23, 17, 17, 15}}, {'H', {17, 17, 17, 31, 17, 17, 17}},
    {'I', {14, 4, 4, 4, 4, 4, 14}},      {'J', {7, 2, 2, 2, 2, 18, 12}},     {'K', {17, 18, 20, 24, 20, 18, 17}},
    {'L', {16, 16, 16, 16, 16, 16, 31}}, {'M', {17, 27, 21, 21, 17, 17, 17}}, {'N', {17, 17, 25, 21, 19, 17, 17}},
    {'O', {14, 17, 17, 17, 17, 17, 14}}, {'P', {30, 17, 17, 30, 16, 16, 16}}, {'Q', {14, 17, 17, 17, 21, 18, 13}},
    {'R', {30, 17, 17, 30, 20, 18, 17}}, {'S', {15, 16, 16, 14, 1, 1, 30}},   {'T', {31, 4, 4, 4, 4, 4, 4}},
    {'U', {17, 17, 17, 17, 17, 17, 14}}, {'V', {17, 17, 17, 17, 17, 10, 4}},  {'W', {17, 17, 17, 21, 21, 21, 10}},
    {'X', {17, 17, 10, 4, 10, 17, 17}},  {'Y', {17, 17, 10, 4, 4, 4, 4}},     {'Z', {31, 1, 2, 4, 8, 16, 31}},
    {'.', {0, 0, 0, 0, 0, 12, 12}},      {'-', {0, 0, 0, 31, 0, 0, 0}},      {'_', {0, 0, 0, 0, 0, 0, 31}},
    {':', {0, 12, 12, 0, 12, 12, 0}},    {'/', {1, 1, 2, 4, 8, 16, 16}},     {'(', {2, 4, 8, 8, 8, 4, 2}},
    {')', {8, 4, 2, 2, 2, 4, 8}},        {'+', {0, 4, 4, 31, 4, 4, 0}},      {' ', {0, 0, 0, 0, 0, 0, 0}},
};

inline const Glyph* find(char c) {
  const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kGlyphs)
    if (g.c == u) return &g;
  return nullptr;
}

inline constexpr int kAdvance = 6;
inline constexpr int kHeight = 7;

}  // namespace font

/// RGB drawing surface over an Image.
class Canvas {
 public:
  Canvas(int w, int h, Colour bg = {1, 1, 1}) : img_(w, h, 3) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) set(x, y, bg);
  }

  const Image& image() const { return img_; }
  int width() const { return img_.width; }
  int height() const { return img_.height; }

  void set(int x, int y, const Colour& c, float alpha = 1.0f) {
    if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
    for (int k = 0; k < 3; ++k) img_.at(x, y, k) = (1 - alpha) * img_.at(x, y, k) + alpha * c[k];
  }

  void fill_rect(int x0, int y0, int x1, int y1, const Colour& c, float alpha = 1.0f) {
    for (int y = std::max(0, y0); y <= std::min(img_.height - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(img_.width - 1, x1); ++x) set(x, y, c, alpha);
  }

  void line(double x0, double y0, double x1, double y1, const Colour& c, int thickness = 1) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
      const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
      fill_rect(x - thickness / 2, y - thickness / 2, x + (thickness - 1) / 2, y + (thickness - 1) / 2, c);
    }
  }

  void text(int x, int y, const std::string& s, const Colour& c = {0, 0, 0}) {
    for (char ch : s) {
      if (const auto* g = font::find(ch))
        for (int r = 0; r < font::kHeight; ++r)
          for (int col = 0; col < 5; ++col)
            if (g->rows[r] & (1 << (4 - col))) set(x + col, y + r, c);
      x += font::kAdvance;
    }
  }

  static int text_width(const std::string& s) { return static_cast<int>(s.size()) * font::kAdvance; }

 private:
  Image img_;
};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> std;  // may be empty
};

/// `spacing` is the distance between neighbouring ticks; it decides the decimals.
inline std::string format_tick(double v, double spacing = 1.0) {
  int decimals = 0;
  while (decimals < 4 && spacing > 0 && spacing * std::pow(10.0, decimals) < 0.999) ++decimals;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

/// Mean curves with shaded +-std bands, axes, ticks and a legend.
inline Image line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                       const std::string& y_label, int width = 640, int height = 420) {
  require(!series.empty(), "line_plot: no series");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    require(s.x.size() == s.mean.size() && !s.x.empty(), "line_plot: malformed series '" + s.label + "'");
    require(s.std.empty() || s.std.size() == s.mean.size(), "line_plot: std length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double sd = s.std.empty() ? 0.0 : s.std[i];
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.mean[i] - sd);
      ymax = std::max(ymax, s.mean[i] + sd);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax - ymin < 1e-9) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  Canvas cv(width, height);
  const int left = 60, right = width - 20, top = 30, bottom = height - 50;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

  cv.text((width - Canvas::text_width(title)) / 2, 10, title);
  cv.text((left + right - Canvas::text_width(x_label)) / 2, height - 18, x_label);
  cv.text(4, top - 14, y_label);

  const Colour grid{0.85f, 0.85f, 0.85f}, axis{0, 0, 0};
  for (int k = 0; k <= 5; ++k) {
    const double y = ymin + (ymax - ymin) * k / 5;
    cv.line(left, py(y), right, py(y), grid);
    const std::string t = format_tick(y, (ymax - ymin) / 5);
    cv.text(left - 6 - Canvas::text_width(t), static_cast<int>(py(y)) - 3, t);
  }
  std::vector<double> xs = series.front().x;
  const std::size_t stride = std::max<std::size_t>(1, xs.size() / 10);
  for (std::size_t i = 0; i < xs.size(); i += stride) {
    const std::string t = format_tick(xs[i]);
    cv.line(px(xs[i]), bottom, px(xs[i]), bottom + 4, axis);
    cv.text(static_cast<int>(px(xs[i])) - Canvas::text_width(t) / 2, bottom + 8, t);
  }
  cv.line(left, top, left, bottom, axis);
  cv.line(left, bottom, right, bottom, axis);

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& sr = series[s];
    const Colour col = kPalette[s % kPalette.size()];
    if (!sr.std.empty())
      for (std::size_t i = 0; i + 1 < sr.x.size(); ++i) {
        const double xa = px(sr.x[i]), xb = px(sr.x[i + 1]);
        for (int x = static_cast<int>(std::ceil(xa)); x <= static_cast<int>(std::floor(xb)); ++x) {
          const double t = (x - xa) / std::max(1e-9, xb - xa);
          const double m = sr.mean[i] + t * (sr.mean[i + 1] - sr.mean[i]);
          const double d = sr.std[i] + t * (sr.std[i + 1] - sr.std[i]);
          for (int y = static_cast<int>(py(m + d)); y <= static_cast<int>(py(m - d)); ++y) cv.set(x, y, col, 0.18f);
        }
      }
    for (std::size_t i = 0; i + 1 < sr.x.size(); ++i)
      cv.line(px(sr.x[i]), py(sr.mean[i]), px(sr.x[i + 1]), py(sr.mean[i + 1]), col, 2);
    for (std::size_t i = 0; i < sr.x.size(); ++i)
      cv.fill_rect(static_cast<int>(px(sr.x[i])) - 2, static_cast<int>(py(sr.mean[i])) - 2,
                   static_cast<int>(px(sr.x[i])) + 2, static_cast<int>(py(sr.mean[i])) + 2, col);
  }

  // Legend, bottom right.
  int lw = 0;
  for (const auto& s : series) lw = std::max(lw, Canvas::text_width(s.label));
  const int lx = right - lw - 34, ly = bottom - 14 * static_cast<int>(series.size()) - 8;
  cv.fill_rect(lx - 4, ly - 4, right - 4, bottom - 6, {1, 1, 1}, 0.9f);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const int y = ly + 14 * static_cast<int>(s);
    const Colour col = kPalette[s % kPalette.size()];
    cv.fill_rect(lx, y + 2, lx + 18, y + 4, col);
    cv.text(lx + 24, y, series[s].label);
  }
  return cv.image();
}

/// Single-channel map to RGB with a black-red-yellow-white ramp over [0, vmax].
inline Image heat_map(const Image& map, double vmax) {
  require(vmax > 0, "heat_map: vmax must be positive");
  Image out(map.width, map.height, 3);
  for (std::size_t p = 0; p < map.pixel_count(); ++p) {
    double v = 0;
    for (int c = 0; c < map.channels; ++c) v += map.data[p * map.channels + c];
    const float t = static_cast<float>(std::clamp(v / map.channels / vmax, 0.0, 1.0));
    out.data[p * 3] = std::min(1.0f, 3 * t);
    out.data[p * 3 + 1] = std::clamp(3 * t - 1, 0.0f, 1.0f);
    out.data[p * 3 + 2] = std::clamp(3 * t - 2, 0.0f, 1.0f);
  }
  return out;
}

/// Equal-height RGB images side by side, each scaled by an integer factor, captioned.
inline Image panels(const std::vector<std::pair<std::string, Image>>& items, int scale = 4) {
  require(!items.empty(), "panels: nothing to draw");
  const int h = items.front().second.height;
  int w = 0;
  for (const auto& [label, img] : items) {
    require(img.height == h && img.channels == 3, "panels: images must be RGB of equal height");
    w += img.width * scale + 8;
  }
  Canvas cv(w + 8, h * scale + 28);
  int x0 = 8;
  for (const auto& [label, img] : items) {
    for (int y = 0; y < h * scale; ++y)
      for (int x = 0; x < img.width * scale; ++x)
        cv.set(x0 + x, 20 + y, {img.at(x / scale, y / scale, 0), img.at(x / scale, y / scale, 1), img.at(x / scale, y / scale, 2)});
    cv.text(x0, 6, label);
    x0 += img.width * scale + 8;
  }
  return cv.image();
}

}  // namespace nbv::plot
