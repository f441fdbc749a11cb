#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "difftrace/error.hpp"

namespace difftrace {

/// Row-major image, row 0 at the top, interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  static Image zeros(int w, int h, int c = 1) {
    if (w < 0 || h < 0 || c < 1) throw ConfigError("bad image dimensions");
    return Image{w, h, c, std::vector<double>(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), 0.0)};
  }

  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) + static_cast<std::size_t>(c);
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
};

/// Mean over channels.
inline Image to_grayscale(const Image& img) {
  if (img.channels == 1) return img;
  Image g = Image::zeros(img.width, img.height, 1);
  for (std::size_t p = 0; p < img.pixels(); ++p) {
    double acc = 0.0;
    for (int c = 0; c < img.channels; ++c) acc += img.data[p * static_cast<std::size_t>(img.channels) + static_cast<std::size_t>(c)];
    g.data[p] = acc / img.channels;
  }
  return g;
}

struct BilinearSample {
  double value = 0.0;
  double du = 0.0;  // d value / d u
  double dv = 0.0;
};

/// Bilinear lookup at continuous pixel coordinates (pixel centers at k + 0.5).
/// Coordinates are clamped to the outermost pixel centers; the derivative along a
/// clamped axis is zero.
inline BilinearSample sample_bilinear(const Image& img, double u, double v, int channel = 0) {
  if (img.width < 1 || img.height < 1) throw ConfigError("sampling an empty image");
  double x = u - 0.5;
  double y = v - 0.5;
  const double xmax = img.width - 1;
  const double ymax = img.height - 1;
  const bool clamp_x = x <= 0.0 || x >= xmax;
  const bool clamp_y = y <= 0.0 || y >= ymax;
  x = std::clamp(x, 0.0, xmax);
  y = std::clamp(y, 0.0, ymax);
  const int x0 = std::min(static_cast<int>(std::floor(x)), std::max(0, img.width - 2));
  const int y0 = std::min(static_cast<int>(std::floor(y)), std::max(0, img.height - 2));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  const double v00 = img.at(x0, y0, channel);
  const double v10 = img.at(x1, y0, channel);
  const double v01 = img.at(x0, y1, channel);
  const double v11 = img.at(x1, y1, channel);
  BilinearSample s;
  s.value = (1 - ax) * (1 - ay) * v00 + ax * (1 - ay) * v10 + (1 - ax) * ay * v01 + ax * ay * v11;
  if (!clamp_x && x1 != x0) s.du = (1 - ay) * (v10 - v00) + ay * (v11 - v01);
  if (!clamp_y && y1 != y0) s.dv = (1 - ax) * (v01 - v00) + ax * (v11 - v10);
  return s;
}

}  // namespace difftrace
