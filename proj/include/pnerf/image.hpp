#pragma once

#include <filesystem>

#include "pnerf/types.hpp"

namespace pnerf {

/// Row-major raster with interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  Eigen::ArrayXd data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0) : width(w), height(h), channels(c), data(Eigen::ArrayXd::Constant(Index(w) * h * c, fill)) {}

  Index index(int row, int col, int ch = 0) const { return (Index(row) * width + col) * channels + ch; }
  double& at(int row, int col, int ch = 0) { return data(index(row, col, ch)); }
  double at(int row, int col, int ch = 0) const { return data(index(row, col, ch)); }
  Index pixel_count() const { return Index(width) * height; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
};

/// Float raster: "PFR1\n", then "width height channels\n", then little-endian float64 values.
void write_pfr(const std::filesystem::path& path, const Image& image);
Image read_pfr(const std::filesystem::path& path);

/// 8-bit PNG of a 1- or 3-channel image; values are scaled by 255 / peak and clamped.
void write_png(const std::filesystem::path& path, const Image& image, double peak = 1.0);

}  // namespace pnerf
