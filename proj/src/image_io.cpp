#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "pnerf/error.hpp"
#include "pnerf/image.hpp"

namespace pnerf {

void write_pfr(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write raster " + path.string());
  out << "PFR1\n" << image.width << ' ' << image.height << ' ' << image.channels << '\n';
  detail::write_f64_le(out, {image.data.data(), static_cast<std::size_t>(image.data.size())});
  if (!out) throw IoError("failed writing raster " + path.string());
}

Image read_pfr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open raster " + path.string());
  std::string magic;
  if (!std::getline(in, magic) || magic != "PFR1") throw FormatError("raster " + path.string() + ": bad magic");
  std::string dims;
  if (!std::getline(in, dims)) throw FormatError("raster " + path.string() + ": missing dimensions");
  int w = 0, h = 0, c = 0;
  if (std::sscanf(dims.c_str(), "%d %d %d", &w, &h, &c) != 3 || w < 1 || h < 1 || c < 1) {
    throw FormatError("raster " + path.string() + ": bad dimensions");
  }
  Image image(w, h, c);
  if (!detail::read_f64_le(in, {image.data.data(), static_cast<std::size_t>(image.data.size())})) {
    throw FormatError("raster " + path.string() + ": truncated data");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("raster " + path.string() + ": trailing bytes");
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image, double peak) {
  if (image.channels != 1 && image.channels != 3) throw UsageError("write_png: needs 1 or 3 channels");
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw IoError("cannot write image " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed for " + path.string());
  }
  std::vector<png_byte> pixels(static_cast<std::size_t>(image.data.size()));
  for (Index i = 0; i < image.data.size(); ++i) {
    const double v = std::isfinite(image.data(i)) ? image.data(i) / peak : 0.0;
    pixels[i] = static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  std::vector<png_bytep> rows(image.height);
  for (int r = 0; r < image.height; ++r) rows[r] = pixels.data() + std::size_t(r) * image.width * image.channels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing image " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace pnerf
