#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gcnn/error.hpp"
#include "gcnn/tensor.hpp"

#ifdef GCNN_WITH_PNG
#include <png.h>
#endif

namespace gcnn {

/// 8-bit grayscale image, row-major.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}
  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool operator==(const Image8&) const = default;
};

namespace detail {
inline std::size_t pgm_header_int(std::istream& is) {
  int ch = is.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = is.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = is.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw FormatError("malformed PGM header");
  std::size_t v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    ch = is.get();
  }
  return v;  // the single whitespace after the number has been consumed
}
}  // namespace detail

inline void write_pgm(const std::string& path, const Image8& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline Image8 read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path);
  char magic[2];
  if (!is.read(magic, 2) || magic[0] != 'P' || magic[1] != '5') throw FormatError(path + ": not a binary PGM (P5)");
  const std::size_t w = detail::pgm_header_int(is);
  const std::size_t h = detail::pgm_header_int(is);
  const std::size_t maxval = detail::pgm_header_int(is);
  if (maxval == 0 || maxval > 255) throw FormatError(path + ": only 8-bit PGM is supported");
  Image8 img(w, h);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size())))
    throw FormatError(path + ": truncated PGM payload");
  if (maxval != 255)
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
  return img;
}

#ifdef GCNN_WITH_PNG
inline Image8 read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw FormatError(path + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  Image8 img(image.width, image.height);
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr))
    throw FormatError(path + ": " + image.message);
  return img;
}

inline void write_png(const std::string& path, const Image8& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw IoError("cannot write " + path + ": " + image.message);
}
#endif

/// Reads .pgm, or .png when built with PNG support.
inline Image8 read_image(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError(path);
  const auto ext = std::filesystem::path(path).extension().string();
#ifdef GCNN_WITH_PNG
  if (ext == ".png") return read_png(path);
#endif
  if (ext == ".pgm") return read_pgm(path);
  throw FormatError(path + ": unsupported image extension '" + ext + "'");
}

inline void write_image(const std::string& path, const Image8& img) {
  const auto ext = std::filesystem::path(path).extension().string();
#ifdef GCNN_WITH_PNG
  if (ext == ".png") return write_png(path, img);
#endif
  if (ext == ".pgm") return write_pgm(path, img);
  throw FormatError(path + ": unsupported image extension '" + ext + "'");
}

/// 1x1xHxW tensor with pixels mapped to [-0.5, 0.5] (gray 0 -> -0.5, 255 -> 0.5).
template <typename T>
Tensor<T> image_to_tensor(const Image8& img) {
  Tensor<T> t(1, 1, img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<T>(img.pixels[i]) / T(255) - T(0.5);
  return t;
}

/// Zero-pads an image on the right/bottom so both sides are multiples of `multiple`.
inline Image8 pad_to_multiple(const Image8& img, std::size_t multiple) {
  const std::size_t w = (img.width + multiple - 1) / multiple * multiple;
  const std::size_t h = (img.height + multiple - 1) / multiple * multiple;
  if (w == img.width && h == img.height) return img;
  Image8 out(w, h, 0);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, x);
  return out;
}

}  // namespace gcnn
