#pragma once

// Map files. PFM (float32, little-endian, rows bottom to top) for depth with the
// background stored as 0; PGM P5 for silhouettes; 8-bit PNG through libpng for
// normals and colors, with normals stored as (n + 1) / 2 and background black.

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "difftrace/image.hpp"
#include "difftrace/shading.hpp"

namespace difftrace {

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

/// Whitespace-separated header tokens of the netpbm family, with '#' comments.
class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, std::string path) : b_(bytes), path_(std::move(path)) {}

  std::string token() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(b_[pos_])) ++pos_;
    if (start == pos_) fail("unexpected end of header", start);
    return std::string(b_.begin() + static_cast<std::ptrdiff_t>(start), b_.begin() + static_cast<std::ptrdiff_t>(pos_));
  }

  long integer(const char* what) {
    skip_space();
    const std::size_t at = pos_;
    const std::string t = token();
    try {
      std::size_t used = 0;
      const long v = std::stol(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      fail(std::string("expected integer ") + what + ", got '" + t + "'", at);
    }
  }

  double real(const char* what) {
    skip_space();
    const std::size_t at = pos_;
    const std::string t = token();
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      fail(std::string("expected number ") + what + ", got '" + t + "'", at);
    }
  }

  /// Consumes the single whitespace byte that ends the header.
  std::size_t end_of_header() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) fail("header must end with one whitespace byte", pos_);
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw IoError(path_ + ": malformed header at byte " + std::to_string(at) + ": " + msg);
  }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline unsigned char to_byte(double v) {
  if (!std::isfinite(v)) v = 0.0;
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

// --- PFM ----------------------------------------------------------------------

/// 1 channel writes "Pf", 3 channels "PF". Non-finite values are stored as 0.
inline void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ConfigError("PFM supports 1 or 3 channels");
  std::ostringstream out;
  out << (img.channels == 1 ? "Pf" : "PF") << '\n' << img.width << ' ' << img.height << '\n' << "-1.0\n";
  std::string bytes = out.str();
  bytes.reserve(bytes.size() + img.data.size() * 4);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const double v = img.at(x, y, c);
        const float f = std::isfinite(v) ? static_cast<float>(v) : 0.0f;
        std::uint32_t u = std::bit_cast<std::uint32_t>(f);
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
        char raw[4];
        std::memcpy(raw, &u, 4);
        bytes.append(raw, 4);
      }
    }
  }
  detail::write_file(path, bytes);
}

inline Image read_pfm(const std::string& path) {
  const std::vector<unsigned char> bytes = detail::read_file(path);
  detail::HeaderReader h(bytes, path);
  const std::string magic = h.token();
  int channels = 0;
  if (magic == "Pf") {
    channels = 1;
  } else if (magic == "PF") {
    channels = 3;
  } else {
    h.fail("bad magic '" + magic + "' (expected Pf or PF)", 0);
  }
  const long w = h.integer("width");
  const long hgt = h.integer("height");
  const double scale = h.real("scale");
  if (w < 1 || hgt < 1) throw IoError(path + ": malformed header: non-positive size");
  if (scale == 0.0) throw IoError(path + ": malformed header: scale must be nonzero");
  const std::size_t start = h.end_of_header();
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(hgt) * static_cast<std::size_t>(channels) * 4;
  if (bytes.size() - start < need) {
    throw IoError(path + ": truncated data, " + std::to_string(need) + " bytes expected after byte " + std::to_string(start));
  }
  const bool little = scale < 0.0;
  Image img = Image::zeros(static_cast<int>(w), static_cast<int>(hgt), channels);
  std::size_t pos = start;
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < channels; ++c) {
        std::uint32_t u = 0;
        std::memcpy(&u, bytes.data() + pos, 4);
        pos += 4;
        const bool swap = little != (std::endian::native == std::endian::little);
        if (swap) u = __builtin_bswap32(u);
        img.at(x, y, c) = static_cast<double>(std::bit_cast<float>(u));
      }
    }
  }
  return img;
}

/// Depth map: background (+inf) written as 0.
inline void write_depth_pfm(const std::string& path, const std::vector<double>& depth, int width, int height) {
  if (depth.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw ConfigError("depth map size does not match its resolution");
  }
  Image img{width, height, 1, depth};
  for (double& v : img.data) {
    if (!std::isfinite(v)) v = 0.0;
  }
  write_pfm(path, img);
}

/// Depth map with zeros turned back into the +inf background sentinel.
inline Image read_depth_pfm(const std::string& path) {
  Image img = read_pfm(path);
  if (img.channels != 1) throw IoError(path + ": depth PFM must have one channel");
  for (double& v : img.data) {
    if (v == 0.0) v = kBackgroundDepth;
  }
  return img;
}

// --- PGM ----------------------------------------------------------------------

/// Binary P5, 8-bit, values in [0, 1].
inline void write_pgm(const std::string& path, const Image& img) {
  if (img.channels != 1) throw ConfigError("PGM needs a single channel");
  std::ostringstream out;
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::string bytes = out.str();
  for (double v : img.data) bytes.push_back(static_cast<char>(detail::to_byte(v)));
  detail::write_file(path, bytes);
}

inline Image read_pgm(const std::string& path) {
  const std::vector<unsigned char> bytes = detail::read_file(path);
  detail::HeaderReader h(bytes, path);
  const std::string magic = h.token();
  if (magic != "P5") h.fail("bad magic '" + magic + "' (expected P5)", 0);
  const long w = h.integer("width");
  const long hgt = h.integer("height");
  const long maxval = h.integer("maxval");
  if (w < 1 || hgt < 1) throw IoError(path + ": malformed header: non-positive size");
  if (maxval < 1 || maxval > 65535) throw IoError(path + ": malformed header: maxval out of range");
  const std::size_t start = h.end_of_header();
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(hgt);
  if (bytes.size() - start < n * bpp) throw IoError(path + ": truncated data after byte " + std::to_string(start));
  Image img = Image::zeros(static_cast<int>(w), static_cast<int>(hgt), 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = start + i * bpp;
    const unsigned v = bpp == 1 ? bytes[at] : (static_cast<unsigned>(bytes[at]) << 8U) | bytes[at + 1];
    img.data[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

inline void write_mask_pgm(const std::string& path, const std::vector<std::uint8_t>& mask, int width, int height) {
  Image img = Image::zeros(width, height, 1);
  if (mask.size() != img.pixels()) throw ConfigError("mask size does not match its resolution");
  for (std::size_t i = 0; i < mask.size(); ++i) img.data[i] = mask[i] ? 1.0 : 0.0;
  write_pgm(path, img);
}

// --- PNG ----------------------------------------------------------------------

/// 8-bit gray or RGB, values in [0, 1] clamped.
inline void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ConfigError("PNG writer supports 1 or 3 channels");
  std::vector<unsigned char> buf(img.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = detail::to_byte(img.data[i]);
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    throw IoError("cannot write PNG '" + path + "': " + msg);
  }
}

inline Image read_png(const std::string& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) {
    throw IoError("cannot read PNG '" + path + "': " + std::string(pi.message));
  }
  const bool gray = (pi.format & PNG_FORMAT_FLAG_COLOR) == 0;
  pi.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    throw IoError("cannot decode PNG '" + path + "': " + msg);
  }
  Image img = Image::zeros(static_cast<int>(pi.width), static_cast<int>(pi.height), gray ? 1 : 3);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0;
  return img;
}

/// Normal map to RGB: (n + 1) / 2 on valid pixels, black elsewhere.
inline Image encode_normals(const std::vector<Vec3>& normal, const std::vector<std::uint8_t>& valid, int width, int height) {
  Image img = Image::zeros(width, height, 3);
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    if (!valid[i]) continue;
    for (int c = 0; c < 3; ++c) img.data[3 * i + static_cast<std::size_t>(c)] = 0.5 * (normal[i][c] + 1.0);
  }
  return img;
}

/// Inverse of encode_normals up to 8-bit quantization; black pixels decode as invalid.
inline void decode_normals(const Image& img, std::vector<Vec3>& normal, std::vector<std::uint8_t>& valid) {
  if (img.channels != 3) throw IoError("normal image must be RGB");
  normal.assign(img.pixels(), Vec3::Zero());
  valid.assign(img.pixels(), 0);
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    const Vec3 rgb(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
    if (rgb.isZero()) continue;
    const Vec3 n = 2.0 * rgb - Vec3::Ones();
    if (n.norm() == 0.0) continue;
    normal[i] = n.normalized();
    valid[i] = 1;
  }
}

inline void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

}  // namespace difftrace
