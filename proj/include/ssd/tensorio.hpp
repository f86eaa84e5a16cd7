// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <png.h>

#include "ssd/errors.hpp"
#include "ssd/tensor.hpp"

namespace ssd {

/// Images are {height, width, channels} tensors with channels 1 or 3 and values in [-1, 1].
inline void check_image_shape(const Shape& shape) {
  if (shape.size() != 3 || (shape[2] != 1 && shape[2] != 3)) {
    throw ShapeError("image tensors are {H, W, 1|3}, got " + shape_string(shape));
  }
}

inline double byte_to_value(std::uint8_t u) { return 2.0 * (static_cast<double>(u) / 255.0) - 1.0; }

inline std::uint8_t value_to_byte(double v) {
  const double c = std::clamp(v, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * (c + 1.0) / 2.0));
}

/// Reads an 8-bit grayscale or RGB PNG. Palette, 16-bit and alpha images are rejected.
inline Tensor load_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    throw IoError("cannot read PNG '" + path.string() + "': " + image.message);
  }
  const png_uint_32 fmt = image.format;
  auto reject = [&](const char* why) {
    png_image_free(&image);
    throw IoError("unsupported PNG '" + path.string() + "': " + why);
  };
  if ((fmt & PNG_FORMAT_FLAG_COLORMAP) != 0) reject("palette images are not supported");
  if ((fmt & PNG_FORMAT_FLAG_LINEAR) != 0) reject("only 8-bit images are supported");
  if ((fmt & PNG_FORMAT_FLAG_ALPHA) != 0) reject("alpha channels are not supported");

  const bool color = (fmt & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t channels = color ? 3 : 1;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  Tensor out({image.height, image.width, channels});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = byte_to_value(buffer[i]);
  return out;
}

inline void save_png(const Tensor& img, const std::filesystem::path& path) {
  check_image_shape(img.shape());
  if (!all_finite(img)) throw NumericError("refusing to save an image with non-finite values");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.height = static_cast<png_uint_32>(img.shape()[0]);
  image.width = static_cast<png_uint_32>(img.shape()[1]);
  image.format = img.shape()[2] == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) buffer[i] = value_to_byte(img[i]);
  if (png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write PNG '" + path.string() + "': " + msg);
  }
}

// ---------------------------------------------------------------------------
// Raw tensors: "SSDT", u16 version, u8 ndim, u32 dims, f32 payload; little endian.
// ---------------------------------------------------------------------------

inline constexpr std::array<std::uint8_t, 4> kRawMagic{'S', 'S', 'D', 'T'};
inline constexpr std::uint16_t kRawVersion = 1;

inline std::size_t raw_header_size(std::size_t ndim) { return 4 + 2 + 1 + 4 * ndim; }

inline std::vector<std::uint8_t> encode_raw(const Tensor& t) {
  const Shape& shape = t.shape();
  if (shape.empty()) throw ShapeError("raw tensors need at least one dimension");
  if (shape.size() > 255) throw ShapeError("raw tensors support at most 255 dimensions");
  std::vector<std::uint8_t> out(kRawMagic.begin(), kRawMagic.end());
  auto put = [&](std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  };
  put(kRawVersion, 2);
  put(shape.size(), 1);
  for (auto d : shape) {
    if (d > 0xffffffffu) throw ShapeError("raw tensor dimension exceeds u32");
    put(d, 4);
  }
  for (double v : t.values()) put(std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
  return out;
}

inline Tensor decode_raw(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw IoError("raw tensor truncated at byte " + std::to_string(pos));
  };
  auto get = [&](int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int b = 0; b < n; ++b) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * b);
    return v;
  };
  need(4);
  if (!std::equal(kRawMagic.begin(), kRawMagic.end(), bytes.begin())) throw IoError("not an SSDT file: bad magic");
  pos = 4;
  const auto version = get(2);
  if (version != kRawVersion) throw IoError("unsupported SSDT version " + std::to_string(version));
  const auto ndim = get(1);
  if (ndim == 0) throw ShapeError("raw tensor has no dimensions");
  Shape shape;
  for (std::uint64_t i = 0; i < ndim; ++i) {
    const auto d = get(4);
    if (d == 0) throw ShapeError("raw tensor has a zero dimension");
    shape.push_back(static_cast<std::size_t>(d));
  }
  const std::size_t count = shape_size(shape);
  if (count > (bytes.size() - pos) / 4) throw IoError("raw tensor payload truncated");
  if (bytes.size() - pos != 4 * count) throw IoError("raw tensor has trailing bytes");
  Tensor t(shape);
  for (std::size_t i = 0; i < count; ++i) t[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get(4)));
  return t;
}

inline void save_raw(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_raw(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline Tensor load_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_raw(bytes);
}

}  // namespace ssd
