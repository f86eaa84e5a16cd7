// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include <png.h>

#include "support.hpp"

using namespace ssd;

namespace {

void write_png_raw(const std::filesystem::path& path, png_uint_32 format, const void* buffer,
                   const void* colormap = nullptr, int colormap_entries = 0) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = 2;
  image.height = 2;
  image.format = format;
  image.colormap_entries = static_cast<png_uint_32>(colormap_entries);
  ASSERT_NE(png_image_write_to_file(&image, path.c_str(), 0, buffer, 0, colormap), 0) << image.message;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Pixels, ByteMapping) {
  EXPECT_EQ(byte_to_value(255), 1.0);
  EXPECT_EQ(byte_to_value(0), -1.0);
  EXPECT_NEAR(byte_to_value(128), 0.003922, 1e-6);
  EXPECT_EQ(value_to_byte(1.0), 255);
  EXPECT_EQ(value_to_byte(-1.0), 0);
  EXPECT_EQ(value_to_byte(7.0), 255);
  EXPECT_EQ(value_to_byte(-7.0), 0);
  for (int u = 0; u < 256; ++u) EXPECT_EQ(value_to_byte(byte_to_value(static_cast<std::uint8_t>(u))), u);
}

TEST(Png, RoundTripWithinQuantization) {
  const auto dir = testkit::temp_dir("png");
  for (std::size_t c : {1u, 3u}) {
    Tensor img = testkit::random_tensor({5, 7, c}, c, 0.5);
    for (auto& v : img.values()) v = std::clamp(v, -1.0, 1.0);
    const auto path = dir / ("img" + std::to_string(c) + ".png");
    save_png(img, path);
    const Tensor back = load_png(path);
    ASSERT_EQ(back.shape(), img.shape());
    EXPECT_LE(max_abs_diff(back, img), 2.0 / 255.0 + 1e-12);
    save_png(back, path);
    EXPECT_EQ(load_png(path), back);
  }
}

TEST(Png, Rejects) {
  const auto dir = testkit::temp_dir("png_rejects");
  EXPECT_THROW(load_png(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not a png";
  EXPECT_THROW(load_png(dir / "junk.png"), IoError);

  const std::uint8_t ga[8] = {0, 255, 10, 255, 20, 255, 30, 255};
  write_png_raw(dir / "alpha.png", PNG_FORMAT_GA, ga);
  EXPECT_THROW(load_png(dir / "alpha.png"), IoError);

  const std::uint16_t deep[4] = {0, 1000, 30000, 65535};
  write_png_raw(dir / "deep.png", PNG_FORMAT_LINEAR_Y, deep);
  EXPECT_THROW(load_png(dir / "deep.png"), IoError);

  const std::uint8_t idx[4] = {0, 1, 1, 0};
  const std::uint8_t cmap[6] = {0, 0, 0, 255, 0, 0};
  write_png_raw(dir / "palette.png", PNG_FORMAT_RGB_COLORMAP, idx, cmap, 2);
  EXPECT_THROW(load_png(dir / "palette.png"), IoError);

  EXPECT_THROW(save_png(Tensor({2, 2, 2}), dir / "x.png"), ShapeError);
  EXPECT_THROW(save_png(Tensor({2, 2, 1}, std::nan("")), dir / "x.png"), NumericError);
  EXPECT_THROW(save_png(Tensor({2, 2, 1}), dir / "no_such_dir" / "x.png"), IoError);
}

TEST(Raw, HeaderAndLayout) {
  EXPECT_EQ(raw_header_size(2), 15u);
  const Tensor t({3, 4}, std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11.5});
  const auto bytes = encode_raw(t);
  ASSERT_EQ(bytes.size(), 15u + 12u * 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SSDT");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(bytes[7], 3);
  EXPECT_EQ(bytes[11], 4);
  // 11.5f = 0x41380000, little endian
  EXPECT_EQ(bytes[bytes.size() - 1], 0x41);
  EXPECT_EQ(bytes[bytes.size() - 2], 0x38);
}

TEST(Raw, BitExactRoundTrip) {
  const auto dir = testkit::temp_dir("raw");
  Tensor t = testkit::random_tensor({3, 5, 2, 2}, 9, 100.0);
  for (auto& v : t.values()) v = static_cast<float>(v);
  t[0] = -0.0;
  t[1] = static_cast<float>(1e-40);
  t[2] = std::numeric_limits<float>::max();
  save_raw(t, dir / "t.ssdt");
  const Tensor back = load_raw(dir / "t.ssdt");
  ASSERT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i]), std::bit_cast<std::uint64_t>(t[i])) << i;
  }
  save_raw(back, dir / "u.ssdt");
  EXPECT_EQ(read_bytes(dir / "t.ssdt"), read_bytes(dir / "u.ssdt"));
}

TEST(Raw, Rejects) {
  const auto good = encode_raw(Tensor({2, 2}, 1.0));
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_raw(bad), IoError);
  bad = good;
  bad[4] = 2;
  EXPECT_THROW(decode_raw(bad), IoError);
  bad = good;
  bad[6] = 0;
  bad.resize(7);
  EXPECT_THROW(decode_raw(bad), ShapeError);
  bad = good;
  bad[7] = 0;
  bad[8] = 0;
  EXPECT_THROW(decode_raw(bad), ShapeError);
  bad = good;
  bad.pop_back();
  EXPECT_THROW(decode_raw(bad), IoError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(decode_raw(bad), IoError);
  EXPECT_THROW(decode_raw(std::vector<std::uint8_t>(good.begin(), good.begin() + 9)), IoError);
  EXPECT_THROW(decode_raw({}), IoError);
  EXPECT_THROW(load_raw("/nonexistent/file.ssdt"), IoError);
}
