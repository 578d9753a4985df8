#pragma once

#include <png.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nvs/substrate/tensor.hpp"

namespace nvs::data {

using ad::Tensor;

inline std::uint8_t to_u8(float v) {
  const float c = std::isfinite(v) ? std::min(1.0f, std::max(0.0f, v)) : 0.0f;
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// 8-bit RGB PNG of an [H, W, 3] (or [H, W] grey) image, values clamped to [0,1].
inline void write_png(const std::string& path, const Tensor<float>& img) {
  NVS_CHECK(img.rank() == 3 || img.rank() == 2, "write_png expects [H,W,3] or [H,W]");
  const auto H = img.dim(0), W = img.dim(1);
  const int C = img.rank() == 3 ? static_cast<int>(img.dim(2)) : 1;
  NVS_CHECK(C == 1 || C == 3, "write_png expects 1 or 3 channels");
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(H * W * 3));
  for (std::int64_t p = 0; p < H * W; ++p)
    for (int k = 0; k < 3; ++k) buf[p * 3 + k] = to_u8(img[p * C + (C == 3 ? k : 0)]);
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(W);
  im.height = static_cast<png_uint_32>(H);
  im.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path + ": " + im.message);
}

inline Tensor<float> read_png(const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw DataError("cannot read PNG " + path + ": " + im.message, DataFault::kMissingFile);
  im.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr))
    throw DataError("cannot decode PNG " + path + ": " + im.message, DataFault::kParse);
  Tensor<float> out({static_cast<std::int64_t>(im.height), static_cast<std::int64_t>(im.width), 3});
  for (std::size_t i = 0; i < buf.size(); ++i) out[static_cast<std::int64_t>(i)] = buf[i] / 255.0f;
  return out;
}

// Raw float32 arrays with a 16-byte header: 8-byte magic, uint32 H, uint32 W.
// The channel count is implied by the magic.
inline constexpr std::array<char, 8> kDepthMagic{'N', 'V', 'S', 'D', 'E', 'P', 'T', 'H'};
inline constexpr std::array<char, 8> kRgbMagic{'N', 'V', 'S', 'R', 'G', 'B', '3', '2'};

inline void write_f32(const std::string& path, const Tensor<float>& t, const std::array<char, 8>& magic) {
  const int C = magic == kRgbMagic ? 3 : 1;
  NVS_CHECK(t.numel() == t.dim(0) * t.dim(1) * C, "array does not match the file layout");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  const std::uint32_t hw[2] = {static_cast<std::uint32_t>(t.dim(0)), static_cast<std::uint32_t>(t.dim(1))};
  os.write(magic.data(), 8);
  os.write(reinterpret_cast<const char*>(hw), 8);
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!os) throw DataError("failed writing " + path);
}

inline Tensor<float> read_f32(const std::string& path, const std::array<char, 8>& magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing array file " + path, DataFault::kMissingFile);
  std::array<char, 8> m{};
  std::uint32_t hw[2] = {0, 0};
  is.read(m.data(), 8);
  is.read(reinterpret_cast<char*>(hw), 8);
  if (!is || m != magic) throw DataError("bad header in " + path, DataFault::kParse);
  const int C = magic == kRgbMagic ? 3 : 1;
  const std::int64_t H = hw[0], W = hw[1];
  Tensor<float> t = C == 3 ? Tensor<float>({H, W, 3}) : Tensor<float>({H, W});
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!is) throw DataError("truncated array file " + path, DataFault::kParse);
  return t;
}

}  // namespace nvs::data
