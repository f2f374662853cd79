#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dasgil/error.hpp"

namespace dasgil {

// Interleaved (row, column, channel) raster.
template <typename T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w, int c, T fill = T{}) : height(h), width(w), channels(c), data(std::size_t(h) * w * c, fill) {}

  T& at(int y, int x, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
  const T& at(int y, int x, int c = 0) const { return data[(std::size_t(y) * width + x) * channels + c]; }

  template <typename U>
  bool same_size(const Image<U>& o) const { return height == o.height && width == o.width; }
  friend bool operator==(const Image&, const Image&) = default;
};

using RgbImage = Image<std::uint8_t>;
using DepthImage = Image<float>;
using LabelImage = Image<std::uint8_t>;

template <typename T>
Image<T> flip_horizontal(const Image<T>& img) {
  Image<T> out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
  return out;
}

template <typename T>
Image<T> crop(const Image<T>& img, int top, int left, int h, int w) {
  require(top >= 0 && left >= 0 && top + h <= img.height && left + w <= img.width, ErrorCode::TargetTooLarge,
          "crop window exceeds image");
  Image<T> out(h, w, img.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(top + y, left + x, c);
  return out;
}

namespace png {

void write_rgb(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_rgb(const std::filesystem::path& path);

void write_gray16(const std::filesystem::path& path, const Image<std::uint16_t>& img);
Image<std::uint16_t> read_gray16(const std::filesystem::path& path);

// 8-bit palette image whose indices are the stored values.
void write_indexed(const std::filesystem::path& path, const LabelImage& img,
                   const std::vector<std::array<std::uint8_t, 3>>& palette);
LabelImage read_indexed(const std::filesystem::path& path);

}  // namespace png

}  // namespace dasgil
