#include <png.h>

#include <cstdio>
#include <memory>

#include "dasgil/image.hpp"

namespace dasgil::png {
namespace {

struct File {
  std::FILE* fp;
  ~File() {
    if (fp) std::fclose(fp);
  }
};

File open(const std::filesystem::path& path, const char* mode) {
  File f{std::fopen(path.c_str(), mode)};
  if (!f.fp) {
    if (mode[0] == 'r') fail(ErrorCode::MissingFile, "cannot open " + path.string());
    fail(ErrorCode::IoError, "cannot create " + path.string());
  }
  return f;
}

[[noreturn]] void on_error(png_structp, png_const_charp msg) { throw Error(ErrorCode::IoError, std::string("libpng: ") + msg); }
void on_warning(png_structp, png_const_charp) {}

struct Writer {
  png_structp png = nullptr;
  png_infop info = nullptr;
  Writer() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
    require(png != nullptr, ErrorCode::IoError, "png_create_write_struct failed");
    info = png_create_info_struct(png);
  }
  ~Writer() { png_destroy_write_struct(&png, &info); }
};

struct Reader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  Reader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
    require(png != nullptr, ErrorCode::IoError, "png_create_read_struct failed");
    info = png_create_info_struct(png);
  }
  ~Reader() { png_destroy_read_struct(&png, &info, nullptr); }
};

void write_rows(const std::filesystem::path& path, int w, int h, int bit_depth, int color_type, std::uint8_t* data,
                std::size_t stride, const std::vector<std::array<std::uint8_t, 3>>* palette = nullptr) {
  File f = open(path, "wb");
  Writer wr;
  png_init_io(wr.png, f.fp);
  png_set_IHDR(wr.png, wr.info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> colors;
  if (palette) {
    for (const auto& c : *palette) colors.push_back(png_color{c[0], c[1], c[2]});
    png_set_PLTE(wr.png, wr.info, colors.data(), static_cast<int>(colors.size()));
  }
  png_write_info(wr.png, wr.info);
  if (bit_depth == 16) png_set_swap(wr.png);
  for (int y = 0; y < h; ++y) png_write_row(wr.png, data + y * stride);
  png_write_end(wr.png, nullptr);
}

// Reads the raw stored samples; the caller states which layout it expects.
template <typename T>
Image<T> read_raw(const std::filesystem::path& path, int want_color, int want_depth, int channels) {
  File f = open(path, "rb");
  Reader rd;
  png_init_io(rd.png, f.fp);
  png_read_info(rd.png, rd.info);
  const int w = png_get_image_width(rd.png, rd.info), h = png_get_image_height(rd.png, rd.info);
  const int color = png_get_color_type(rd.png, rd.info), depth = png_get_bit_depth(rd.png, rd.info);
  if (want_color == PNG_COLOR_TYPE_RGB) {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(rd.png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(rd.png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(rd.png);
    if (depth == 16) png_set_strip_16(rd.png);
    if (depth < 8) png_set_packing(rd.png);
  } else {
    require(color == want_color && depth == want_depth, ErrorCode::MalformedRecord,
            path.string() + ": unexpected PNG layout");
    if (depth == 16) png_set_swap(rd.png);
  }
  png_read_update_info(rd.png, rd.info);
  Image<T> img(h, w, channels);
  const std::size_t stride = std::size_t(w) * channels * sizeof(T);
  require(png_get_rowbytes(rd.png, rd.info) == stride, ErrorCode::MalformedRecord, path.string() + ": unexpected row size");
  for (int y = 0; y < h; ++y) png_read_row(rd.png, reinterpret_cast<png_bytep>(img.data.data()) + y * stride, nullptr);
  png_read_end(rd.png, nullptr);
  return img;
}

}  // namespace

void write_rgb(const std::filesystem::path& path, const RgbImage& img) {
  require(img.channels == 3, ErrorCode::ShapeMismatch, "RGB image must have 3 channels");
  auto copy = img.data;
  write_rows(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, copy.data(), std::size_t(img.width) * 3);
}

RgbImage read_rgb(const std::filesystem::path& path) { return read_raw<std::uint8_t>(path, PNG_COLOR_TYPE_RGB, 8, 3); }

void write_gray16(const std::filesystem::path& path, const Image<std::uint16_t>& img) {
  require(img.channels == 1, ErrorCode::ShapeMismatch, "depth image must have 1 channel");
  auto copy = img.data;
  write_rows(path, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY, reinterpret_cast<std::uint8_t*>(copy.data()),
             std::size_t(img.width) * 2);
}

Image<std::uint16_t> read_gray16(const std::filesystem::path& path) {
  return read_raw<std::uint16_t>(path, PNG_COLOR_TYPE_GRAY, 16, 1);
}

void write_indexed(const std::filesystem::path& path, const LabelImage& img,
                   const std::vector<std::array<std::uint8_t, 3>>& palette) {
  require(img.channels == 1, ErrorCode::ShapeMismatch, "label image must have 1 channel");
  require(!palette.empty() && palette.size() <= 256, ErrorCode::InvalidConfig, "palette must have 1..256 entries");
  for (auto v : img.data) require(v < palette.size(), ErrorCode::ClassOutOfRange, "label index outside palette");
  auto copy = img.data;
  write_rows(path, img.width, img.height, 8, PNG_COLOR_TYPE_PALETTE, copy.data(), std::size_t(img.width), &palette);
}

LabelImage read_indexed(const std::filesystem::path& path) {
  File f = open(path, "rb");
  Reader rd;
  png_init_io(rd.png, f.fp);
  png_read_info(rd.png, rd.info);
  const int color = png_get_color_type(rd.png, rd.info), depth = png_get_bit_depth(rd.png, rd.info);
  require((color == PNG_COLOR_TYPE_PALETTE || color == PNG_COLOR_TYPE_GRAY) && depth <= 8, ErrorCode::MalformedRecord,
          path.string() + ": label map must be 8-bit indexed or gray");
  if (depth < 8) png_set_packing(rd.png);
  png_read_update_info(rd.png, rd.info);
  const int w = png_get_image_width(rd.png, rd.info), h = png_get_image_height(rd.png, rd.info);
  LabelImage img(h, w, 1);
  for (int y = 0; y < h; ++y) png_read_row(rd.png, img.data.data() + std::size_t(y) * w, nullptr);
  png_read_end(rd.png, nullptr);
  return img;
}

}  // namespace dasgil::png
