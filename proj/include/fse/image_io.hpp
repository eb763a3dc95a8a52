#pragma once

#include <algorithm>
#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "fse/tensor.hpp"

namespace fse {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline bool has_suffix(const std::string& s, const char* suf) {
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  std::string t(suf);
  return lower.size() >= t.size() && lower.compare(lower.size() - t.size(), t.size(), t) == 0;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

template <typename T>
TensorT<T> load_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  FSE_CHECK(f != nullptr, IoError, "cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError(path + ": not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  FSE_CHECK(png, IoError, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": corrupt PNG stream");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth != 8 && bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": unsupported bit depth " + std::to_string(bit_depth));
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // in-memory little-endian samples
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": unsupported channel count " + std::to_string(channels));
  }

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> raster(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = raster.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  TensorT<T> out({1, channels, std::int64_t(height), std::int64_t(width)});
  const std::int64_t HW = std::int64_t(height) * std::int64_t(width);
  for (std::int64_t y = 0; y < std::int64_t(height); ++y)
    for (std::int64_t x = 0; x < std::int64_t(width); ++x)
      for (int c = 0; c < channels; ++c) {
        double v;
        if (bit_depth == 8) {
          v = double(raster[std::size_t(y) * rowbytes + std::size_t(x * channels + c)]) / 255.0;
        } else {
          const png_byte* p = raster.data() + std::size_t(y) * rowbytes + std::size_t(x * channels + c) * 2;
          v = double(std::uint16_t(p[0]) | (std::uint16_t(p[1]) << 8)) / 65535.0;
        }
        out[c * HW + y * std::int64_t(width) + x] = T(v);
      }
  return out;
}

template <typename T>
TensorT<T> load_jpeg(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  FSE_CHECK(f != nullptr, IoError, "cannot open " + path);

  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError(path + ": corrupt JPEG stream");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);

  const std::int64_t width = cinfo.output_width, height = cinfo.output_height;
  const int channels = cinfo.output_components;
  if (channels != 1 && channels != 3) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError(path + ": unsupported channel count " + std::to_string(channels));
  }
  std::vector<JSAMPLE> row(std::size_t(width * channels));
  TensorT<T> out({1, channels, height, width});
  const std::int64_t HW = height * width;
  JSAMPROW rowp = row.data();
  while (cinfo.output_scanline < cinfo.output_height) {
    std::int64_t y = cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, &rowp, 1);
    for (std::int64_t x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        out[c * HW + y * width + x] = T(double(row[std::size_t(x * channels + c)]) / 255.0);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace detail

// Loads an 8-bit or 16-bit PNG/JPEG as [1, C, H, W] in [0, 1]; color images
// come back in R,G,B channel order.
template <typename T>
TensorT<T> load_image(const std::string& path) {
  FSE_CHECK(std::filesystem::exists(path), IoError, "no such file: " + path);
  if (detail::has_suffix(path, ".png")) return detail::load_png<T>(path);
  if (detail::has_suffix(path, ".jpg") || detail::has_suffix(path, ".jpeg")) return detail::load_jpeg<T>(path);
  throw FormatError(path + ": unsupported image extension (want .png/.jpg/.jpeg)");
}

// Writes an 8-bit PNG. Values are clamped to [0, 1] before quantization, so
// a save/load roundtrip is exact to within 1/255 per channel.
template <typename T>
void save_image(const TensorT<T>& t, const std::string& path) {
  check_image_shape(t, "save_image");
  FSE_CHECK(t.size(0) == 1, ShapeError, "save_image: batch must be 1");
  FSE_CHECK(detail::has_suffix(path, ".png"), FormatError, "save_image writes PNG only: " + path);
  const std::int64_t C = t.size(1), H = t.size(2), W = t.size(3), HW = H * W;

  std::vector<png_byte> raster(std::size_t(H * W * C));
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (std::int64_t c = 0; c < C; ++c) {
        double v = std::min(1.0, std::max(0.0, double(t[c * HW + y * W + x])));
        raster[std::size_t((y * W + x) * C + c)] = png_byte(std::lround(v * 255.0));
      }

  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  FSE_CHECK(f != nullptr, IoError, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  FSE_CHECK(png, IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": PNG write failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, png_uint_32(W), png_uint_32(H), 8,
               C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(H));
  for (std::int64_t y = 0; y < H; ++y) rows[std::size_t(y)] = raster.data() + std::size_t(y * W * C);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace fse
