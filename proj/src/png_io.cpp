#include "rgmp/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>

#include "rgmp/errors.hpp"

namespace rgmp {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_noop(png_structp) {}

struct FileCloser {
  std::FILE* f = nullptr;
  ~FileCloser() {
    if (f != nullptr) std::fclose(f);
  }
};

}  // namespace

std::vector<std::uint8_t> encode_png_rgb8(const Rgb8Image& img) {
  if (img.w <= 0 || img.h <= 0) {
    throw ValidationError("png encode needs positive extents");
  }
  if (img.bytes.size() != static_cast<std::size_t>(img.w) * img.h * 3) {
    throw ValidationError("png encode: raster byte count does not match extents");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoError("png encoder allocation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png encoder info allocation failed");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png encode failed");
  }
  png_set_write_fn(png, &out, append_bytes, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
  for (int y = 0; y < img.h; ++y) {
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.bytes.data() + static_cast<std::size_t>(y) * img.w * 3);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png_rgb8(const std::string& path, const Rgb8Image& img) {
  std::vector<std::uint8_t> bytes = encode_png_rgb8(img);
  FileCloser fc{std::fopen(path.c_str(), "wb")};
  if (fc.f == nullptr) throw IoError("cannot open " + path + " for writing");
  if (std::fwrite(bytes.data(), 1, bytes.size(), fc.f) != bytes.size()) {
    throw IoError("short write to " + path);
  }
}

Rgb8Image read_png_rgb8(const std::string& path) {
  FileCloser fc{std::fopen(path.c_str(), "rb")};
  if (fc.f == nullptr) throw IoError("cannot open " + path + " for reading");
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, fc.f) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoError("png decoder allocation failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png decoder info allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png decode failed for " + path);
  }
  png_init_io(png, fc.f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Normalize every layout to 8-bit RGB.
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (png_get_bit_depth(png, info) == 16) png_set_scale_16(png);
  png_set_strip_alpha(png);
  if ((png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) == 0) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  Rgb8Image img;
  img.w = static_cast<int>(png_get_image_width(png, info));
  img.h = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(img.w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unexpected decoded row stride in " + path);
  }
  img.bytes.resize(static_cast<std::size_t>(img.w) * img.h * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
  for (int y = 0; y < img.h; ++y) {
    rows[static_cast<std::size_t>(y)] = img.bytes.data() + static_cast<std::size_t>(y) * stride;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace rgmp
