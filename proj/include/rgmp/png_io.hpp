#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rgmp {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Rgb8Image {
  int w = 0, h = 0;
  std::vector<std::uint8_t> bytes;  // w*h*3
};

// Lossless PNG encode of an RGB8 raster (in-memory / file). Throws IoError on
// encoder or filesystem failures, ValidationError on bad raster geometry.
std::vector<std::uint8_t> encode_png_rgb8(const Rgb8Image& img);
void write_png_rgb8(const std::string& path, const Rgb8Image& img);

// Decode; throws IoError for unreadable files or non-PNG content. Non-RGB8
// inputs (palette, gray, 16-bit, alpha) are converted to RGB8 by the decoder.
Rgb8Image read_png_rgb8(const std::string& path);

}  // namespace rgmp
