#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nanonet {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major
};

/// Decodes any PNG to 8-bit grayscale (palette/RGB/alpha converted).
/// Throws ValueError on unreadable files.
GrayImage read_png_gray(const std::string& path);

void write_png_gray(const std::string& path, const GrayImage& img);

}  // namespace nanonet
