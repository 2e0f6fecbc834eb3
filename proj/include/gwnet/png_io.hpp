#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gwnet {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Reads any PNG and converts it to 8-bit grayscale. Throws DataError
/// naming the path on failure.
GrayImage read_png_gray(const std::filesystem::path& path);

/// Writes 8-bit grayscale. Output is byte-identical for identical input.
void write_png_gray(const std::filesystem::path& path, const GrayImage& image);

}  // namespace gwnet
