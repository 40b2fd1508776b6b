#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cdcm::img {

// 8-bit RGB image, HWC row-major.
struct Image8 {
  int h = 0, w = 0;
  std::vector<uint8_t> pixels;  // h*w*3

  int64_t size() const { return static_cast<int64_t>(h) * w * 3; }
};

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& image);

// Header-only decodability probe (does not read pixel data).
bool png_readable(const std::string& path);

Image8 resize_bilinear(const Image8& src, int out_h, int out_w);

uint32_t crc32_of(const std::vector<uint8_t>& bytes);
uint32_t crc32_of_file(const std::string& path);

}  // namespace cdcm::img
