#include "cdcm/image_io.hpp"

#include <png.h>
#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "cdcm/common.hpp"

namespace cdcm::img {

Image8 read_png(const std::string& path) {
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw IoError("cannot read PNG '" + path + "': " + im.message);
  im.format = PNG_FORMAT_RGB;
  Image8 out;
  out.h = static_cast<int>(im.height);
  out.w = static_cast<int>(im.width);
  out.pixels.resize(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&im);
    throw IoError("cannot decode PNG '" + path + "': " + im.message);
  }
  return out;
}

void write_png(const std::string& path, const Image8& image) {
  check_config(image.h > 0 && image.w > 0 &&
                   image.pixels.size() == static_cast<size_t>(image.size()),
               "write_png: inconsistent image dimensions");
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(image.w);
  im.height = static_cast<png_uint_32>(image.h);
  im.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + path + "': " + im.message);
}

bool png_readable(const std::string& path) {
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  bool ok = png_image_begin_read_from_file(&im, path.c_str()) != 0;
  png_image_free(&im);
  return ok;
}

Image8 resize_bilinear(const Image8& src, int out_h, int out_w) {
  check_config(src.h > 0 && src.w > 0, "resize of empty image");
  if (src.h == out_h && src.w == out_w) return src;
  Image8 dst;
  dst.h = out_h;
  dst.w = out_w;
  dst.pixels.resize(static_cast<size_t>(dst.size()));
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::max(0.0, std::min(fy, static_cast<double>(src.h - 1)));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::max(0.0, std::min(fx, static_cast<double>(src.w - 1)));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = src.pixels[static_cast<size_t>((y0 * src.w + x0) * 3 + c)];
        const double v01 = src.pixels[static_cast<size_t>((y0 * src.w + x1) * 3 + c)];
        const double v10 = src.pixels[static_cast<size_t>((y1 * src.w + x0) * 3 + c)];
        const double v11 = src.pixels[static_cast<size_t>((y1 * src.w + x1) * 3 + c)];
        const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
        dst.pixels[static_cast<size_t>((y * out_w + x) * 3 + c)] =
            static_cast<uint8_t>(std::lround(std::max(0.0, std::min(255.0, v))));
      }
    }
  }
  return dst;
}

uint32_t crc32_of(const std::vector<uint8_t>& bytes) {
  return static_cast<uint32_t>(
      ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

uint32_t crc32_of_file(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!f) throw IoError("cannot open '" + path + "'");
  uLong crc = ::crc32(0L, nullptr, 0);
  unsigned char buf[65536];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f.get())) > 0)
    crc = ::crc32(crc, buf, static_cast<uInt>(n));
  return static_cast<uint32_t>(crc);
}

}  // namespace cdcm::img
