#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ltformer {

/// 8-bit single-channel image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, uint8_t fill = 0);

  uint8_t& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  bool empty() const { return pixels.empty(); }
  bool operator==(const GrayImage&) const = default;
};

/// 8-bit interleaved RGB image.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h);

  uint8_t* at(int x, int y) { return &pixels[(static_cast<size_t>(y) * width + x) * 3]; }
  const uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<size_t>(y) * width + x) * 3];
  }
  bool operator==(const RgbImage&) const = default;
};

/// round(0.299 R + 0.587 G + 0.114 B).
uint8_t luma(uint8_t r, uint8_t g, uint8_t b);
GrayImage to_gray(const RgbImage& rgb);
RgbImage to_rgb(const GrayImage& gray);

/// Reads binary PGM (P5) or PPM (P6) with maxval 255; PPM is converted with
/// luma(). Throws IoError naming the path on any malformed input.
GrayImage load_image(const std::string& path);
RgbImage load_rgb(const std::string& path);

void save_pgm(const GrayImage& img, const std::string& path);
void save_ppm(const RgbImage& img, const std::string& path);

}  // namespace ltformer
