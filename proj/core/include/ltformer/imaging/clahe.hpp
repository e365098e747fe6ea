#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ltformer/imaging/image.hpp"

namespace ltformer {

struct ClaheParams {
  double clip_limit = 2.0;
  int grid = 8;

  bool operator==(const ClaheParams&) const = default;
};

/// Contrast-limited adaptive histogram equalization.
///
/// The image is split into grid x grid tiles. Each tile gets a lookup table
/// from its clipped, redistributed histogram; a pixel's output blends the
/// tables of the four nearest tile centers bilinearly.
class ClaheMapping {
 public:
  /// Throws ConfigError for grid < 1, clip_limit <= 0 or an image with
  /// fewer pixels than tiles along either axis.
  ClaheMapping(const GrayImage& img, ClaheParams params);

  /// Output intensity for value v at pixel (x, y). Non-decreasing in v.
  uint8_t map(int x, int y, uint8_t v) const;

  const std::array<uint8_t, 256>& tile_lut(int tx, int ty) const {
    return luts_[static_cast<size_t>(ty) * grid_ + tx];
  }
  int grid() const { return grid_; }

 private:
  int width_;
  int height_;
  int grid_;
  std::vector<std::array<uint8_t, 256>> luts_;
};

GrayImage clahe(const GrayImage& img, ClaheParams params = {});

}  // namespace ltformer
