#include "ltformer/imaging/clahe.hpp"

#include <algorithm>
#include <cmath>

#include "ltformer/errors.hpp"

namespace ltformer {

namespace {

std::array<uint8_t, 256> tile_table(const GrayImage& img, int x0, int x1, int y0, int y1,
                                    double clip_limit) {
  std::array<int64_t, 256> hist{};
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) ++hist[img.at(x, y)];
  }
  const int64_t area = static_cast<int64_t>(x1 - x0) * (y1 - y0);
  const int64_t clip =
      std::max<int64_t>(1, static_cast<int64_t>(clip_limit * static_cast<double>(area) / 256.0));
  int64_t excess = 0;
  for (auto& h : hist) {
    if (h > clip) {
      excess += h - clip;
      h = clip;
    }
  }
  const int64_t batch = excess / 256;
  int64_t residual = excess - batch * 256;
  for (auto& h : hist) h += batch;
  if (residual > 0) {
    const int64_t step = std::max<int64_t>(256 / residual, 1);
    for (int64_t i = 0; i < 256 && residual > 0; i += step, --residual) ++hist[i];
  }
  std::array<uint8_t, 256> lut{};
  const double scale = 255.0 / static_cast<double>(area);
  int64_t cdf = 0;
  for (int i = 0; i < 256; ++i) {
    cdf += hist[i];
    lut[i] = static_cast<uint8_t>(std::min(255L, std::lround(static_cast<double>(cdf) * scale)));
  }
  return lut;
}

// Fractional tile coordinate of a pixel center, measured between tile centers.
void tile_coord(int p, int extent, int grid, int& t0, int& t1, double& frac) {
  const double f = (p + 0.5) * grid / extent - 0.5;
  const double fl = std::floor(f);
  frac = f - fl;
  t0 = static_cast<int>(fl);
  t1 = t0 + 1;
  if (t0 < 0) {
    t0 = 0;
    frac = 0.0;
  }
  if (t1 > grid - 1) {
    t1 = grid - 1;
    if (t0 >= grid - 1) {
      t0 = grid - 1;
      frac = 0.0;
    }
  }
}

}  // namespace

ClaheMapping::ClaheMapping(const GrayImage& img, ClaheParams params)
    : width_(img.width), height_(img.height), grid_(params.grid) {
  if (params.grid < 1) throw ConfigError("clahe: grid must be >= 1");
  if (!(params.clip_limit > 0.0)) throw ConfigError("clahe: clip_limit must be > 0");
  if (img.width < params.grid || img.height < params.grid) {
    throw ConfigError("clahe: image " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + " smaller than grid " +
                      std::to_string(params.grid));
  }
  luts_.reserve(static_cast<size_t>(grid_) * grid_);
  for (int ty = 0; ty < grid_; ++ty) {
    const int y0 = ty * height_ / grid_, y1 = (ty + 1) * height_ / grid_;
    for (int tx = 0; tx < grid_; ++tx) {
      const int x0 = tx * width_ / grid_, x1 = (tx + 1) * width_ / grid_;
      luts_.push_back(tile_table(img, x0, x1, y0, y1, params.clip_limit));
    }
  }
}

uint8_t ClaheMapping::map(int x, int y, uint8_t v) const {
  int tx0, tx1, ty0, ty1;
  double fx, fy;
  tile_coord(x, width_, grid_, tx0, tx1, fx);
  tile_coord(y, height_, grid_, ty0, ty1, fy);
  const double top = (1.0 - fx) * tile_lut(tx0, ty0)[v] + fx * tile_lut(tx1, ty0)[v];
  const double bottom = (1.0 - fx) * tile_lut(tx0, ty1)[v] + fx * tile_lut(tx1, ty1)[v];
  const double out = (1.0 - fy) * top + fy * bottom;
  return static_cast<uint8_t>(std::clamp(std::lround(out), 0L, 255L));
}

GrayImage clahe(const GrayImage& img, ClaheParams params) {
  const ClaheMapping mapping(img, params);
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out.at(x, y) = mapping.map(x, y, img.at(x, y));
  }
  return out;
}

}  // namespace ltformer
