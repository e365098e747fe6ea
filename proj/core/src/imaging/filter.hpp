#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

// Float image helpers shared by the detector and the synthetic generator.
namespace ltformer::detail {

struct Plane {
  int w = 0;
  int h = 0;
  std::vector<float> v;

  Plane() = default;
  Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<size_t>(w_) * h_, 0.0f) {}
  float& at(int x, int y) { return v[static_cast<size_t>(y) * w + x]; }
  float at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
};

inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

inline Plane gaussian_blur(const Plane& src, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<float> k(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double g = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = static_cast<float>(g);
    total += g;
  }
  for (auto& x : k) x = static_cast<float>(x / total);

  Plane tmp(src.w, src.h), out(src.w, src.h);
  std::vector<int> xs(static_cast<size_t>(src.w + 2 * radius));
  for (int i = 0; i < src.w + 2 * radius; ++i) xs[static_cast<size_t>(i)] = reflect101(i - radius, src.w);
  for (int y = 0; y < src.h; ++y) {
    const float* row = &src.v[static_cast<size_t>(y) * src.w];
    for (int x = 0; x < src.w; ++x) {
      float acc = 0.0f;
      for (int t = 0; t <= 2 * radius; ++t) acc += k[static_cast<size_t>(t)] * row[xs[static_cast<size_t>(x + t)]];
      tmp.at(x, y) = acc;
    }
  }
  std::vector<float> acc(static_cast<size_t>(src.w));
  for (int y = 0; y < src.h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0f);
    for (int t = 0; t <= 2 * radius; ++t) {
      const float* row = &tmp.v[static_cast<size_t>(reflect101(y + t - radius, src.h)) * src.w];
      const float kt = k[static_cast<size_t>(t)];
      for (int x = 0; x < src.w; ++x) acc[static_cast<size_t>(x)] += kt * row[x];
    }
    std::copy(acc.begin(), acc.end(), &out.v[static_cast<size_t>(y) * src.w]);
  }
  return out;
}

inline Plane downsample(const Plane& src) {
  Plane out(src.w / 2, src.h / 2);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) out.at(x, y) = src.at(2 * x, 2 * y);
  }
  return out;
}

}  // namespace ltformer::detail
