#include "ltformer/dataset/pair.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "imaging/filter.hpp"
#include "ltformer/errors.hpp"

namespace ltformer {

using detail::Plane;

AlignedPair enhance(const AlignedPair& pair, ClaheParams params) {
  return {clahe(pair.visible, params), clahe(pair.nir, params), pair.alignment};
}

uint64_t derive_seed(uint64_t base, uint64_t index) {
  // splitmix64 finalizer over a golden-ratio stride.
  uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

// Value noise with a smoothstep blend between lattice points spaced `cell`.
Plane value_noise(std::mt19937_64& rng, int size, int cell) {
  const int n = size / cell + 2;
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> lattice(static_cast<size_t>(n) * n);
  for (auto& v : lattice) v = u(rng);
  Plane out(size, size);
  for (int y = 0; y < size; ++y) {
    const double gy = static_cast<double>(y) / cell;
    const int y0 = static_cast<int>(gy);
    double ty = gy - y0;
    ty = ty * ty * (3.0 - 2.0 * ty);
    for (int x = 0; x < size; ++x) {
      const double gx = static_cast<double>(x) / cell;
      const int x0 = static_cast<int>(gx);
      double tx = gx - x0;
      tx = tx * tx * (3.0 - 2.0 * tx);
      auto L = [&](int i, int j) { return lattice[static_cast<size_t>(j) * n + i]; };
      const double top = (1 - tx) * L(x0, y0) + tx * L(x0 + 1, y0);
      const double bot = (1 - tx) * L(x0, y0 + 1) + tx * L(x0 + 1, y0 + 1);
      out.at(x, y) = static_cast<float>((1 - ty) * top + ty * bot);
    }
  }
  return out;
}

void draw_shapes(std::mt19937_64& rng, Plane& img) {
  const int size = img.w;
  const int count = size * size / 1000;
  std::uniform_real_distribution<double> pos(0.0, size);
  std::uniform_real_distribution<double> extent(4.0, 22.0);
  std::uniform_real_distribution<double> level(0.05, 0.95);
  std::uniform_real_distribution<double> angle(0.0, 3.14159265358979);
  std::bernoulli_distribution ellipse(0.5);
  for (int i = 0; i < count; ++i) {
    const double cx = pos(rng), cy = pos(rng);
    const double rx = extent(rng), ry = extent(rng);
    const double a = angle(rng);
    const float v = static_cast<float>(level(rng));
    const bool round = ellipse(rng);
    const double c = std::cos(a), s = std::sin(a);
    const double reach = std::max(rx, ry) * 1.5;
    const int x0 = std::max(0, static_cast<int>(cx - reach));
    const int x1 = std::min(size - 1, static_cast<int>(cx + reach));
    const int y0 = std::max(0, static_cast<int>(cy - reach));
    const int y1 = std::min(size - 1, static_cast<int>(cy + reach));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double u = (c * (x - cx) + s * (y - cy)) / rx;
        const double w = (-s * (x - cx) + c * (y - cy)) / ry;
        const bool inside = round ? u * u + w * w <= 1.0 : std::abs(u) <= 1.0 && std::abs(w) <= 1.0;
        if (inside) img.at(x, y) = v;
      }
    }
  }
}

uint8_t quantize(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

}  // namespace

AlignedPair synth_pair(uint64_t seed, int size) {
  if (size < 256) throw ConfigError("synth_pair: size must be >= 256 (got " + std::to_string(size) + ")");
  std::mt19937_64 rng(seed);

  Plane tex(size, size);
  const int cells[] = {64, 32};
  const float weights[] = {0.10f, 0.05f};
  for (int i = 0; i < 2; ++i) {
    const Plane octave = value_noise(rng, size, cells[i]);
    for (size_t j = 0; j < tex.v.size(); ++j) tex.v[j] += weights[i] * octave.v[j];
  }
  for (auto& v : tex.v) v += 0.5f;
  draw_shapes(rng, tex);
  tex = detail::gaussian_blur(tex, 1.5);

  const Plane gain_noise = value_noise(rng, size, 128);
  std::normal_distribution<double> noise(0.0, 3.0 / 255.0);
  constexpr double kGamma = 0.7;
  constexpr double kOffset = 0.06;
  constexpr double kSlope = 0.94;

  AlignedPair pair;
  pair.visible = GrayImage(size, size);
  pair.nir = GrayImage(size, size);
  for (size_t j = 0; j < tex.v.size(); ++j) {
    const double v = std::clamp(static_cast<double>(tex.v[j]), 0.0, 1.0);
    pair.visible.pixels[j] = quantize(v);
    const double gain = 0.85 + 0.1 * gain_noise.v[j];
    pair.nir.pixels[j] = quantize(kOffset + kSlope * gain * std::pow(v, kGamma) + noise(rng));
  }
  return pair;
}

}  // namespace ltformer
