#include "ltformer/imaging/keypoints.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "ltformer/errors.hpp"
#include "imaging/filter.hpp"

namespace ltformer {

namespace {

using detail::Plane;
using detail::downsample;
using detail::gaussian_blur;

bool is_extremum(const std::vector<Plane>& dog, int l, int x, int y) {
  const float v = dog[static_cast<size_t>(l)].at(x, y);
  const bool want_max = v > 0;
  for (int dl = -1; dl <= 1; ++dl) {
    const Plane& p = dog[static_cast<size_t>(l + dl)];
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dl == 0 && dx == 0 && dy == 0) continue;
        const float n = p.at(x + dx, y + dy);
        if (want_max ? n > v : n < v) return false;
      }
    }
  }
  return true;
}

constexpr int kScanBorder = 5;
constexpr int kMaxRefineSteps = 5;

// Quadratic fit around a discrete extremum. Returns false when the fit does
// not converge or the point fails the contrast or edge tests.
bool refine(const std::vector<Plane>& dog, int& l, int& x, int& y, const DetectorParams& p,
            Eigen::Vector3d& offset, double& contrast) {
  const int layers = p.scales_per_octave;
  const Plane* prev = nullptr;
  const Plane* cur = nullptr;
  const Plane* next = nullptr;
  Eigen::Vector3d grad;
  Eigen::Matrix3d hess;
  int px = -1, py = -1, pl = -1;
  for (int step = 0;; ++step) {
    if (step >= kMaxRefineSteps) return false;
    prev = &dog[static_cast<size_t>(l - 1)];
    cur = &dog[static_cast<size_t>(l)];
    next = &dog[static_cast<size_t>(l + 1)];
    const double v2 = 2.0 * cur->at(x, y);
    grad << 0.5 * (cur->at(x + 1, y) - cur->at(x - 1, y)),
        0.5 * (cur->at(x, y + 1) - cur->at(x, y - 1)), 0.5 * (next->at(x, y) - prev->at(x, y));
    const double dxx = cur->at(x + 1, y) + cur->at(x - 1, y) - v2;
    const double dyy = cur->at(x, y + 1) + cur->at(x, y - 1) - v2;
    const double dss = next->at(x, y) + prev->at(x, y) - v2;
    const double dxy = 0.25 * (cur->at(x + 1, y + 1) - cur->at(x - 1, y + 1) -
                               cur->at(x + 1, y - 1) + cur->at(x - 1, y - 1));
    const double dxs = 0.25 * (next->at(x + 1, y) - next->at(x - 1, y) - prev->at(x + 1, y) +
                               prev->at(x - 1, y));
    const double dys = 0.25 * (next->at(x, y + 1) - next->at(x, y - 1) - prev->at(x, y + 1) +
                               prev->at(x, y - 1));
    hess << dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss;
    const Eigen::FullPivLU<Eigen::Matrix3d> lu(hess);
    if (!lu.isInvertible()) return false;
    offset = -lu.solve(grad);
    if (std::abs(offset[0]) < 0.5 && std::abs(offset[1]) < 0.5 && std::abs(offset[2]) < 0.5) {
      break;
    }
    if (std::abs(offset[0]) > 1e6 || std::abs(offset[1]) > 1e6 || std::abs(offset[2]) > 1e6) {
      return false;
    }
    const int nx = x + static_cast<int>(std::lround(offset[0]));
    const int ny = y + static_cast<int>(std::lround(offset[1]));
    const int nl = l + static_cast<int>(std::lround(offset[2]));
    // An extremum halfway between samples makes the fit step back and forth;
    // the current estimate is then as good as the alternative.
    if (nx == px && ny == py && nl == pl) {
      if (std::abs(offset[0]) > 1.0 || std::abs(offset[1]) > 1.0 || std::abs(offset[2]) > 1.0) {
        return false;
      }
      break;
    }
    px = x;
    py = y;
    pl = l;
    x = nx;
    y = ny;
    l = nl;
    if (l < 1 || l > layers || x < kScanBorder || x >= cur->w - kScanBorder ||
        y < kScanBorder || y >= cur->h - kScanBorder) {
      return false;
    }
  }
  contrast = cur->at(x, y) + 0.5 * grad.dot(offset);
  if (std::abs(contrast) * layers < p.contrast_threshold) return false;

  const double dxx = hess(0, 0), dyy = hess(1, 1), dxy = hess(0, 1);
  const double tr = dxx + dyy;
  const double det = dxx * dyy - dxy * dxy;
  const double r = p.edge_ratio;
  return det > 0 && tr * tr * r < (r + 1) * (r + 1) * det;
}

}  // namespace

std::vector<Keypoint> detect_keypoints(const GrayImage& img, int max_points,
                                       const DetectorParams& params) {
  if (max_points < 0) throw ContractError("detect_keypoints: max_points must be >= 0");
  if (params.octaves < 1 || params.scales_per_octave < 1 || params.sigma0 <= 0.0) {
    throw ConfigError("detect_keypoints: invalid scale-space parameters");
  }
  Plane base(img.width, img.height);
  for (size_t i = 0; i < img.pixels.size(); ++i) base.v[i] = img.pixels[i] / 255.0f;

  const int S = params.scales_per_octave;
  const double k = std::pow(2.0, 1.0 / S);
  const double initial =
      std::sqrt(std::max(0.01, params.sigma0 * params.sigma0 -
                                   params.input_blur * params.input_blur));
  base = gaussian_blur(base, initial);
  const float prefilter = static_cast<float>(0.5 * params.contrast_threshold / S);

  std::vector<Keypoint> found;
  for (int o = 0; o < params.octaves; ++o) {
    if (base.w < 2 * kScanBorder + 3 || base.h < 2 * kScanBorder + 3) break;
    std::vector<Plane> gauss{base};
    for (int i = 1; i < S + 3; ++i) {
      const double prev = params.sigma0 * std::pow(k, i - 1);
      const double total = prev * k;
      gauss.push_back(gaussian_blur(gauss.back(), std::sqrt(total * total - prev * prev)));
    }
    std::vector<Plane> dog;
    for (int i = 0; i + 1 < static_cast<int>(gauss.size()); ++i) {
      Plane d(base.w, base.h);
      for (size_t j = 0; j < d.v.size(); ++j) {
        d.v[j] = gauss[static_cast<size_t>(i + 1)].v[j] - gauss[static_cast<size_t>(i)].v[j];
      }
      dog.push_back(std::move(d));
    }
    const double octave_scale = std::ldexp(1.0, o);
    for (int l = 1; l <= S; ++l) {
      const Plane& cur = dog[static_cast<size_t>(l)];
      for (int y = kScanBorder; y < cur.h - kScanBorder; ++y) {
        for (int x = kScanBorder; x < cur.w - kScanBorder; ++x) {
          const float v = cur.at(x, y);
          if (std::abs(v) <= prefilter || !is_extremum(dog, l, x, y)) continue;
          int rl = l, rx = x, ry = y;
          Eigen::Vector3d off;
          double contrast = 0.0;
          if (!refine(dog, rl, rx, ry, params, off, contrast)) continue;
          Keypoint kp;
          kp.x = (rx + off[0]) * octave_scale;
          kp.y = (ry + off[1]) * octave_scale;
          kp.scale = params.sigma0 * std::pow(2.0, (rl + off[2]) / S) * octave_scale;
          kp.response = contrast;
          found.push_back(kp);
        }
      }
    }
    base = downsample(gauss[static_cast<size_t>(S)]);
  }

  const double b = params.border;
  std::erase_if(found, [&](const Keypoint& kp) {
    return kp.x < b || kp.y < b || kp.x > img.width - 1 - b || kp.y > img.height - 1 - b;
  });
  std::sort(found.begin(), found.end(), [](const Keypoint& a, const Keypoint& c) {
    const double ra = std::abs(a.response), rc = std::abs(c.response);
    if (ra != rc) return ra > rc;
    if (a.y != c.y) return a.y < c.y;
    if (a.x != c.x) return a.x < c.x;
    return a.scale < c.scale;
  });

  std::vector<Keypoint> kept;
  const double sep2 = params.min_separation * params.min_separation;
  for (const auto& kp : found) {
    bool close = false;
    for (const auto& q : kept) {
      const double dx = kp.x - q.x, dy = kp.y - q.y;
      if (dx * dx + dy * dy < sep2) {
        close = true;
        break;
      }
    }
    if (close) continue;
    kept.push_back(kp);
    if (max_points > 0 && static_cast<int>(kept.size()) >= max_points) break;
  }
  return kept;
}

}  // namespace ltformer
