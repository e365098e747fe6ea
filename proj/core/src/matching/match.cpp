#include "ltformer/matching/match.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "ltformer/errors.hpp"

namespace ltformer {

void DescriptorSet::validate() const {
  if (descriptors.rank() != 2 || descriptors.dim(0) != size()) {
    throw DimensionError("descriptor set holds " + std::to_string(size()) +
                         " keypoints but descriptors of shape " +
                         shape_to_string(descriptors.shape()));
  }
  const int64_t d = descriptors.dim(1);
  for (int64_t i = 0; i < size(); ++i) {
    double n2 = 0.0;
    for (int64_t k = 0; k < d; ++k) {
      const double v = descriptors[i * d + k];
      n2 += v * v;
    }
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-4) {
      throw ContractError("descriptor row " + std::to_string(i) + " is not unit norm");
    }
  }
}

namespace {

double row_distance(const float* a, const float* b, int64_t d) {
  double s = 0.0;
  for (int64_t k = 0; k < d; ++k) {
    const double diff = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    s += diff * diff;
  }
  return std::sqrt(s);
}

// Index of the nearest row of `set` to `query`; strict < keeps the lowest
// index on ties.
int nearest(const float* query, const Tensor& set, double& best) {
  const int64_t n = set.dim(0), d = set.dim(1);
  best = std::numeric_limits<double>::infinity();
  int arg = -1;
  for (int64_t j = 0; j < n; ++j) {
    const double dist = row_distance(query, set.ptr() + j * d, d);
    if (dist < best) {
      best = dist;
      arg = static_cast<int>(j);
    }
  }
  return arg;
}

}  // namespace

MatchResult match_nn(const DescriptorSet& a, const DescriptorSet& b, double threshold,
                     bool mutual) {
  if (a.size() == 0 || b.size() == 0) {
    throw MatchingError("cannot match an empty descriptor set (sizes " +
                        std::to_string(a.size()) + ", " + std::to_string(b.size()) + ")");
  }
  if (!(threshold > 0.0)) throw MatchingError("match threshold must be > 0");
  a.validate();
  b.validate();
  if (a.descriptors.dim(1) != b.descriptors.dim(1)) {
    throw DimensionError("descriptor dimensions differ: " + std::to_string(a.descriptors.dim(1)) +
                         " vs " + std::to_string(b.descriptors.dim(1)));
  }
  const int64_t d = a.descriptors.dim(1);
  MatchResult r;
  r.threshold = threshold;
  r.mutual = mutual;
  r.size_a = a.size();
  r.size_b = b.size();
  for (int64_t i = 0; i < a.size(); ++i) {
    double dist = 0.0;
    const int j = nearest(a.descriptors.ptr() + i * d, b.descriptors, dist);
    if (!(dist <= threshold)) continue;
    if (mutual) {
      double back = 0.0;
      if (nearest(b.descriptors.ptr() + static_cast<int64_t>(j) * d, a.descriptors, back) != i) {
        continue;
      }
    }
    const Keypoint& ka = a.keypoints[static_cast<size_t>(i)];
    const Keypoint& kb = b.keypoints[static_cast<size_t>(j)];
    r.matches.push_back({static_cast<int>(i), j, ka.x, ka.y, kb.x, kb.y, dist});
  }
  return r;
}

bool is_correct(const Match& m, const Alignment& gt, double eps) {
  double gx = 0.0, gy = 0.0;
  gt.apply(m.xa, m.ya, gx, gy);
  return std::hypot(m.xb - gx, m.yb - gy) <= eps;
}

MatchScore score(const MatchResult& result, const Alignment& gt, double eps) {
  MatchScore s;
  s.accepted = result.accepted();
  s.total_keypoints = result.total_keypoints();
  for (const auto& m : result.matches) s.correct += is_correct(m, gt, eps) ? 1 : 0;
  s.precision = s.accepted > 0 ? static_cast<double>(s.correct) / s.accepted : 0.0;
  s.matching_score =
      s.total_keypoints > 0 ? static_cast<double>(s.correct) / s.total_keypoints : 0.0;
  return s;
}

namespace {

void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, const uint8_t color[3]) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (x0 >= 0 && y0 >= 0 && x0 < img.width && y0 < img.height) {
      uint8_t* p = img.at(x0, y0);
      p[0] = color[0];
      p[1] = color[1];
      p[2] = color[2];
    }
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

Annotation annotate_matches(const GrayImage& a, const GrayImage& b, const MatchResult& result,
                            const Alignment& gt, double eps) {
  Annotation out;
  out.image = RgbImage(a.width + b.width, std::max(a.height, b.height));
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      uint8_t* p = out.image.at(x, y);
      p[0] = p[1] = p[2] = a.at(x, y);
    }
  }
  for (int y = 0; y < b.height; ++y) {
    for (int x = 0; x < b.width; ++x) {
      uint8_t* p = out.image.at(a.width + x, y);
      p[0] = p[1] = p[2] = b.at(x, y);
    }
  }
  static const uint8_t kGreen[3] = {0, 255, 0};
  static const uint8_t kRed[3] = {255, 0, 0};
  for (const auto& m : result.matches) {
    Segment s{static_cast<int>(std::lround(m.xa)), static_cast<int>(std::lround(m.ya)),
              a.width + static_cast<int>(std::lround(m.xb)), static_cast<int>(std::lround(m.yb)),
              is_correct(m, gt, eps)};
    draw_line(out.image, s.x0, s.y0, s.x1, s.y1, s.correct ? kGreen : kRed);
    out.segments.push_back(s);
  }
  return out;
}

std::string match_table(const MatchResult& result, const Alignment& gt, double eps) {
  std::string out = "index_a,x_a,y_a,index_b,x_b,y_b,distance,correct\n";
  char line[256];
  for (const auto& m : result.matches) {
    std::snprintf(line, sizeof(line), "%d,%.3f,%.3f,%d,%.3f,%.3f,%.6f,%d\n", m.index_a, m.xa,
                  m.ya, m.index_b, m.xb, m.yb, m.distance, is_correct(m, gt, eps) ? 1 : 0);
    out += line;
  }
  return out;
}

void write_match_file(const std::string& path, const MatchResult& result, const Alignment& gt,
                      double eps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << match_table(result, gt, eps);
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace ltformer
