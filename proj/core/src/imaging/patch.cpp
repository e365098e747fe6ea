#include "ltformer/imaging/patch.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ltformer/errors.hpp"

namespace ltformer {

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::kIdentity: return "identity";
    case TransformKind::kScale: return "scale";
    case TransformKind::kRotate: return "rotate";
    case TransformKind::kTranslate: return "translate";
  }
  return "identity";
}

TransformKind parse_transform_kind(const std::string& name) {
  if (name == "identity") return TransformKind::kIdentity;
  if (name == "scale") return TransformKind::kScale;
  if (name == "rotate") return TransformKind::kRotate;
  if (name == "translate") return TransformKind::kTranslate;
  throw ConfigError("unknown transform kind '" + name + "'");
}

void PatchTransform::validate() const {
  switch (kind) {
    case TransformKind::kIdentity:
      return;
    case TransformKind::kScale:
      for (double f : kScaleFactors) {
        if (scale_factor == f) return;
      }
      throw ConfigError("scale factor " + std::to_string(scale_factor) + " not in the scale set");
    case TransformKind::kRotate:
      for (double a : kRotationDegrees) {
        if (std::abs(angle_deg) == a) return;
      }
      throw ConfigError("rotation " + std::to_string(angle_deg) + " not in the rotation set");
    case TransformKind::kTranslate:
      if (std::abs(dx) <= kMaxTranslation && std::abs(dy) <= kMaxTranslation) return;
      throw ConfigError("translation (" + std::to_string(dx) + "," + std::to_string(dy) +
                        ") exceeds 8 px");
  }
}

namespace {

template <typename Map>
Tensor sample(const GrayImage& img, PatchGeometry geom, Map&& source_of) {
  if (geom.window < 1 || geom.out_size < 1) {
    throw ConfigError("patch window and output size must be >= 1");
  }
  const int n = geom.out_size;
  const double step = static_cast<double>(geom.window) / n;
  const double origin = 0.5 * step - 0.5 - 0.5 * geom.window;
  const double xmax = img.width - 1, ymax = img.height - 1;
  Tensor out({1, n, n});
  float* dst = out.ptr();
  for (int v = 0; v < n; ++v) {
    const double ly = origin + v * step;
    for (int u = 0; u < n; ++u) {
      const double lx = origin + u * step;
      const auto [sx, sy] = source_of(lx, ly);
      if (!(sx >= 0.0 && sy >= 0.0 && sx <= xmax && sy <= ymax)) {
        throw BorderError("sampling window leaves the " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " image at (" + std::to_string(sx) +
                          ", " + std::to_string(sy) + ")");
      }
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const double fx = sx - x0, fy = sy - y0;
      const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
      const double top = (1.0 - fx) * img.at(x0, y0) + fx * img.at(x1, y0);
      const double bottom = (1.0 - fx) * img.at(x0, y1) + fx * img.at(x1, y1);
      dst[v * n + u] = static_cast<float>(((1.0 - fy) * top + fy * bottom) / 255.0);
    }
  }
  return out;
}

struct Point {
  double x;
  double y;
};

}  // namespace

Tensor extract_patch(const GrayImage& img, const Keypoint& kp, PatchGeometry geom) {
  return apply_transform(img, kp, PatchTransform::identity(), geom);
}

Tensor apply_transform(const GrayImage& img, const Keypoint& kp, const PatchTransform& t,
                       PatchGeometry geom) {
  const double cx = kp.x, cy = kp.y;
  switch (t.kind) {
    case TransformKind::kIdentity:
      return sample(img, geom, [&](double lx, double ly) { return Point{cx + lx, cy + ly}; });
    case TransformKind::kTranslate: {
      const double ox = cx + t.dx, oy = cy + t.dy;
      return sample(img, geom, [&](double lx, double ly) { return Point{ox + lx, oy + ly}; });
    }
    case TransformKind::kScale: {
      if (!(t.scale_factor > 0.0)) throw ConfigError("scale factor must be positive");
      const double inv = 1.0 / t.scale_factor;
      return sample(img, geom,
                    [&](double lx, double ly) { return Point{cx + lx * inv, cy + ly * inv}; });
    }
    case TransformKind::kRotate: {
      const double a = t.angle_deg * std::numbers::pi / 180.0;
      const double c = std::cos(a), s = std::sin(a);
      return sample(img, geom, [&](double lx, double ly) {
        return Point{cx + c * lx + s * ly, cy - s * lx + c * ly};
      });
    }
  }
  throw ConfigError("unknown transform kind");
}

double patch_margin(int window) { return std::ceil(0.5 * window) + 1.0; }

double transform_margin(int window) {
  const double half = 0.5 * window;
  double m = half + kMaxTranslation;
  for (double f : kScaleFactors) m = std::max(m, half / f);
  for (double deg : kRotationDegrees) {
    const double a = deg * std::numbers::pi / 180.0;
    m = std::max(m, half * (std::cos(a) + std::sin(a)));
  }
  return std::ceil(m) + 1.0;
}

GrayImage patch_to_image(const Tensor& patch) {
  if (patch.rank() != 3 || patch.dim(0) != 1) {
    throw DimensionError("patch_to_image expects [1,H,W], got " + shape_to_string(patch.shape()));
  }
  GrayImage img(static_cast<int>(patch.dim(2)), static_cast<int>(patch.dim(1)));
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = std::clamp(static_cast<double>(patch[static_cast<int64_t>(i)]), 0.0, 1.0);
    img.pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

}  // namespace ltformer
