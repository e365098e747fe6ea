#pragma once

#include <array>
#include <cstdint>

#include "ltformer/imaging/clahe.hpp"
#include "ltformer/imaging/image.hpp"

namespace ltformer {

/// Affine map from visible-image to NIR-image pixel coordinates:
/// (x, y) -> (a x + b y + c, d x + e y + f).
struct Alignment {
  std::array<double, 6> m{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

  static Alignment identity() { return {}; }
  void apply(double x, double y, double& ox, double& oy) const {
    ox = m[0] * x + m[1] * y + m[2];
    oy = m[3] * x + m[4] * y + m[5];
  }
  bool operator==(const Alignment&) const = default;
};

/// Registered visible / near-infrared images of the same scene.
struct AlignedPair {
  GrayImage visible;
  GrayImage nir;
  Alignment alignment;
};

/// Contrast-enhanced copy of both images, the form detection and patch
/// extraction operate on.
AlignedPair enhance(const AlignedPair& pair, ClaheParams params);

/// Independent stream seed for item `index` of a run seeded with `base`.
uint64_t derive_seed(uint64_t base, uint64_t index);

/// Synthetic registered pair of side `size` (>= 256).
///
/// The visible image is smoothed multi-scale value noise overlaid with
/// random rectangles and ellipses. The NIR image applies a monotone gamma
/// curve, a smooth spatially varying gain and Gaussian noise (sigma 3 grey
/// levels) to the visible image. Geometry is untouched, so the alignment is
/// the identity.
AlignedPair synth_pair(uint64_t seed, int size);

}  // namespace ltformer
