#pragma once

#include <string>

#include "ltformer/imaging/image.hpp"
#include "ltformer/imaging/keypoints.hpp"
#include "ltformer/numerics/tensor.hpp"

namespace ltformer {

enum class TransformKind { kIdentity, kScale, kRotate, kTranslate };

std::string to_string(TransformKind kind);
/// Throws ConfigError for unknown names.
TransformKind parse_transform_kind(const std::string& name);

/// Geometric perturbation applied when sampling a positive patch.
struct PatchTransform {
  TransformKind kind = TransformKind::kIdentity;
  double scale_factor = 1.0;
  double angle_deg = 0.0;
  int dx = 0;
  int dy = 0;

  static PatchTransform identity() { return {}; }
  static PatchTransform scale(double f) { return {TransformKind::kScale, f, 0.0, 0, 0}; }
  static PatchTransform rotate(double deg) { return {TransformKind::kRotate, 1.0, deg, 0, 0}; }
  static PatchTransform translate(int dx, int dy) {
    return {TransformKind::kTranslate, 1.0, 0.0, dx, dy};
  }

  /// Throws ConfigError unless the parameters belong to the augmentation
  /// sets: scale in {0.9,0.95,1.05,1.1,1.15}, rotation +-{5,10,15} degrees,
  /// translation at most 8 px per axis.
  void validate() const;

  bool operator==(const PatchTransform&) const = default;
};

inline constexpr double kScaleFactors[] = {0.9, 0.95, 1.05, 1.1, 1.15};
inline constexpr double kRotationDegrees[] = {5.0, 10.0, 15.0};
inline constexpr int kMaxTranslation = 8;

struct PatchGeometry {
  /// Side of the source square, in image pixels.
  int window = 64;
  /// Side of the resampled patch fed to the network.
  int out_size = 128;

  bool operator==(const PatchGeometry&) const = default;
};

/// Crop of side `window` centered at the keypoint, bilinearly resampled to
/// out_size x out_size and scaled to [0,1]. Returns [1,out_size,out_size].
/// Throws BorderError if any sample falls outside the image.
Tensor extract_patch(const GrayImage& img, const Keypoint& kp, PatchGeometry geom = {});

/// Like extract_patch, but samples the source under the inverse of t:
/// rotation and scaling act about the keypoint, translation moves the
/// sampling center by (dx, dy). Identity reproduces extract_patch exactly.
Tensor apply_transform(const GrayImage& img, const Keypoint& kp, const PatchTransform& t,
                       PatchGeometry geom = {});

/// Distance from a keypoint to the image edge that an untransformed patch
/// needs to stay inside the image.
double patch_margin(int window);

/// Distance from a keypoint to the image edge that every transform in the
/// augmentation sets needs to stay inside the image.
double transform_margin(int window);

/// Quantizes a [1,H,W] patch in [0,1] back to 8 bits.
GrayImage patch_to_image(const Tensor& patch);

}  // namespace ltformer
