#pragma once

#include <vector>

#include "ltformer/imaging/image.hpp"

namespace ltformer {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double scale = 0.0;
  /// Difference-of-Gaussians value at the refined extremum, in [0,1]
  /// intensity units. Sign distinguishes bright and dark blobs.
  double response = 0.0;

  bool operator==(const Keypoint&) const = default;
};

struct DetectorParams {
  int octaves = 4;
  int scales_per_octave = 3;
  double sigma0 = 1.6;
  /// Blur already present in the input.
  double input_blur = 0.5;
  double contrast_threshold = 0.03;
  double edge_ratio = 10.0;
  /// Keypoints closer than this to any image edge are dropped. The default
  /// is patch_margin(64), so every keypoint can be cropped.
  double border = 33.0;
  /// Weaker keypoints within this distance of a stronger one are dropped, so
  /// an extremum found at several scales is reported once.
  double min_separation = 2.0;
};

/// Scale-space extrema of the difference-of-Gaussians pyramid with
/// low-contrast and edge-response rejection and quadratic sub-pixel
/// refinement. Sorted by |response| descending, ties by (y, x); at most
/// max_points are returned (0 means no limit).
std::vector<Keypoint> detect_keypoints(const GrayImage& img, int max_points,
                                       const DetectorParams& params = {});

}  // namespace ltformer
