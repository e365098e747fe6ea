#pragma once

#include <string>
#include <vector>

#include "ltformer/dataset/pair.hpp"
#include "ltformer/imaging/image.hpp"
#include "ltformer/imaging/keypoints.hpp"
#include "ltformer/numerics/tensor.hpp"

namespace ltformer {

/// Keypoints with one unit-norm descriptor row each.
struct DescriptorSet {
  std::vector<Keypoint> keypoints;
  Tensor descriptors;  // [N,D]

  /// Throws DimensionError on a count mismatch and ContractError when a row
  /// is not unit norm within 1e-4.
  void validate() const;
  int64_t size() const { return static_cast<int64_t>(keypoints.size()); }
};

struct Match {
  int index_a = 0;
  int index_b = 0;
  double xa = 0.0, ya = 0.0;
  double xb = 0.0, yb = 0.0;
  double distance = 0.0;

  bool operator==(const Match&) const = default;
};

struct MatchResult {
  std::vector<Match> matches;
  double threshold = 0.5;
  bool mutual = false;
  int64_t size_a = 0;
  int64_t size_b = 0;

  int64_t accepted() const { return static_cast<int64_t>(matches.size()); }
  int64_t total_keypoints() const { return std::min(size_a, size_b); }
};

/// For each row of a, its Euclidean nearest row of b (lowest index on
/// ties). The pair is kept when the distance is <= threshold and, if mutual,
/// a's row is also b's nearest neighbour in a. Throws MatchingError when
/// either set is empty or threshold <= 0.
MatchResult match_nn(const DescriptorSet& a, const DescriptorSet& b, double threshold = 0.5,
                     bool mutual = false);

/// A match is correct when the ground-truth image of its A-point lies
/// within eps px of its B-point.
bool is_correct(const Match& m, const Alignment& gt, double eps);

struct MatchScore {
  int64_t accepted = 0;
  int64_t correct = 0;
  int64_t total_keypoints = 0;
  /// correct / accepted, 0 when nothing was accepted.
  double precision = 0.0;
  /// correct / min(N_A, N_B).
  double matching_score = 0.0;
};

MatchScore score(const MatchResult& result, const Alignment& gt, double eps = 5.0);

struct Segment {
  int x0, y0, x1, y1;
  bool correct;
};

struct Annotation {
  RgbImage image;
  std::vector<Segment> segments;
};

/// Side-by-side composite (A left, B right) with a green segment per
/// correct match and a red one per incorrect match. Endpoints are the
/// rounded keypoint coordinates, B shifted right by A's width.
Annotation annotate_matches(const GrayImage& a, const GrayImage& b, const MatchResult& result,
                            const Alignment& gt, double eps = 5.0);

/// Comma-separated, one row per match:
/// index_a,x_a,y_a,index_b,x_b,y_b,distance,correct
std::string match_table(const MatchResult& result, const Alignment& gt, double eps = 5.0);
void write_match_file(const std::string& path, const MatchResult& result, const Alignment& gt,
                      double eps = 5.0);

}  // namespace ltformer
