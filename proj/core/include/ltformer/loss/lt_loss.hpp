#pragma once

#include <string>

#include "ltformer/numerics/tape.hpp"

namespace ltformer {

/// Which hinge the adaptive-margin triplet loss uses.
///
/// kCorrected:    max{d+ - d- + M, 0}, pulls positives in and pushes negatives
///                out; zero exactly when 3 d+ <= d-.
/// kPaperLiteral: max{d+ + d- - M, 0}, which with M = (d+ + d-)/2 equals
///                (d+ + d-)/2 and is minimized by collapsing every distance.
///                Kept for comparison runs only.
enum class LossMode { kCorrected, kPaperLiteral };

std::string to_string(LossMode mode);
/// Accepts "corrected" or "paper_literal"; throws ConfigError otherwise.
LossMode parse_loss_mode(const std::string& text);

/// Descriptor rows for (anchor, positive, negative); all [B,D], normally
/// unit-norm rows straight from the network.
template <typename T>
struct BasicTripletBatch {
  BasicTensor<T> anchor;
  BasicTensor<T> positive;
  BasicTensor<T> negative;

  /// Throws DimensionError unless all three are [B,D] with B >= 1.
  void validate() const;
  int64_t size() const { return anchor.dim(0); }
};
using TripletBatch = BasicTripletBatch<float>;

/// Row-wise Euclidean distance, [B,D] x [B,D] -> [B]. The gradient at a
/// zero distance is taken as zero.
template <typename T>
BasicTensor<T> pairwise_distance(BasicTape<T>& tape, const BasicTensor<T>& a,
                                 const BasicTensor<T>& b);

/// Adaptive margin M_i = (d+_i + d-_i) / 2 per triplet, as a constant with
/// no gradient history.
template <typename T>
BasicTensor<T> margin(const BasicTripletBatch<T>& batch);

/// Mean over triplets of the selected hinge. M is computed from the forward
/// distances and excluded from gradient flow.
template <typename T>
BasicTensor<T> lt_loss(BasicTape<T>& tape, const BasicTripletBatch<T>& batch,
                       LossMode mode = LossMode::kCorrected);

}  // namespace ltformer
