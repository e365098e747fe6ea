#include "ltformer/loss/lt_loss.hpp"

#include <cmath>

#include "ltformer/errors.hpp"
#include "ltformer/numerics/ops.hpp"

namespace ltformer {

std::string to_string(LossMode mode) {
  return mode == LossMode::kCorrected ? "corrected" : "paper_literal";
}

LossMode parse_loss_mode(const std::string& text) {
  if (text == "corrected") return LossMode::kCorrected;
  if (text == "paper_literal") return LossMode::kPaperLiteral;
  throw ConfigError("unknown loss mode '" + text + "' (expected corrected|paper_literal)");
}

template <typename T>
void BasicTripletBatch<T>::validate() const {
  if (!anchor.defined() || !positive.defined() || !negative.defined()) {
    throw DimensionError("triplet batch has undefined members");
  }
  if (anchor.rank() != 2 || anchor.dim(0) < 1) {
    throw DimensionError("triplet batch must be [B,D] with B >= 1, got " +
                         shape_to_string(anchor.shape()));
  }
  if (positive.shape() != anchor.shape() || negative.shape() != anchor.shape()) {
    throw DimensionError("triplet members differ in shape");
  }
}

template <typename T>
BasicTensor<T> pairwise_distance(BasicTape<T>& tape, const BasicTensor<T>& a,
                                 const BasicTensor<T>& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError("pairwise_distance: expected matching [B,D], got " +
                         shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  const int64_t rows = a.dim(0), d = a.dim(1);
  BasicTensor<T> y({rows});
  for (int64_t r = 0; r < rows; ++r) {
    T sq = 0;
    for (int64_t i = 0; i < d; ++i) {
      const T diff = a[r * d + i] - b[r * d + i];
      sq += diff * diff;
    }
    y[r] = std::sqrt(sq);
  }
  if (tape.should_record({&a, &b})) {
    tape.record(y, {a, b}, [a, b, y, rows, d]() mutable {
      BasicTensor<T> ha = a, hb = b;
      T* ga = ha.requires_grad() ? ha.mutable_grad().data() : nullptr;
      T* gb = hb.requires_grad() ? hb.mutable_grad().data() : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const T dist = y[r];
        if (dist == T(0)) continue;
        const T scale = y.grad()[static_cast<size_t>(r)] / dist;
        for (int64_t i = 0; i < d; ++i) {
          const T g = scale * (a[r * d + i] - b[r * d + i]);
          if (ga) ga[r * d + i] += g;
          if (gb) gb[r * d + i] -= g;
        }
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> margin(const BasicTripletBatch<T>& batch) {
  batch.validate();
  BasicTape<T> no_grad(false);
  BasicTensor<T> dp = pairwise_distance(no_grad, batch.anchor, batch.positive);
  BasicTensor<T> dn = pairwise_distance(no_grad, batch.anchor, batch.negative);
  BasicTensor<T> m(dp.shape());
  for (int64_t i = 0; i < m.numel(); ++i) m[i] = (dp[i] + dn[i]) / T(2);
  return m;
}

template <typename T>
BasicTensor<T> lt_loss(BasicTape<T>& tape, const BasicTripletBatch<T>& batch,
                       LossMode mode) {
  batch.validate();
  BasicTensor<T> dp = pairwise_distance(tape, batch.anchor, batch.positive);
  BasicTensor<T> dn = pairwise_distance(tape, batch.anchor, batch.negative);
  BasicTensor<T> m(dp.shape());
  for (int64_t i = 0; i < m.numel(); ++i) m[i] = (dp[i] + dn[i]) / T(2);
  BasicTensor<T> hinge = mode == LossMode::kCorrected
                             ? ops::add(tape, ops::sub(tape, dp, dn), m)
                             : ops::sub(tape, ops::add(tape, dp, dn), m);
  return ops::mean(tape, ops::relu(tape, hinge));
}

template struct BasicTripletBatch<float>;
template struct BasicTripletBatch<double>;
template BasicTensor<float> pairwise_distance(BasicTape<float>&, const BasicTensor<float>&,
                                              const BasicTensor<float>&);
template BasicTensor<double> pairwise_distance(BasicTape<double>&,
                                               const BasicTensor<double>&,
                                               const BasicTensor<double>&);
template BasicTensor<float> margin(const BasicTripletBatch<float>&);
template BasicTensor<double> margin(const BasicTripletBatch<double>&);
template BasicTensor<float> lt_loss(BasicTape<float>&, const BasicTripletBatch<float>&,
                                    LossMode);
template BasicTensor<double> lt_loss(BasicTape<double>&, const BasicTripletBatch<double>&,
                                     LossMode);

}  // namespace ltformer
