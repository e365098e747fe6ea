#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "ltformer/errors.hpp"
#include "ltformer/loss/lt_loss.hpp"
#include "ltformer/numerics/ops.hpp"

using namespace ltformer;
using ltformer::testing::grad_check;
using ltformer::testing::random_tensor;

namespace {

// Anchor at the origin with positive/negative on different axes, so
// d+ = dp and d- = dn exactly.
TripletBatch with_distances(const std::vector<std::pair<float, float>>& d) {
  const int64_t b = static_cast<int64_t>(d.size());
  Tensor a({b, 2}), p({b, 2}), n({b, 2});
  for (int64_t i = 0; i < b; ++i) {
    p[i * 2] = d[static_cast<size_t>(i)].first;
    n[i * 2 + 1] = d[static_cast<size_t>(i)].second;
  }
  return {a, p, n};
}

double eval(const TripletBatch& b, LossMode mode) {
  Tape tape(false);
  return lt_loss(tape, b, mode).item();
}

TensorD unit_rows(int64_t b, int64_t d, std::mt19937_64& rng) {
  TensorD x = random_tensor({b, d}, rng, -1, 1, false);
  TapeD tape(false);
  TensorD y = ops::l2_normalize(tape, x);
  y.set_requires_grad(true);
  return y;
}

}  // namespace

TEST(PairwiseDistance, Examples) {
  Tape tape(false);
  const Tensor x({2, 3}, std::vector<float>{1, 2, 3, -1, 0, 4});
  const Tensor z = pairwise_distance(tape, x, x);
  EXPECT_EQ(z.shape(), (Shape{2}));
  EXPECT_EQ(z[0], 0.0f);
  EXPECT_EQ(z[1], 0.0f);
  const Tensor e1({1, 4}, std::vector<float>{1, 0, 0, 0});
  const Tensor e2({1, 4}, std::vector<float>{0, 1, 0, 0});
  EXPECT_NEAR(pairwise_distance(tape, e1, e2)[0], std::sqrt(2.0), 1e-6);
  EXPECT_THROW(pairwise_distance(tape, e1, Tensor({1, 3})), DimensionError);
}

TEST(PairwiseDistance, MatchesScalarLoopAndIsSymmetric) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({8, 32}, rng, -1, 1, false).cast<float>();
  const Tensor b = random_tensor({8, 32}, rng, -1, 1, false).cast<float>();
  Tape tape(false);
  const Tensor ab = pairwise_distance(tape, a, b), ba = pairwise_distance(tape, b, a);
  for (int r = 0; r < 8; ++r) {
    double s = 0;
    for (int c = 0; c < 32; ++c) {
      const double d = double(a[r * 32 + c]) - b[r * 32 + c];
      s += d * d;
    }
    EXPECT_NEAR(ab[r], std::sqrt(s), 1e-6);
    EXPECT_EQ(ab[r], ba[r]);
    EXPECT_GE(ab[r], 0.0f);
  }
}

TEST(PairwiseDistance, ZeroDistanceHasZeroGradient) {
  Tensor a({1, 3}, 0.5f);
  a.set_requires_grad(true);
  Tape tape;
  backward(ops::sum(tape, pairwise_distance(tape, a, a.clone())), tape);
  for (float g : a.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(LtLoss, ExampleBothModes) {
  const auto b = with_distances({{1.0f, 2.0f}});
  EXPECT_NEAR(eval(b, LossMode::kCorrected), 0.5, 1e-6);
  EXPECT_NEAR(eval(b, LossMode::kPaperLiteral), 1.5, 1e-6);
}

TEST(LtLoss, PerfectPositiveGivesZero) {
  for (float c : {0.1f, 0.7f, 1.9f}) {
    EXPECT_EQ(eval(with_distances({{0.0f, c}}), LossMode::kCorrected), 0.0);
  }
}

TEST(LtLoss, CorrectedZeroIffThreeDPlusAtMostDMinus) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 2.0f);
  for (int k = 0; k < 200; ++k) {
    const float dp = u(rng), dn = u(rng);
    const double l = eval(with_distances({{dp, dn}}), LossMode::kCorrected);
    if (3 * dp <= dn) {
      EXPECT_EQ(l, 0.0);
    } else {
      EXPECT_GT(l, 0.0);
      EXPECT_NEAR(l, (3.0 * dp - dn) / 2.0, 1e-5);
    }
  }
  // boundary: d- == 3 d+
  EXPECT_EQ(eval(with_distances({{0.5f, 1.5f}}), LossMode::kCorrected), 0.0);
}

TEST(LtLoss, NonNegativeAndMonotone) {
  for (auto mode : {LossMode::kCorrected, LossMode::kPaperLiteral}) {
    double prev = -1;
    for (int i = 0; i <= 20; ++i) {
      const double l = eval(with_distances({{0.1f * i, 1.0f}}), mode);
      EXPECT_GE(l, 0.0);
      if (mode == LossMode::kCorrected) EXPECT_GE(l, prev);
      prev = l;
    }
  }
  double prev = 1e9;
  for (int i = 0; i <= 20; ++i) {
    const double l = eval(with_distances({{0.5f, 0.1f * i}}), LossMode::kCorrected);
    EXPECT_LE(l, prev);
    prev = l;
  }
}

TEST(LtLoss, PermutationInvariant) {
  const auto a = with_distances({{0.3f, 0.5f}, {0.9f, 0.4f}, {0.2f, 1.0f}});
  const auto b = with_distances({{0.2f, 1.0f}, {0.3f, 0.5f}, {0.9f, 0.4f}});
  for (auto mode : {LossMode::kCorrected, LossMode::kPaperLiteral}) {
    EXPECT_NEAR(eval(a, mode), eval(b, mode), 1e-7);
  }
}

TEST(Margin, Examples) {
  auto m = margin(with_distances({{1.0f, 1.0f}, {0.0f, 2.0f}}));
  EXPECT_FLOAT_EQ(m[0], 1.0f);
  EXPECT_FLOAT_EQ(m[1], 1.0f);
  EXPECT_FALSE(m.requires_grad());
}

TEST(LtLoss, GradientMatchesFrozenMarginOracle) {
  // Finite differences of a loss whose margin is a fixed constant equal to
  // the forward margin must equal lt_loss's analytic gradient.
  for (int k = 0; k < 5; ++k) {
    std::mt19937_64 rng(100 + k);
    std::vector<TensorD> in{unit_rows(4, 8, rng), unit_rows(4, 8, rng), unit_rows(4, 8, rng)};
    for (auto mode : {LossMode::kCorrected, LossMode::kPaperLiteral}) {
      const TensorD frozen = margin(BasicTripletBatch<double>{in[0], in[1], in[2]});
      const double sign = mode == LossMode::kCorrected ? -1.0 : 1.0;
      auto oracle = [&](TapeD& t) {
        const TensorD dp = pairwise_distance(t, in[0], in[1]);
        const TensorD dn = pairwise_distance(t, in[0], in[2]);
        TensorD h = ops::add(t, dp, ops::affine(t, dn, sign));
        h = ops::sub(t, h, mode == LossMode::kCorrected ? ops::affine(t, frozen, -1.0) : frozen);
        return ops::mean(t, ops::relu(t, h));
      };
      auto actual = [&](TapeD& t) {
        return lt_loss(t, BasicTripletBatch<double>{in[0], in[1], in[2]}, mode);
      };
      // analytic gradient of lt_loss vs numeric gradient of the frozen form
      for (auto& x : in) x.clear_grad();
      {
        TapeD tape;
        backward(actual(tape), tape);
      }
      std::vector<std::vector<double>> analytic;
      for (auto& x : in) analytic.emplace_back(x.grad().begin(), x.grad().end());
      const auto check = grad_check(oracle, in);
      EXPECT_LT(check.max_rel_error, 1e-3) << check.worst;
      for (size_t j = 0; j < in.size(); ++j) {
        for (size_t i = 0; i < analytic[j].size(); ++i) {
          EXPECT_NEAR(analytic[j][i], in[j].grad()[i], 1e-12);
        }
      }
    }
  }
}

TEST(LtLoss, PaperLiteralIsMeanHalfSum) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    const auto a = unit_rows(6, 16, rng), p = unit_rows(6, 16, rng), n = unit_rows(6, 16, rng);
    TapeD tape(false);
    const BasicTripletBatch<double> b{a, p, n};
    const TensorD dp = pairwise_distance(tape, a, p), dn = pairwise_distance(tape, a, n);
    double ref = 0;
    for (int i = 0; i < 6; ++i) ref += (dp[i] + dn[i]) / 2;
    EXPECT_NEAR(lt_loss(tape, b, LossMode::kPaperLiteral).item(), ref / 6, 1e-6);
  }
}

TEST(LtLoss, InvalidBatches) {
  Tape tape(false);
  EXPECT_THROW(lt_loss(tape, TripletBatch{Tensor({2, 3}), Tensor({2, 3}), Tensor({2, 4})}),
               DimensionError);
  EXPECT_THROW(lt_loss(tape, TripletBatch{Tensor({0, 3}), Tensor({0, 3}), Tensor({0, 3})}),
               DimensionError);
  EXPECT_THROW(lt_loss(tape, TripletBatch{}), DimensionError);
}

TEST(LossMode, Parse) {
  EXPECT_EQ(parse_loss_mode("corrected"), LossMode::kCorrected);
  EXPECT_EQ(parse_loss_mode("paper_literal"), LossMode::kPaperLiteral);
  EXPECT_EQ(to_string(LossMode::kPaperLiteral), "paper_literal");
  EXPECT_THROW(parse_loss_mode("hardnet"), ConfigError);
}
