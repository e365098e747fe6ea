#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "ltformer/errors.hpp"
#include "ltformer/numerics/ops.hpp"
#include "ltformer/numerics/optimizer.hpp"
#include "ltformer/numerics/parallel.hpp"

using namespace ltformer;
using ltformer::testing::grad_check;
using ltformer::testing::random_tensor;
using ltformer::testing::weighted_sum;

namespace {

constexpr double kTol = 1e-3;
constexpr int kInstances = 5;

Tensor iota(const Shape& shape, float start = 0.0f, float step = 1.0f) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = start + step * static_cast<float>(i);
  return t;
}

// Runs a gradient check of `op` reduced by weighted_sum on kInstances
// random inputs.
template <typename MakeInputs, typename Op>
void check_op(uint64_t seed, MakeInputs make, Op op) {
  for (int k = 0; k < kInstances; ++k) {
    std::mt19937_64 rng(seed * 100 + static_cast<uint64_t>(k));
    std::vector<TensorD> in = make(rng);
    auto f = [&](TapeD& tape) { return weighted_sum(tape, op(tape, in), seed + k); };
    const auto r = grad_check(f, in);
    EXPECT_LT(r.max_rel_error, kTol) << "instance " << k << ": " << r.worst;
    EXPECT_GT(r.checked, 0);
  }
}

}  // namespace

TEST(Tensor, ShapeAndDataInvariant) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  EXPECT_EQ(t.dim(-1), 4);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor({-1}), DimensionError);
  EXPECT_THROW(t.dim(3), DimensionError);
  EXPECT_THROW(t.item(), ContractError);
  EXPECT_THROW(t.reshaped({5, 5}), DimensionError);
}

TEST(Tensor, HandlesShareStorageCloneDoesNot) {
  Tensor a({3}, 1.0f);
  Tensor b = a;
  Tensor c = a.clone();
  b[0] = 7.0f;
  EXPECT_EQ(a[0], 7.0f);
  EXPECT_EQ(c[0], 1.0f);
  EXPECT_TRUE(a.same_storage(b));
  EXPECT_FALSE(a.same_storage(c));
}

TEST(Tensor, GradBufferMatchesDataLength) {
  Tensor a({2, 5});
  EXPECT_FALSE(a.has_grad());
  EXPECT_EQ(a.mutable_grad().size(), 10u);
  a.zero_grad();
  EXPECT_EQ(a.grad().size(), 10u);
}

TEST(Backward, SumGivesOnes) {
  Tensor x({3}, std::vector<float>{1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  backward(ops::sum(tape, x), tape);
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{1, 1, 1}));
}

TEST(Backward, SquareGivesTwoX) {
  Tensor x({2}, std::vector<float>{1, 2});
  x.set_requires_grad(true);
  Tape tape;
  backward(ops::sum(tape, ops::mul(tape, x, x)), tape);
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 4.0f);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x({2}, std::vector<float>{1, 2});
  x.set_requires_grad(true);
  Tape tape;
  const Tensor loss = ops::sum(tape, ops::mul(tape, x, x));
  backward(loss, tape);
  backward(loss, tape);
  EXPECT_FLOAT_EQ(x.grad()[0], 4.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 8.0f);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x({3}, 1.0f);
  x.set_requires_grad(true);
  Tape tape;
  const Tensor y = ops::affine(tape, x, 2.0);
  EXPECT_THROW(backward(y, tape), ContractError);
}

TEST(Backward, LossFromAnotherTapeIsContractError) {
  Tensor x({3}, 1.0f);
  x.set_requires_grad(true);
  Tape a, b;
  const Tensor loss = ops::sum(a, x);
  EXPECT_THROW(backward(loss, b), ContractError);
}

TEST(Tape, NonRecordingTapeRecordsNothing) {
  Tensor x({3}, 1.0f);
  x.set_requires_grad(true);
  Tape tape(false);
  ops::sum(tape, ops::gelu(tape, x));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, NodesFollowExecutionOrder) {
  Tensor x({4}, 0.5f);
  x.set_requires_grad(true);
  Tape tape;
  const Tensor y = ops::gelu(tape, x);
  const Tensor z = ops::sum(tape, y);
  EXPECT_EQ(tape.size(), 2u);
  EXPECT_TRUE(tape.contains(y));
  EXPECT_TRUE(tape.contains(z));
}

TEST(Tape, ReplayGivesIdenticalGradients) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 3, 8}, rng).cast<float>();
  Tensor g = random_tensor({8}, rng).cast<float>();
  Tensor b = random_tensor({8}, rng).cast<float>();
  for (auto* t : {&x, &g, &b}) t->set_requires_grad(true);
  auto run = [&] {
    for (auto* t : {&x, &g, &b}) t->clear_grad();
    Tape tape;
    backward(ops::sum(tape, ops::gelu(tape, ops::layer_norm(tape, x, g, b))), tape);
    return std::vector<float>(x.grad().begin(), x.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Conv2d, EmbeddingShape) {
  Tape tape(false);
  const Tensor y = ops::conv2d(tape, Tensor({1, 1, 128, 128}), Tensor({16, 1, 7, 7}),
                               Tensor({16}), 4, 3);
  EXPECT_EQ(y.shape(), (Shape{1, 16, 32, 32}));
}

TEST(Conv2d, ZerosInZerosOut) {
  Tape tape(false);
  std::mt19937_64 rng(1);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng).cast<float>();
  const Tensor y = ops::conv2d(tape, Tensor({1, 2, 5, 5}), w, Tensor({3}), 1, 1);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, MatchesDirectLoop) {
  std::mt19937_64 rng(2);
  const TensorD x = random_tensor({2, 3, 7, 6}, rng, -1, 1, false);
  const TensorD w = random_tensor({4, 3, 3, 3}, rng, -1, 1, false);
  const TensorD b = random_tensor({4}, rng, -1, 1, false);
  TapeD tape(false);
  const TensorD y = ops::conv2d(tape, x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 3}));
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) {
          double acc = b[o];
          for (int c = 0; c < 3; ++c)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const int yi = i * 2 - 1 + ki, xj = j * 2 - 1 + kj;
                if (yi < 0 || yi >= 7 || xj < 0 || xj >= 6) continue;
                acc += x[((n * 3 + c) * 7 + yi) * 6 + xj] * w[((o * 3 + c) * 3 + ki) * 3 + kj];
              }
          EXPECT_NEAR(y[((n * 4 + o) * 4 + i) * 3 + j], acc, 1e-12);
        }
}

TEST(Conv2d, Errors) {
  Tape tape(false);
  EXPECT_THROW(ops::conv2d(tape, Tensor({1, 2, 5, 5}), Tensor({3, 1, 3, 3}), Tensor({3}), 1, 1),
               DimensionError);
  EXPECT_THROW(ops::conv2d(tape, Tensor({1, 1, 2, 2}), Tensor({3, 1, 5, 5}), Tensor({3}), 1, 0),
               DimensionError);
  EXPECT_THROW(ops::conv2d(tape, Tensor({1, 1, 5, 5}), Tensor({3, 1, 3, 3}), Tensor({3}), 0, 1),
               ContractError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  check_op(
      11,
      [](auto& rng) {
        return std::vector<TensorD>{random_tensor({1, 2, 5, 5}, rng),
                                    random_tensor({3, 2, 3, 3}, rng),
                                    random_tensor({3}, rng)};
      },
      [](TapeD& t, auto& in) { return ops::conv2d(t, in[0], in[1], in[2], 1, 1); });
  check_op(
      12,
      [](auto& rng) {
        return std::vector<TensorD>{random_tensor({2, 1, 9, 9}, rng),
                                    random_tensor({2, 1, 7, 7}, rng),
                                    random_tensor({2}, rng)};
      },
      [](TapeD& t, auto& in) { return ops::conv2d(t, in[0], in[1], in[2], 4, 3); });
}

TEST(DepthwiseConv, IdentityKernel) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 3, 5, 4}, rng).cast<float>();
  Tensor w({3, 1, 3, 3});
  for (int c = 0; c < 3; ++c) w[c * 9 + 4] = 1.0f;
  Tape tape(false);
  const Tensor y = ops::depthwise_conv2d(tape, x, w, Tensor({3}));
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(DepthwiseConv, AveragingKernelAttenuatesBorder) {
  Tape tape(false);
  const Tensor y = ops::depthwise_conv2d(tape, Tensor({1, 1, 5, 5}, 1.0f),
                                         Tensor({1, 1, 3, 3}, 1.0f / 9.0f), Tensor({1}));
  EXPECT_NEAR(y[2 * 5 + 2], 1.0f, 1e-6);   // interior
  EXPECT_NEAR(y[0], 4.0f / 9.0f, 1e-6);    // corner sees 4 taps
  EXPECT_NEAR(y[2], 6.0f / 9.0f, 1e-6);    // edge sees 6 taps
}

TEST(DepthwiseConv, ChannelMismatch) {
  Tape tape(false);
  EXPECT_THROW(ops::depthwise_conv2d(tape, Tensor({1, 2, 4, 4}), Tensor({3, 1, 3, 3}),
                                     Tensor({3})),
               DimensionError);
  EXPECT_THROW(ops::depthwise_conv2d_tokens(tape, Tensor({1, 16, 2}), Tensor({3, 1, 3, 3}),
                                            Tensor({3}), 4, 4),
               DimensionError);
  EXPECT_THROW(ops::depthwise_conv2d_tokens(tape, Tensor({1, 15, 3}), Tensor({3, 1, 3, 3}),
                                            Tensor({3}), 4, 4),
               DimensionError);
}

TEST(DepthwiseConv, GradientsMatchFiniteDifferences) {
  check_op(
      21,
      [](auto& rng) {
        return std::vector<TensorD>{random_tensor({1, 4, 6, 6}, rng),
                                    random_tensor({4, 1, 3, 3}, rng), random_tensor({4}, rng)};
      },
      [](TapeD& t, auto& in) { return ops::depthwise_conv2d(t, in[0], in[1], in[2]); });
  check_op(
      22,
      [](auto& rng) {
        return std::vector<TensorD>{random_tensor({2, 20, 3}, rng),
                                    random_tensor({3, 1, 3, 3}, rng), random_tensor({3}, rng)};
      },
      [](TapeD& t, auto& in) {
        return ops::depthwise_conv2d_tokens(t, in[0], in[1], in[2], 4, 5);
      });
}

TEST(DepthwiseConv, TokenLayoutMatchesGridLayout) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 5; ++k) {
    TensorD x = random_tensor({2, 5, 4, 3}, rng);
    TensorD w = random_tensor({5, 1, 3, 3}, rng);
    TensorD b = random_tensor({5}, rng);
    auto grads = [&](bool tokens) {
      for (auto* t : {&x, &w, &b}) t->clear_grad();
      TapeD tape;
      TensorD y;
      if (tokens) {
        y = ops::tokens_to_nchw(
            tape, ops::depthwise_conv2d_tokens(tape, ops::nchw_to_tokens(tape, x), w, b, 4, 3),
            4, 3);
      } else {
        y = ops::depthwise_conv2d(tape, x, w, b);
      }
      backward(weighted_sum(tape, y, 9), tape);
      std::vector<double> out(y.data().begin(), y.data().end());
      for (auto* t : {&x, &w, &b}) out.insert(out.end(), t->grad().begin(), t->grad().end());
      return out;
    };
    const auto a = grads(false), c = grads(true);
    ASSERT_EQ(a.size(), c.size());
    for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], c[i], 1e-12);
  }
}

TEST(Linear, IdentityAndShape) {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({2, 3, 4}, rng).cast<float>();
  Tensor eye({4, 4});
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0f;
  Tape tape(false);
  const Tensor y = ops::linear(tape, x, eye, Tensor({4}));
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
  EXPECT_EQ(ops::linear(tape, x, Tensor({5, 4}), Tensor({5})).shape(), (Shape{2, 3, 5}));
  EXPECT_THROW(ops::linear(tape, x, Tensor({5, 3}), Tensor({5})), DimensionError);
  EXPECT_THROW(ops::linear(tape, x, Tensor({5, 4}), Tensor({4})), DimensionError);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  check_op(
      31,
      [](auto& rng) {
        return std::vector<TensorD>{random_tensor({2, 3, 4}, rng), random_tensor({5, 4}, rng),
                                    random_tensor({5}, rng)};
      },
      [](TapeD& t, auto& in) { return ops::linear(t, in[0], in[1], in[2]); });
}

TEST(LayerNorm, SliceStatistics) {
  std::mt19937_64 rng(7);
  const TensorD x = random_tensor({6, 32}, rng, -3, 5, false);
  TapeD tape(false);
  const TensorD y = ops::layer_norm(tape, x, TensorD({32}, 1.0), TensorD({32}));
  for (int r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 32; ++c) mean += y[r * 32 + c];
    mean /= 32;
    for (int c = 0; c < 32; ++c) var += (y[r * 32 + c] - mean) * (y[r * 32 + c] - mean);
    var /= 32;
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(LayerNorm, ConstantSliceAndSymmetricPair) {
  Tape tape(false);
  const Tensor y = ops::layer_norm(tape, Tensor({1, 4}, 3.0f), Tensor({4}, 1.0f), Tensor({4}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
  const Tensor z = ops::layer_norm(tape, Tensor({2}, std::vector<float>{-1, 1}),
                                   Tensor({2}, 1.0f), Tensor({2}));
  EXPECT_NEAR(z[0], -1.0f, 1e-5);
  EXPECT_NEAR(z[1], 1.0f, 1e-5);
  EXPECT_THROW(ops::layer_norm(tape, Tensor({2, 4}), Tensor({3}), Tensor({4})), DimensionError);
  EXPECT_THROW(ops::layer_norm(tape, Tensor({2, 4}), Tensor({4}), Tensor({4}), 0.0),
               ContractError);
}

TEST(LayerNorm, GradientsMatchFiniteDifferences) {
  check_op(
      41,
      [](auto& rng) {
        return std::vector<TensorD>{random_tensor({2, 4, 8}, rng), random_tensor({8}, rng),
                                    random_tensor({8}, rng)};
      },
      [](TapeD& t, auto& in) { return ops::layer_norm(t, in[0], in[1], in[2]); });
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({5, 7}, rng, -20, 20, false).cast<float>();
  Tape tape(false);
  const Tensor y = ops::softmax(tape, x);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) s += y[r * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, UniformAndStable) {
  Tape tape(false);
  const Tensor u = ops::softmax(tape, Tensor({4}, 2.0f));
  for (float v : u.data()) EXPECT_FLOAT_EQ(v, 0.25f);
  const Tensor s = ops::softmax(tape, Tensor({2}, std::vector<float>{1000, 0}));
  EXPECT_NEAR(s[0], 1.0f, 1e-6);
  EXPECT_NEAR(s[1], 0.0f, 1e-6);
  EXPECT_TRUE(std::isfinite(s[0]) && std::isfinite(s[1]));
}

TEST(Softmax, GradientsMatchFiniteDifferences) {
  check_op(
      51, [](auto& rng) { return std::vector<TensorD>{random_tensor({3, 6}, rng, -3, 3)}; },
      [](TapeD& t, auto& in) { return ops::softmax(t, in[0]); });
}

TEST(Gelu, Values) {
  Tape tape(false);
  const Tensor y = ops::gelu(tape, Tensor({3}, std::vector<float>{0, 10, -10}));
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_NEAR(y[1], 10.0f, 1e-5);
  EXPECT_NEAR(y[2], 0.0f, 1e-5);
  // tanh form at 1: 0.5 (1 + tanh(sqrt(2/pi) (1 + 0.044715)))
  const double ref = 0.5 * (1 + std::tanh(std::sqrt(2 / M_PI) * 1.044715));
  EXPECT_NEAR(ops::gelu(tape, Tensor({1}, 1.0f))[0], ref, 1e-6);
}

TEST(Gelu, GradientsMatchFiniteDifferences) {
  check_op(
      61, [](auto& rng) { return std::vector<TensorD>{random_tensor({4, 5}, rng, -4, 4)}; },
      [](TapeD& t, auto& in) { return ops::gelu(t, in[0]); });
}

TEST(GlobalAvgPool, Values) {
  Tape tape(false);
  const Tensor c = ops::global_avg_pool(tape, Tensor({2, 3, 4, 4}, 0.7f));
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  for (float v : c.data()) EXPECT_FLOAT_EQ(v, 0.7f);
  const Tensor m = ops::global_avg_pool(tape, Tensor({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4}));
  EXPECT_FLOAT_EQ(m[0], 2.5f);
  EXPECT_THROW(ops::global_avg_pool(tape, Tensor({2, 3})), DimensionError);
}

TEST(GlobalAvgPool, GradientsMatchFiniteDifferences) {
  check_op(
      71, [](auto& rng) { return std::vector<TensorD>{random_tensor({2, 3, 3, 4}, rng)}; },
      [](TapeD& t, auto& in) { return ops::global_avg_pool(t, in[0]); });
}

TEST(L2Normalize, Values) {
  Tape tape(false);
  const Tensor y = ops::l2_normalize(tape, Tensor({1, 2}, std::vector<float>{3, 4}));
  EXPECT_FLOAT_EQ(y[0], 0.6f);
  EXPECT_FLOAT_EQ(y[1], 0.8f);
  const Tensor unit({1, 3}, std::vector<float>{0, 1, 0});
  const Tensor u = ops::l2_normalize(tape, unit);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(u[i], unit[i], 1e-6);
  EXPECT_THROW(ops::l2_normalize(tape, Tensor({2, 3})), DegenerateDescriptorError);
}

TEST(L2Normalize, UnitRows) {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({4, 128}, rng, -2, 2, false).cast<float>();
  Tape tape(false);
  const Tensor y = ops::l2_normalize(tape, x);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 128; ++c) s += double(y[r * 128 + c]) * y[r * 128 + c];
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-5);
  }
}

TEST(L2Normalize, GradientsMatchFiniteDifferences) {
  check_op(
      81, [](auto& rng) { return std::vector<TensorD>{random_tensor({4, 16}, rng)}; },
      [](TapeD& t, auto& in) { return ops::l2_normalize(t, in[0]); });
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  auto two = [](auto& rng) {
    return std::vector<TensorD>{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
  };
  check_op(91, two, [](TapeD& t, auto& in) { return ops::add(t, in[0], in[1]); });
  check_op(92, two, [](TapeD& t, auto& in) { return ops::sub(t, in[0], in[1]); });
  check_op(93, two, [](TapeD& t, auto& in) { return ops::mul(t, in[0], in[1]); });
  auto one = [](auto& rng) { return std::vector<TensorD>{random_tensor({3, 4}, rng)}; };
  check_op(94, one, [](TapeD& t, auto& in) { return ops::affine(t, in[0], -1.7, 0.3); });
  check_op(95, one, [](TapeD& t, auto& in) { return ops::mean(t, in[0]); });
  check_op(96, one, [](TapeD& t, auto& in) { return ops::reshape(t, in[0], {2, 6}); });
  // relu away from its kink
  check_op(
      97,
      [](auto& rng) {
        TensorD x = random_tensor({3, 4}, rng);
        for (int64_t i = 0; i < x.numel(); ++i) x[i] += x[i] >= 0 ? 0.1 : -0.1;
        return std::vector<TensorD>{x};
      },
      [](TapeD& t, auto& in) { return ops::relu(t, in[0]); });
}

TEST(Elementwise, ShapesMustMatch) {
  Tape tape(false);
  EXPECT_THROW(ops::add(tape, Tensor({2, 3}), Tensor({3, 2})), DimensionError);
  EXPECT_THROW(ops::mul(tape, Tensor({2}), Tensor({3})), DimensionError);
  EXPECT_THROW(ops::reshape(tape, Tensor({2, 3}), {4}), DimensionError);
}

TEST(Layout, RoundTripsAndGradients) {
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({2, 3, 4, 5}, rng).cast<float>();
  Tape tape(false);
  const Tensor tok = ops::nchw_to_tokens(tape, x);
  EXPECT_EQ(tok.shape(), (Shape{2, 20, 3}));
  EXPECT_EQ(tok[(1 * 20 + 7) * 3 + 2], x[((1 * 3 + 2) * 4 + 1) * 5 + 2]);
  const Tensor back = ops::tokens_to_nchw(tape, tok, 4, 5);
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
  const Tensor h = ops::split_heads(tape, Tensor({2, 5, 6}), 3);
  EXPECT_EQ(h.shape(), (Shape{6, 5, 2}));
  EXPECT_THROW(ops::split_heads(tape, Tensor({2, 5, 7}), 3), DimensionError);

  check_op(
      101, [](auto& rng) { return std::vector<TensorD>{random_tensor({2, 3, 2, 4}, rng)}; },
      [](TapeD& t, auto& in) { return ops::nchw_to_tokens(t, in[0]); });
  check_op(
      102, [](auto& rng) { return std::vector<TensorD>{random_tensor({2, 6, 3}, rng)}; },
      [](TapeD& t, auto& in) { return ops::tokens_to_nchw(t, in[0], 2, 3); });
  check_op(
      103, [](auto& rng) { return std::vector<TensorD>{random_tensor({2, 5, 6}, rng)}; },
      [](TapeD& t, auto& in) { return ops::split_heads(t, in[0], 3); });
  check_op(
      104, [](auto& rng) { return std::vector<TensorD>{random_tensor({6, 5, 2}, rng)}; },
      [](TapeD& t, auto& in) { return ops::merge_heads(t, in[0], 3); });
}

TEST(Bmm, ValuesAndGradients) {
  Tape tape(false);
  const Tensor a({1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const Tensor b({1, 2, 2}, std::vector<float>{5, 6, 7, 8});
  const Tensor c = ops::bmm(tape, a, b, false);
  EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()),
            (std::vector<float>{19, 22, 43, 50}));
  const Tensor d = ops::bmm(tape, a, b, true);
  EXPECT_EQ(std::vector<float>(d.data().begin(), d.data().end()),
            (std::vector<float>{17, 23, 39, 53}));
  EXPECT_THROW(ops::bmm(tape, Tensor({1, 2, 3}), Tensor({1, 2, 3}), false), DimensionError);

  check_op(
      111,
      [](auto& rng) {
        return std::vector<TensorD>{random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)};
      },
      [](TapeD& t, auto& in) { return ops::bmm(t, in[0], in[1], false); });
  check_op(
      112,
      [](auto& rng) {
        return std::vector<TensorD>{random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)};
      },
      [](TapeD& t, auto& in) { return ops::bmm(t, in[0], in[1], true); });
}

TEST(Detach, CutsHistory) {
  Tensor x({2}, 1.0f);
  x.set_requires_grad(true);
  const Tensor d = ops::detach(x);
  EXPECT_FALSE(d.requires_grad());
  EXPECT_FALSE(d.same_storage(x));
}

TEST(Determinism, ForwardIsBitIdentical) {
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({2, 4, 8, 8}, rng).cast<float>();
  const Tensor w = random_tensor({6, 4, 3, 3}, rng).cast<float>();
  auto run = [&] {
    Tape tape(false);
    const Tensor y = ops::gelu(tape, ops::conv2d(tape, x, w, Tensor({6}), 2, 1));
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Determinism, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({3, 4, 12, 12}, rng).cast<float>();
  Tensor w = random_tensor({8, 4, 3, 3}, rng).cast<float>();
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  auto run = [&](int threads) {
    set_num_threads(threads);
    x.clear_grad();
    w.clear_grad();
    Tape tape;
    const Tensor y = ops::conv2d(tape, x, w, Tensor({8}), 1, 1);
    const Tensor t = ops::depthwise_conv2d_tokens(
        tape, ops::nchw_to_tokens(tape, y), Tensor({8, 1, 3, 3}, 0.1f), Tensor({8}), 12, 12);
    backward(ops::sum(tape, ops::mul(tape, t, t)), tape);
    std::vector<float> out(t.data().begin(), t.data().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  const auto one = run(1);
  const auto three = run(3);
  set_num_threads(1);
  EXPECT_EQ(one, three);
  EXPECT_THROW(set_num_threads(0), ConfigError);
}

TEST(Sgd, PlainGradientDescent) {
  ParameterList params{{"p", Tensor({2}, std::vector<float>{1.0f, -2.0f})}};
  params[0].tensor.mutable_grad()[0] = 0.5f;
  params[0].tensor.mutable_grad()[1] = -1.0f;
  std::map<std::string, Tensor> v;
  sgd_step(params, v, 0.1, 0.0);
  EXPECT_FLOAT_EQ(params[0].tensor[0], 1.0f - 0.1f * 0.5f);
  EXPECT_FLOAT_EQ(params[0].tensor[1], -2.0f + 0.1f);
  EXPECT_FALSE(params[0].tensor.has_grad() &&
               (params[0].tensor.grad()[0] != 0 || params[0].tensor.grad()[1] != 0));
}

TEST(Sgd, MomentumSecondUpdateIsOnePointNineTimesLrG) {
  Tensor p({1}, 0.0f);
  ParameterList params{{"p", p}};
  SgdMomentum opt;
  EXPECT_DOUBLE_EQ(opt.learning_rate(), 0.001);
  EXPECT_DOUBLE_EQ(opt.momentum(), 0.9);
  const float g = 2.0f;
  p.mutable_grad()[0] = g;
  opt.step(params);
  const float after_one = p[0];
  p.mutable_grad()[0] = g;
  opt.step(params);
  EXPECT_NEAR(after_one, -0.001 * g, 1e-9);
  EXPECT_NEAR(after_one - p[0], 0.001 * 1.9 * g, 1e-8);
}

TEST(Sgd, Errors) {
  ParameterList params{{"p", Tensor({1})}};
  std::map<std::string, Tensor> v;
  EXPECT_THROW(sgd_step(params, v, 0.1, 0.5), ContractError);  // no gradient
  params[0].tensor.mutable_grad();
  EXPECT_THROW(sgd_step(params, v, 0.0, 0.5), ContractError);
  EXPECT_THROW(sgd_step(params, v, 0.1, 1.0), ContractError);
  EXPECT_THROW(SgdMomentum(-1.0, 0.5), ConfigError);
}
