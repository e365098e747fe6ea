#pragma once

#include "ltformer/numerics/tape.hpp"
#include "ltformer/numerics/tensor.hpp"

/// Differentiable tensor operations.
///
/// Every op takes the tape it records onto as its first argument. Nothing is
/// recorded when the tape is not recording or no input requires a gradient,
/// so a non-recording tape doubles as an inference context. Shapes must match
/// exactly; the only broadcast is linear() over leading dimensions.
namespace ltformer::ops {

/// 2-D convolution with zero padding. x [B,Cin,H,W], w [Cout,Cin,k,k],
/// b [Cout] -> [B,Cout,(H+2p-k)/s+1,(W+2p-k)/s+1].
template <typename T>
BasicTensor<T> conv2d(BasicTape<T>& tape, const BasicTensor<T>& x,
                      const BasicTensor<T>& w, const BasicTensor<T>& b,
                      int stride, int padding);

/// Per-channel 3x3 convolution, stride 1, padding 1. w [C,1,3,3], b [C].
template <typename T>
BasicTensor<T> depthwise_conv2d(BasicTape<T>& tape, const BasicTensor<T>& x,
                                const BasicTensor<T>& w,
                                const BasicTensor<T>& b);

/// depthwise_conv2d over channels-last tokens [B,H*W,C] on an HxW grid.
/// Same weights and result as the NCHW form without the layout round trip.
template <typename T>
BasicTensor<T> depthwise_conv2d_tokens(BasicTape<T>& tape, const BasicTensor<T>& x,
                                       const BasicTensor<T>& w,
                                       const BasicTensor<T>& b, int64_t height,
                                       int64_t width);

/// x [...,Din] * w[Dout,Din]^T + b[Dout].
template <typename T>
BasicTensor<T> linear(BasicTape<T>& tape, const BasicTensor<T>& x,
                      const BasicTensor<T>& w, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> layer_norm(BasicTape<T>& tape, const BasicTensor<T>& x,
                          const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = 1e-6);

/// Softmax over the last dimension (max-subtracted).
template <typename T>
BasicTensor<T> softmax(BasicTape<T>& tape, const BasicTensor<T>& x);

/// Tanh-approximated GELU.
template <typename T>
BasicTensor<T> gelu(BasicTape<T>& tape, const BasicTensor<T>& x);

/// [B,C,H,W] -> [B,C] spatial mean.
template <typename T>
BasicTensor<T> global_avg_pool(BasicTape<T>& tape, const BasicTensor<T>& x);

/// Row-wise unit normalization of [B,D]. Rows with norm <= min_norm raise
/// DegenerateDescriptorError.
template <typename T>
BasicTensor<T> l2_normalize(BasicTape<T>& tape, const BasicTensor<T>& x,
                            double min_norm = 1e-12);

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a,
                   const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(BasicTape<T>& tape, const BasicTensor<T>& a,
                   const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(BasicTape<T>& tape, const BasicTensor<T>& a,
                   const BasicTensor<T>& b);
/// x * scale + shift with constant scalars.
template <typename T>
BasicTensor<T> affine(BasicTape<T>& tape, const BasicTensor<T>& x, double scale,
                      double shift = 0.0);
template <typename T>
BasicTensor<T> relu(BasicTape<T>& tape, const BasicTensor<T>& x);
/// Mean of all elements; rank-0 result.
template <typename T>
BasicTensor<T> mean(BasicTape<T>& tape, const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x);

/// Copy with no gradient history.
template <typename T>
BasicTensor<T> detach(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> reshape(BasicTape<T>& tape, const BasicTensor<T>& x, Shape shape);

/// [B,C,H,W] -> [B,H*W,C].
template <typename T>
BasicTensor<T> nchw_to_tokens(BasicTape<T>& tape, const BasicTensor<T>& x);
/// [B,H*W,C] -> [B,C,H,W].
template <typename T>
BasicTensor<T> tokens_to_nchw(BasicTape<T>& tape, const BasicTensor<T>& x,
                              int64_t height, int64_t width);

/// [B,T,C] -> [B*heads,T,C/heads].
template <typename T>
BasicTensor<T> split_heads(BasicTape<T>& tape, const BasicTensor<T>& x, int heads);
/// [B*heads,T,Dh] -> [B,T,heads*Dh].
template <typename T>
BasicTensor<T> merge_heads(BasicTape<T>& tape, const BasicTensor<T>& x, int heads);

/// Batched matmul. a [G,M,K]; b [G,K,N], or [G,N,K] when transpose_b.
template <typename T>
BasicTensor<T> bmm(BasicTape<T>& tape, const BasicTensor<T>& a,
                   const BasicTensor<T>& b, bool transpose_b);

}  // namespace ltformer::ops
