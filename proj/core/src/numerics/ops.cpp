#include "ltformer/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "ltformer/errors.hpp"
#include "ltformer/numerics/parallel.hpp"

namespace ltformer::ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b,
                        const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_to_string(a.shape()) + " vs " +
                                      shape_to_string(b.shape()));
}

// Gradient accumulation target, or nullptr when `t` needs no gradient.
// Handles share storage, so a const handle still names a mutable buffer.
template <typename T>
T* grad_target(const BasicTensor<T>& t) {
  if (!t.requires_grad()) return nullptr;
  BasicTensor<T> handle = t;
  return handle.mutable_grad().data();
}

// Unrolls input patches into columns: rows (c,ky,kx), columns (oy,ox).
template <typename T>
void im2col(const T* x, int64_t cin, int64_t h, int64_t w, int k, int stride,
            int pad, int64_t ho, int64_t wo, T* cols) {
  for (int64_t c = 0; c < cin; ++c) {
    const T* plane = x + c * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + iy * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int64_t cin, int64_t h, int64_t w, int k, int stride,
            int pad, int64_t ho, int64_t wo, T* dx) {
  for (int64_t c = 0; c < cin; ++c) {
    T* plane = dx + c * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + iy * w;
          const T* src = row + oy * wo;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// dst[c][r] (op)= src[r][c] for a rows x cols block, cache-tiled.
template <typename T, bool kAccumulate>
void transpose_into(const T* src, T* dst, int64_t rows, int64_t cols) {
  constexpr int64_t kTile = 16;
  for (int64_t r0 = 0; r0 < rows; r0 += kTile) {
    const int64_t r1 = std::min(rows, r0 + kTile);
    for (int64_t c0 = 0; c0 < cols; c0 += kTile) {
      const int64_t c1 = std::min(cols, c0 + kTile);
      // Column-outer keeps the writes contiguous; row-outer hits 4K aliasing
      // when rows is a power of two.
      for (int64_t c = c0; c < c1; ++c) {
        for (int64_t r = r0; r < r1; ++r) {
          if constexpr (kAccumulate) {
            dst[c * rows + r] += src[r * cols + c];
          } else {
            dst[c * rows + r] = src[r * cols + c];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
BasicTensor<T> conv2d(BasicTape<T>& tape, const BasicTensor<T>& x,
                      const BasicTensor<T>& w, const BasicTensor<T>& b,
                      int stride, int padding) {
  require(x.rank() == 4, "conv2d: input must be [B,Cin,H,W], got " +
                             shape_to_string(x.shape()));
  require(w.rank() == 4 && w.dim(2) == w.dim(3),
          "conv2d: weight must be [Cout,Cin,k,k], got " + shape_to_string(w.shape()));
  require(x.dim(1) == w.dim(1), "conv2d: input channels " + std::to_string(x.dim(1)) +
                                    " != weight channels " + std::to_string(w.dim(1)));
  require(b.rank() == 1 && b.dim(0) == w.dim(0), "conv2d: bias must be [Cout]");
  if (stride < 1 || padding < 0) throw ContractError("conv2d: stride >= 1, padding >= 0");
  const int64_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  require(h + 2 * padding >= k && wd + 2 * padding >= k,
          "conv2d: kernel larger than padded input");
  const int64_t ho = (h + 2 * padding - k) / stride + 1;
  const int64_t wo = (wd + 2 * padding - k) / stride + 1;
  const int64_t kk = cin * k * k, hw = ho * wo;

  BasicTensor<T> y({batch, cout, ho, wo});
  const T* xp = x.ptr();
  const T* bp = b.ptr();
  T* yp = y.ptr();
  CMapR<T> wm(w.ptr(), cout, kk);
  parallel_for(batch, [&](int64_t begin, int64_t end) {
    AlignedVector<T> cols(static_cast<size_t>(kk * hw));
    for (int64_t n = begin; n < end; ++n) {
      im2col(xp + n * cin * h * wd, cin, h, wd, k, stride, padding, ho, wo, cols.data());
      MapR<T> out(yp + n * cout * hw, cout, hw);
      out.noalias() = wm * CMapR<T>(cols.data(), kk, hw);
      for (int64_t c = 0; c < cout; ++c) out.row(c).array() += bp[c];
    }
  });

  if (tape.should_record({&x, &w, &b})) {
    tape.record(y, {x, w, b}, [x, w, b, y, stride, padding, batch, cin, h, wd, cout,
                               k, ho, wo, kk, hw]() mutable {
      const T* dy = y.grad().data();
      T* dx = grad_target(x);
      T* dw = grad_target(w);
      T* db = grad_target(b);
      CMapR<T> wm(w.ptr(), cout, kk);
      if (dw != nullptr || db != nullptr) {
        AlignedVector<T> cols(static_cast<size_t>(kk * hw));
        for (int64_t n = 0; n < batch; ++n) {
          CMapR<T> g(dy + n * cout * hw, cout, hw);
          if (dw != nullptr) {
            im2col(x.ptr() + n * cin * h * wd, cin, h, wd, k, stride, padding, ho, wo,
                   cols.data());
            MapR<T>(dw, cout, kk).noalias() +=
                g * CMapR<T>(cols.data(), kk, hw).transpose();
          }
          if (db != nullptr) {
            for (int64_t c = 0; c < cout; ++c) db[c] += g.row(c).sum();
          }
        }
      }
      if (dx != nullptr) {
        parallel_for(batch, [&](int64_t begin, int64_t end) {
          MatR<T> dcols(kk, hw);
          for (int64_t n = begin; n < end; ++n) {
            dcols.noalias() = wm.transpose() * CMapR<T>(dy + n * cout * hw, cout, hw);
            col2im(dcols.data(), cin, h, wd, k, stride, padding, ho, wo,
                   dx + n * cin * h * wd);
          }
        });
      }
    });
  }
  return y;
}

namespace {

// out[j] += k0*src[j-1] + k1*src[j] + k2*src[j+1] with zero padding.
template <typename T>
void correlate_row(const T* src, T* out, int64_t w, T k0, T k1, T k2) {
  if (w == 1) {
    out[0] += k1 * src[0];
    return;
  }
  out[0] += k1 * src[0] + k2 * src[1];
  for (int64_t j = 1; j < w - 1; ++j) {
    out[j] += k0 * src[j - 1] + k1 * src[j] + k2 * src[j + 1];
  }
  out[w - 1] += k0 * src[w - 2] + k1 * src[w - 1];
}

template <typename T>
T dot(const T* a, const T* b, int64_t n) {
  if (n <= 0) return T(0);
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  return Eigen::Map<const Vec>(a, n).dot(Eigen::Map<const Vec>(b, n));
}

}  // namespace

template <typename T>
BasicTensor<T> depthwise_conv2d(BasicTape<T>& tape, const BasicTensor<T>& x,
                                const BasicTensor<T>& w, const BasicTensor<T>& b) {
  require(x.rank() == 4, "depthwise_conv2d: input must be [B,C,H,W]");
  const int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  require(w.shape() == Shape{ch, 1, 3, 3},
          "depthwise_conv2d: weight must be [C,1,3,3] with C=" + std::to_string(ch) +
              ", got " + shape_to_string(w.shape()));
  require(b.shape() == Shape{ch}, "depthwise_conv2d: bias must be [C]");

  BasicTensor<T> y(x.shape());
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  const T* bp = b.ptr();
  T* yp = y.ptr();
  parallel_for(batch * ch, [&](int64_t begin, int64_t end) {
    for (int64_t p = begin; p < end; ++p) {
      const int64_t c = p % ch;
      const T* src = xp + p * h * wd;
      const T* kw = wp + c * 9;
      T* dst = yp + p * h * wd;
      std::fill(dst, dst + h * wd, bp[c]);
      for (int64_t i = 0; i < h; ++i) {
        for (int dy = -1; dy <= 1; ++dy) {
          const int64_t ii = i + dy;
          if (ii < 0 || ii >= h) continue;
          const T* k = kw + (dy + 1) * 3;
          correlate_row(src + ii * wd, dst + i * wd, wd, k[0], k[1], k[2]);
        }
      }
    }
  });

  if (tape.should_record({&x, &w, &b})) {
    tape.record(y, {x, w, b}, [x, w, b, y, batch, ch, h, wd]() mutable {
      const T* gy = y.grad().data();
      T* gx = grad_target(x);
      T* gw = grad_target(w);
      T* gb = grad_target(b);
      const T* xp = x.ptr();
      const T* wp = w.ptr();
      // Each channel owns its weight gradient; the batch loop stays in order.
      parallel_for(ch, [&](int64_t begin, int64_t end) {
        for (int64_t c = begin; c < end; ++c) {
          const T* kw = wp + c * 9;
          for (int64_t n = 0; n < batch; ++n) {
            const int64_t p = n * ch + c;
            const T* g = gy + p * h * wd;
            const T* src = xp + p * h * wd;
            for (int64_t i = 0; i < h; ++i) {
              const T* grow = g + i * wd;
              if (gb != nullptr) {
                T acc = 0;
                for (int64_t j = 0; j < wd; ++j) acc += grow[j];
                gb[c] += acc;
              }
              for (int dy = -1; dy <= 1; ++dy) {
                const int64_t ii = i + dy;
                if (ii < 0 || ii >= h) continue;
                const T* k = kw + (dy + 1) * 3;
                const T* srow = src + ii * wd;
                if (gw != nullptr) {
                  T* gk = gw + c * 9 + (dy + 1) * 3;
                  gk[0] += dot(grow + 1, srow, wd - 1);
                  gk[1] += dot(grow, srow, wd);
                  gk[2] += dot(grow, srow + 1, wd - 1);
                }
                if (gx != nullptr) {
                  // Transposed correlation: flipped taps.
                  correlate_row(grow, gx + p * h * wd + ii * wd, wd, k[2], k[1], k[0]);
                }
              }
            }
          }
        }
      });
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> depthwise_conv2d_tokens(BasicTape<T>& tape, const BasicTensor<T>& x,
                                       const BasicTensor<T>& w, const BasicTensor<T>& b,
                                       int64_t height, int64_t width) {
  require(x.rank() == 3 && x.dim(1) == height * width,
          "depthwise_conv2d_tokens: input must be [B,H*W,C] matching the grid");
  const int64_t batch = x.dim(0), ch = x.dim(2);
  require(w.shape() == Shape{ch, 1, 3, 3},
          "depthwise_conv2d_tokens: weight must be [C,1,3,3] with C=" +
              std::to_string(ch) + ", got " + shape_to_string(w.shape()));
  require(b.shape() == Shape{ch}, "depthwise_conv2d_tokens: bias must be [C]");

  // Taps laid out [9][C] so the channel loop is contiguous.
  auto taps_of = [ch](const T* wp) {
    AlignedVector<T> taps(static_cast<size_t>(9 * ch));
    for (int64_t c = 0; c < ch; ++c)
      for (int t = 0; t < 9; ++t) taps[static_cast<size_t>(t * ch + c)] = wp[c * 9 + t];
    return taps;
  };
  const AlignedVector<T> taps = taps_of(w.ptr());
  BasicTensor<T> y(x.shape());
  const T* xp = x.ptr();
  const T* bp = b.ptr();
  T* yp = y.ptr();
  const int64_t h = height, wd = width;
  parallel_for(batch * h, [&](int64_t begin, int64_t end) {
    for (int64_t row = begin; row < end; ++row) {
      const int64_t n = row / h, i = row % h;
      const T* src = xp + n * h * wd * ch;
      for (int64_t j = 0; j < wd; ++j) {
        T* out = yp + ((n * h + i) * wd + j) * ch;
        std::copy(bp, bp + ch, out);
        for (int dy = -1; dy <= 1; ++dy) {
          const int64_t ii = i + dy;
          if (ii < 0 || ii >= h) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int64_t jj = j + dx;
            if (jj < 0 || jj >= wd) continue;
            const T* in = src + (ii * wd + jj) * ch;
            const T* k = taps.data() + ((dy + 1) * 3 + (dx + 1)) * ch;
            for (int64_t c = 0; c < ch; ++c) out[c] += k[c] * in[c];
          }
        }
      }
    }
  });

  if (tape.should_record({&x, &w, &b})) {
    tape.record(y, {x, w, b}, [x, w, b, y, batch, ch, h, wd, taps]() mutable {
      const T* gy = y.grad().data();
      T* gx = grad_target(x);
      T* gw = grad_target(w);
      T* gb = grad_target(b);
      const T* xp = x.ptr();
      if (gw != nullptr || gb != nullptr) {
        AlignedVector<T> gtaps(static_cast<size_t>(9 * ch), T(0));
        AlignedVector<T> gbias(static_cast<size_t>(ch), T(0));
        for (int64_t n = 0; n < batch; ++n) {
          const T* src = xp + n * h * wd * ch;
          for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < wd; ++j) {
              const T* g = gy + ((n * h + i) * wd + j) * ch;
              for (int64_t c = 0; c < ch; ++c) gbias[static_cast<size_t>(c)] += g[c];
              for (int dy = -1; dy <= 1; ++dy) {
                const int64_t ii = i + dy;
                if (ii < 0 || ii >= h) continue;
                for (int dx = -1; dx <= 1; ++dx) {
                  const int64_t jj = j + dx;
                  if (jj < 0 || jj >= wd) continue;
                  const T* in = src + (ii * wd + jj) * ch;
                  T* gk = gtaps.data() + ((dy + 1) * 3 + (dx + 1)) * ch;
                  for (int64_t c = 0; c < ch; ++c) gk[c] += g[c] * in[c];
                }
              }
            }
          }
        }
        for (int64_t c = 0; c < ch; ++c) {
          if (gb != nullptr) gb[c] += gbias[static_cast<size_t>(c)];
          if (gw != nullptr) {
            for (int t = 0; t < 9; ++t) gw[c * 9 + t] += gtaps[static_cast<size_t>(t * ch + c)];
          }
        }
      }
      if (gx != nullptr) {
        // Gather form: each input pixel sums the outputs it feeds.
        parallel_for(batch * h, [&](int64_t begin, int64_t end) {
          for (int64_t row = begin; row < end; ++row) {
            const int64_t n = row / h, ii = row % h;
            for (int64_t jj = 0; jj < wd; ++jj) {
              T* out = gx + ((n * h + ii) * wd + jj) * ch;
              for (int dy = -1; dy <= 1; ++dy) {
                const int64_t i = ii - dy;
                if (i < 0 || i >= h) continue;
                for (int dx = -1; dx <= 1; ++dx) {
                  const int64_t j = jj - dx;
                  if (j < 0 || j >= wd) continue;
                  const T* g = gy + ((n * h + i) * wd + j) * ch;
                  const T* k = taps.data() + ((dy + 1) * 3 + (dx + 1)) * ch;
                  for (int64_t c = 0; c < ch; ++c) out[c] += k[c] * g[c];
                }
              }
            }
          }
        });
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Dense layers

template <typename T>
BasicTensor<T> linear(BasicTape<T>& tape, const BasicTensor<T>& x,
                      const BasicTensor<T>& w, const BasicTensor<T>& b) {
  require(x.rank() >= 1 && w.rank() == 2, "linear: bad ranks");
  const int64_t din = w.dim(1), dout = w.dim(0);
  require(x.dim(-1) == din, "linear: input last dim " + std::to_string(x.dim(-1)) +
                                " != weight Din " + std::to_string(din));
  require(b.shape() == Shape{dout}, "linear: bias must be [Dout]");
  const int64_t rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  BasicTensor<T> y(out_shape);
  CMapR<T> xm(x.ptr(), rows, din);
  CMapR<T> wm(w.ptr(), dout, din);
  MapR<T> ym(y.ptr(), rows, dout);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.ptr(), dout);

  if (tape.should_record({&x, &w, &b})) {
    tape.record(y, {x, w, b}, [x, w, b, y, rows, din, dout]() mutable {
      CMapR<T> gy(y.grad().data(), rows, dout);
      if (T* gx = grad_target(x)) {
        MapR<T>(gx, rows, din).noalias() += gy * CMapR<T>(w.ptr(), dout, din);
      }
      if (T* gw = grad_target(w)) {
        MapR<T>(gw, dout, din).noalias() += gy.transpose() * CMapR<T>(x.ptr(), rows, din);
      }
      if (T* gb = grad_target(b)) {
        const T* g = y.grad().data();
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t o = 0; o < dout; ++o) gb[o] += g[r * dout + o];
        }
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> layer_norm(BasicTape<T>& tape, const BasicTensor<T>& x,
                          const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          double eps) {
  require(x.rank() >= 1, "layer_norm: rank >= 1");
  const int64_t d = x.dim(-1);
  require(d >= 1, "layer_norm: empty last dimension");
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
          "layer_norm: gamma/beta must be [D]");
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const int64_t rows = x.numel() / d;
  BasicTensor<T> y(x.shape());
  AlignedVector<T> mean(static_cast<size_t>(rows)), rstd(static_cast<size_t>(rows));
  const T* xp = x.ptr();
  const T* gp = gamma.ptr();
  const T* bp = beta.ptr();
  T* yp = y.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xp + r * d;
    T mu = 0;
    for (int64_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (int64_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
    mean[static_cast<size_t>(r)] = mu;
    rstd[static_cast<size_t>(r)] = rs;
    T* out = yp + r * d;
    for (int64_t i = 0; i < d; ++i) out[i] = (row[i] - mu) * rs * gp[i] + bp[i];
  }

  if (tape.should_record({&x, &gamma, &beta})) {
    tape.record(y, {x, gamma, beta},
                [x, gamma, beta, y, rows, d, mean = std::move(mean),
                 rstd = std::move(rstd)]() mutable {
                  const T* gy = y.grad().data();
                  T* gx = grad_target(x);
                  T* gg = grad_target(gamma);
                  T* gb = grad_target(beta);
                  const T* xp = x.ptr();
                  const T* gp = gamma.ptr();
                  AlignedVector<T> xhat(static_cast<size_t>(d)), dxhat(static_cast<size_t>(d));
                  for (int64_t r = 0; r < rows; ++r) {
                    const T mu = mean[static_cast<size_t>(r)];
                    const T rs = rstd[static_cast<size_t>(r)];
                    const T* row = xp + r * d;
                    const T* g = gy + r * d;
                    T sum_dxhat = 0, sum_dxhat_xhat = 0;
                    for (int64_t i = 0; i < d; ++i) {
                      xhat[i] = (row[i] - mu) * rs;
                      dxhat[i] = g[i] * gp[i];
                      sum_dxhat += dxhat[i];
                      sum_dxhat_xhat += dxhat[i] * xhat[i];
                      if (gg != nullptr) gg[i] += g[i] * xhat[i];
                      if (gb != nullptr) gb[i] += g[i];
                    }
                    if (gx != nullptr) {
                      const T inv_d = T(1) / static_cast<T>(d);
                      T* out = gx + r * d;
                      for (int64_t i = 0; i < d; ++i) {
                        out[i] += rs * (dxhat[i] - inv_d * sum_dxhat -
                                        xhat[i] * inv_d * sum_dxhat_xhat);
                      }
                    }
                  }
                });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Activations and reductions

template <typename T>
BasicTensor<T> softmax(BasicTape<T>& tape, const BasicTensor<T>& x) {
  require(x.rank() >= 1, "softmax: rank >= 1");
  const int64_t d = x.dim(-1);
  const int64_t rows = d == 0 ? 0 : x.numel() / d;
  BasicTensor<T> y(x.shape());
  const T* xp = x.ptr();
  T* yp = y.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xp + r * d;
    T* out = yp + r * d;
    const T mx = *std::max_element(row, row + d);
    T total = 0;
    for (int64_t i = 0; i < d; ++i) {
      out[i] = std::exp(row[i] - mx);
      total += out[i];
    }
    const T inv = T(1) / total;
    for (int64_t i = 0; i < d; ++i) out[i] *= inv;
  }
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, rows, d]() mutable {
      T* gx = grad_target(x);
      if (gx == nullptr) return;
      const T* gy = y.grad().data();
      const T* yp = y.ptr();
      for (int64_t r = 0; r < rows; ++r) {
        const T* g = gy + r * d;
        const T* s = yp + r * d;
        T dot = 0;
        for (int64_t i = 0; i < d; ++i) dot += g[i] * s[i];
        T* out = gx + r * d;
        for (int64_t i = 0; i < d; ++i) out[i] += s[i] * (g[i] - dot);
      }
    });
  }
  return y;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

template <typename T>
BasicTensor<T> gelu(BasicTape<T>& tape, const BasicTensor<T>& x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  BasicTensor<T> y(x.shape());
  const T c = static_cast<T>(kGeluC), a = static_cast<T>(kGeluA);
  const int64_t n = x.numel();
  Eigen::Map<const Arr> xv(x.ptr(), n);
  Eigen::Map<Arr>(y.ptr(), n) = T(0.5) * xv * (T(1) + (c * (xv + a * xv.cube())).tanh());
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, n, c, a]() mutable {
      T* gx = grad_target(x);
      if (gx == nullptr) return;
      constexpr int64_t kChunk = 4096;
      Arr t(kChunk);
      for (int64_t off = 0; off < n; off += kChunk) {
        const int64_t len = std::min(kChunk, n - off);
        Eigen::Map<const Arr> xv(x.ptr() + off, len);
        Eigen::Map<const Arr> gy(y.grad().data() + off, len);
        auto th = t.head(len);
        th = (c * (xv + a * xv.cube())).tanh();
        Eigen::Map<Arr>(gx + off, len) +=
            gy * (T(0.5) * (T(1) + th) +
                  T(0.5) * xv * (T(1) - th.square()) * c * (T(1) + T(3) * a * xv.square()));
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> global_avg_pool(BasicTape<T>& tape, const BasicTensor<T>& x) {
  require(x.rank() == 4, "global_avg_pool: input must be [B,C,H,W]");
  const int64_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  require(area >= 1, "global_avg_pool: empty spatial extent");
  BasicTensor<T> y({x.dim(0), x.dim(1)});
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * area;
    T acc = 0;
    for (int64_t i = 0; i < area; ++i) acc += src[i];
    y[p] = acc / static_cast<T>(area);
  }
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, planes, area]() mutable {
      T* gx = grad_target(x);
      if (gx == nullptr) return;
      const T inv = T(1) / static_cast<T>(area);
      for (int64_t p = 0; p < planes; ++p) {
        const T g = y.grad()[static_cast<size_t>(p)] * inv;
        for (int64_t i = 0; i < area; ++i) gx[p * area + i] += g;
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> l2_normalize(BasicTape<T>& tape, const BasicTensor<T>& x,
                            double min_norm) {
  require(x.rank() == 2, "l2_normalize: input must be [B,D]");
  const int64_t rows = x.dim(0), d = x.dim(1);
  BasicTensor<T> y(x.shape());
  AlignedVector<T> norms(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = x.ptr() + r * d;
    T sq = 0;
    for (int64_t i = 0; i < d; ++i) sq += row[i] * row[i];
    const T nrm = std::sqrt(sq);
    if (!(static_cast<double>(nrm) > min_norm)) {
      throw DegenerateDescriptorError("l2_normalize: row " + std::to_string(r) +
                                      " has near-zero norm");
    }
    norms[static_cast<size_t>(r)] = nrm;
    T* out = y.ptr() + r * d;
    for (int64_t i = 0; i < d; ++i) out[i] = row[i] / nrm;
  }
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, rows, d, norms = std::move(norms)]() mutable {
      T* gx = grad_target(x);
      if (gx == nullptr) return;
      for (int64_t r = 0; r < rows; ++r) {
        const T* g = y.grad().data() + r * d;
        const T* u = y.ptr() + r * d;
        T dot = 0;
        for (int64_t i = 0; i < d; ++i) dot += g[i] * u[i];
        const T inv = T(1) / norms[static_cast<size_t>(r)];
        for (int64_t i = 0; i < d; ++i) gx[r * d + i] += (g[i] - u[i] * dot) * inv;
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  BasicTensor<T> y(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
  if (tape.should_record({&a, &b})) {
    tape.record(y, {a, b}, [a, b, y, n]() mutable {
      const T* g = y.grad().data();
      if (T* ga = grad_target(a)) for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      if (T* gb = grad_target(b)) for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> sub(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  BasicTensor<T> y(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
  if (tape.should_record({&a, &b})) {
    tape.record(y, {a, b}, [a, b, y, n]() mutable {
      const T* g = y.grad().data();
      if (T* ga = grad_target(a)) for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      if (T* gb = grad_target(b)) for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> mul(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  BasicTensor<T> y(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
  if (tape.should_record({&a, &b})) {
    tape.record(y, {a, b}, [a, b, y, n]() mutable {
      const T* g = y.grad().data();
      if (T* ga = grad_target(a)) for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * b[i];
      if (T* gb = grad_target(b)) for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * a[i];
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> affine(BasicTape<T>& tape, const BasicTensor<T>& x, double scale,
                      double shift) {
  BasicTensor<T> y(x.shape());
  const T s = static_cast<T>(scale), o = static_cast<T>(shift);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] * s + o;
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, n, s]() mutable {
      const T* g = y.grad().data();
      if (T* gx = grad_target(x)) for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * s;
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> relu(BasicTape<T>& tape, const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, n]() mutable {
      const T* g = y.grad().data();
      if (T* gx = grad_target(x)) {
        for (int64_t i = 0; i < n; ++i) if (x[i] > T(0)) gx[i] += g[i];
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x) {
  BasicTensor<T> y(Shape{});
  T acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
  y[0] = acc;
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y]() mutable {
      const T g = y.grad()[0];
      if (T* gx = grad_target(x)) for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> mean(BasicTape<T>& tape, const BasicTensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return affine(tape, sum(tape, x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
BasicTensor<T> detach(const BasicTensor<T>& x) {
  BasicTensor<T> y = x.clone();
  y.set_requires_grad(false);
  return y;
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
BasicTensor<T> reshape(BasicTape<T>& tape, const BasicTensor<T>& x, Shape shape) {
  BasicTensor<T> y = x.reshaped(std::move(shape));
  y.set_requires_grad(false);
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y]() mutable {
      const T* g = y.grad().data();
      if (T* gx = grad_target(x)) for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> nchw_to_tokens(BasicTape<T>& tape, const BasicTensor<T>& x) {
  require(x.rank() == 4, "nchw_to_tokens: input must be [B,C,H,W]");
  const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  BasicTensor<T> y({b, hw, c});
  for (int64_t n = 0; n < b; ++n) {
    transpose_into<T, false>(x.ptr() + n * c * hw, y.ptr() + n * hw * c, c, hw);
  }
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, b, c, hw]() mutable {
      T* gx = grad_target(x);
      if (gx == nullptr) return;
      for (int64_t n = 0; n < b; ++n) {
        transpose_into<T, true>(y.grad().data() + n * hw * c, gx + n * c * hw, hw, c);
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> tokens_to_nchw(BasicTape<T>& tape, const BasicTensor<T>& x,
                              int64_t height, int64_t width) {
  require(x.rank() == 3 && x.dim(1) == height * width,
          "tokens_to_nchw: token count " + shape_to_string(x.shape()) +
              " does not match grid " + std::to_string(height) + "x" +
              std::to_string(width));
  const int64_t b = x.dim(0), hw = x.dim(1), c = x.dim(2);
  BasicTensor<T> y({b, c, height, width});
  for (int64_t n = 0; n < b; ++n) {
    transpose_into<T, false>(x.ptr() + n * hw * c, y.ptr() + n * c * hw, hw, c);
  }
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, b, c, hw]() mutable {
      T* gx = grad_target(x);
      if (gx == nullptr) return;
      for (int64_t n = 0; n < b; ++n) {
        transpose_into<T, true>(y.grad().data() + n * c * hw, gx + n * hw * c, c, hw);
      }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> split_heads(BasicTape<T>& tape, const BasicTensor<T>& x, int heads) {
  require(x.rank() == 3, "split_heads: input must be [B,T,C]");
  const int64_t b = x.dim(0), t = x.dim(1), c = x.dim(2);
  require(heads >= 1 && c % heads == 0, "split_heads: channels not divisible by heads");
  const int64_t dh = c / heads;
  BasicTensor<T> y({b * heads, t, dh});
  auto index = [=](int64_t n, int64_t i, int64_t h, int64_t j) {
    return std::pair<int64_t, int64_t>{(n * t + i) * c + h * dh + j,
                                       ((n * heads + h) * t + i) * dh + j};
  };
  for (int64_t n = 0; n < b; ++n)
    for (int64_t i = 0; i < t; ++i)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t j = 0; j < dh; ++j) {
          auto [src, dst] = index(n, i, h, j);
          y[dst] = x[src];
        }
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, b, t, heads, dh, index]() mutable {
      T* gx = grad_target(x);
      if (gx == nullptr) return;
      const T* g = y.grad().data();
      for (int64_t n = 0; n < b; ++n)
        for (int64_t i = 0; i < t; ++i)
          for (int64_t h = 0; h < heads; ++h)
            for (int64_t j = 0; j < dh; ++j) {
              auto [src, dst] = index(n, i, h, j);
              gx[src] += g[dst];
            }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> merge_heads(BasicTape<T>& tape, const BasicTensor<T>& x, int heads) {
  require(x.rank() == 3 && heads >= 1 && x.dim(0) % heads == 0,
          "merge_heads: input must be [B*heads,T,Dh]");
  const int64_t b = x.dim(0) / heads, t = x.dim(1), dh = x.dim(2), c = dh * heads;
  BasicTensor<T> y({b, t, c});
  auto index = [=](int64_t n, int64_t i, int64_t h, int64_t j) {
    return std::pair<int64_t, int64_t>{((n * heads + h) * t + i) * dh + j,
                                       (n * t + i) * c + h * dh + j};
  };
  for (int64_t n = 0; n < b; ++n)
    for (int64_t i = 0; i < t; ++i)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t j = 0; j < dh; ++j) {
          auto [src, dst] = index(n, i, h, j);
          y[dst] = x[src];
        }
  if (tape.should_record({&x})) {
    tape.record(y, {x}, [x, y, b, t, heads, dh, index]() mutable {
      T* gx = grad_target(x);
      if (gx == nullptr) return;
      const T* g = y.grad().data();
      for (int64_t n = 0; n < b; ++n)
        for (int64_t i = 0; i < t; ++i)
          for (int64_t h = 0; h < heads; ++h)
            for (int64_t j = 0; j < dh; ++j) {
              auto [src, dst] = index(n, i, h, j);
              gx[src] += g[dst];
            }
    });
  }
  return y;
}

template <typename T>
BasicTensor<T> bmm(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b,
                   bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0),
          "bmm: inputs must be [G,M,K] and [G,K,N] (or [G,N,K])");
  const int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  require((transpose_b ? b.dim(2) : b.dim(1)) == k, "bmm: inner dimension mismatch");
  BasicTensor<T> y({g, m, n});
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* yp = y.ptr();
  parallel_for(g, [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) {
      CMapR<T> am(ap + i * m * k, m, k);
      MapR<T> ym(yp + i * m * n, m, n);
      if (transpose_b) {
        ym.noalias() = am * CMapR<T>(bp + i * n * k, n, k).transpose();
      } else {
        ym.noalias() = am * CMapR<T>(bp + i * k * n, k, n);
      }
    }
  });
  if (tape.should_record({&a, &b})) {
    tape.record(y, {a, b}, [a, b, y, g, m, k, n, transpose_b]() mutable {
      T* ga = grad_target(a);
      T* gb = grad_target(b);
      const T* gy = y.grad().data();
      parallel_for(g, [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) {
          CMapR<T> dy(gy + i * m * n, m, n);
          CMapR<T> am(a.ptr() + i * m * k, m, k);
          if (transpose_b) {
            CMapR<T> bm(b.ptr() + i * n * k, n, k);
            if (ga) MapR<T>(ga + i * m * k, m, k).noalias() += dy * bm;
            if (gb) MapR<T>(gb + i * n * k, n, k).noalias() += dy.transpose() * am;
          } else {
            CMapR<T> bm(b.ptr() + i * k * n, k, n);
            if (ga) MapR<T>(ga + i * m * k, m, k).noalias() += dy * bm.transpose();
            if (gb) MapR<T>(gb + i * k * n, k, n).noalias() += am.transpose() * dy;
          }
        }
      });
    });
  }
  return y;
}

#define LTFORMER_INSTANTIATE_OPS(T)                                                  \
  template BasicTensor<T> conv2d(BasicTape<T>&, const BasicTensor<T>&,               \
                                 const BasicTensor<T>&, const BasicTensor<T>&, int, \
                                 int);                                               \
  template BasicTensor<T> depthwise_conv2d(BasicTape<T>&, const BasicTensor<T>&,     \
                                           const BasicTensor<T>&,                    \
                                           const BasicTensor<T>&);                   \
  template BasicTensor<T> depthwise_conv2d_tokens(                                   \
      BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,                   \
      const BasicTensor<T>&, int64_t, int64_t);                                      \
  template BasicTensor<T> linear(BasicTape<T>&, const BasicTensor<T>&,               \
                                 const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> layer_norm(BasicTape<T>&, const BasicTensor<T>&,           \
                                     const BasicTensor<T>&, const BasicTensor<T>&,   \
                                     double);                                        \
  template BasicTensor<T> softmax(BasicTape<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> gelu(BasicTape<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> global_avg_pool(BasicTape<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> l2_normalize(BasicTape<T>&, const BasicTensor<T>&, double); \
  template BasicTensor<T> add(BasicTape<T>&, const BasicTensor<T>&,                  \
                              const BasicTensor<T>&);                                \
  template BasicTensor<T> sub(BasicTape<T>&, const BasicTensor<T>&,                  \
                              const BasicTensor<T>&);                                \
  template BasicTensor<T> mul(BasicTape<T>&, const BasicTensor<T>&,                  \
                              const BasicTensor<T>&);                                \
  template BasicTensor<T> affine(BasicTape<T>&, const BasicTensor<T>&, double,       \
                                 double);                                            \
  template BasicTensor<T> relu(BasicTape<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> mean(BasicTape<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> sum(BasicTape<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> detach(const BasicTensor<T>&);                             \
  template BasicTensor<T> reshape(BasicTape<T>&, const BasicTensor<T>&, Shape);      \
  template BasicTensor<T> nchw_to_tokens(BasicTape<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> tokens_to_nchw(BasicTape<T>&, const BasicTensor<T>&,       \
                                         int64_t, int64_t);                          \
  template BasicTensor<T> split_heads(BasicTape<T>&, const BasicTensor<T>&, int);    \
  template BasicTensor<T> merge_heads(BasicTape<T>&, const BasicTensor<T>&, int);    \
  template BasicTensor<T> bmm(BasicTape<T>&, const BasicTensor<T>&,                  \
                              const BasicTensor<T>&, bool);

LTFORMER_INSTANTIATE_OPS(float)
LTFORMER_INSTANTIATE_OPS(double)

}  // namespace ltformer::ops
