#pragma once

#include "cod/tensor.hpp"

#include <cmath>

namespace cod {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowMajorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline int conv_out_len(int L, int W, int stride, int padding) {
  return (L + 2 * padding - W) / stride + 1;
}

namespace detail {

// Gathers padded sliding windows of x [B,C,L] into a [C*W, B*Lo] matrix;
// column b*Lo+l holds the patch starting at l*stride - padding.
template <typename T>
MatX<T> im2col(const Tensor<T>& x, int W, int stride, int padding, int Lo) {
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  MatX<T> m = MatX<T>::Zero(static_cast<std::int64_t>(C) * W, static_cast<std::int64_t>(B) * Lo);
  for (int b = 0; b < B; ++b) {
    const T* xb = x.data.data() + static_cast<std::int64_t>(b) * C * L;
    for (int l = 0; l < Lo; ++l) {
      const int start = l * stride - padding;
      T* col = m.col(static_cast<std::int64_t>(b) * Lo + l).data();
      for (int c = 0; c < C; ++c) {
        const T* src = xb + static_cast<std::int64_t>(c) * L;
        T* dst = col + static_cast<std::int64_t>(c) * W;
        for (int w = 0; w < W; ++w) {
          const int t = start + w;
          if (t >= 0 && t < L) dst[w] = src[t];
        }
      }
    }
  }
  return m;
}

// Scatter-adds a [C*W, B*Lo] patch matrix back onto [B,C,L].
template <typename T>
void col2im_add(const MatX<T>& m, int W, int stride, int padding, Tensor<T>& x) {
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const int Lo = static_cast<int>(m.cols() / B);
  for (int b = 0; b < B; ++b) {
    T* xb = x.data.data() + static_cast<std::int64_t>(b) * C * L;
    for (int l = 0; l < Lo; ++l) {
      const int start = l * stride - padding;
      const T* col = m.col(static_cast<std::int64_t>(b) * Lo + l).data();
      for (int c = 0; c < C; ++c) {
        T* dst = xb + static_cast<std::int64_t>(c) * L;
        const T* src = col + static_cast<std::int64_t>(c) * W;
        for (int w = 0; w < W; ++w) {
          const int t = start + w;
          if (t >= 0 && t < L) dst[t] += src[w];
        }
      }
    }
  }
}

// x [B,C,L] viewed as a [C, B*L] matrix (column b*L+l); row-major so each
// (b,c) length-L run stays one contiguous copy.
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
RowMat<T> to_channel_major(const Tensor<T>& x) {
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  RowMat<T> m(C, static_cast<std::int64_t>(B) * L);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      m.row(c).segment(static_cast<std::int64_t>(b) * L, L) =
          Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
              x.data.data() + (static_cast<std::int64_t>(b) * C + c) * L, L);
  return m;
}

template <typename T>
Tensor<T> from_channel_major(const RowMat<T>& m, int B, int C, int L) {
  Tensor<T> x({B, C, L});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(
          x.data.data() + (static_cast<std::int64_t>(b) * C + c) * L, L) =
          m.row(c).segment(static_cast<std::int64_t>(b) * L, L);
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv1d: x [B,Ci,L] * k [Co,Ci,W] -> y [B,Co,Lo], cross-correlation semantics.
// ---------------------------------------------------------------------------

template <typename T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& k, int stride, int padding) {
  if (x.ndim() != 3)
    throw std::invalid_argument("conv1d: input must be rank 3 [B,C,L], got " + shape_str(x.shape));
  if (k.ndim() != 3)
    throw std::invalid_argument("conv1d: kernel must be rank 3, got " + shape_str(k.shape));
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv1d: padding must be >= 0");
  if (k.dim(1) != x.dim(1))
    throw std::invalid_argument("conv1d: kernel C_in " + std::to_string(k.dim(1)) +
                                " != input channel dim " + std::to_string(x.dim(1)));
  if (k.dim(2) > x.dim(2) + 2 * padding)
    throw std::invalid_argument("conv1d: kernel width " + std::to_string(k.dim(2)) +
                                " exceeds padded length " + std::to_string(x.dim(2) + 2 * padding));
}

template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>* bias, int stride,
                         int padding) {
  check_conv_args(x, k, stride, padding);
  const int B = x.dim(0), Ci = x.dim(1), L = x.dim(2);
  const int Co = k.dim(0), W = k.dim(2);
  const int Lo = conv_out_len(L, W, stride, padding);
  MatX<T> cols = detail::im2col(x, W, stride, padding, Lo);
  ConstRowMajorMap<T> kmat(k.data.data(), Co, static_cast<std::int64_t>(Ci) * W);
  detail::RowMat<T> y = kmat * cols;  // [Co, B*Lo]
  if (bias) {
    if (bias->numel() != Co)
      throw std::invalid_argument("conv1d: bias size " + std::to_string(bias->numel()) +
                                  " != C_out " + std::to_string(Co));
    y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias->data.data(), Co);
  }
  return detail::from_channel_major(y, B, Co, Lo);
}

template <typename T>
Tensor<T> conv1d_backward_data(const Tensor<T>& gy, const Tensor<T>& k, int stride, int padding,
                               int L_in) {
  const int B = gy.dim(0);
  const int Ci = k.dim(1), W = k.dim(2), Co = k.dim(0);
  detail::RowMat<T> gmat = detail::to_channel_major(gy);  // [Co, B*Lo]
  ConstRowMajorMap<T> kmat(k.data.data(), Co, static_cast<std::int64_t>(Ci) * W);
  MatX<T> cols = kmat.transpose() * gmat;  // [Ci*W, B*Lo]
  Tensor<T> gx({B, Ci, L_in});
  detail::col2im_add(cols, W, stride, padding, gx);
  return gx;
}

template <typename T>
Tensor<T> conv1d_backward_kernel(const Tensor<T>& gy, const Tensor<T>& x, int stride, int padding,
                                 int W) {
  const int Co = gy.dim(1), Lo = gy.dim(2);
  const int Ci = x.dim(1);
  MatX<T> cols = detail::im2col(x, W, stride, padding, Lo);
  detail::RowMat<T> gmat = detail::to_channel_major(gy);  // [Co, B*Lo]
  MatX<T> gk = gmat * cols.transpose();  // [Co, Ci*W]
  Tensor<T> out({Co, Ci, W});
  RowMajorMap<T>(out.data.data(), Co, static_cast<std::int64_t>(Ci) * W) = gk;
  return out;
}

// ---------------------------------------------------------------------------
// Transposed conv1d: x [B,Ci,L] * k [Ci,Co,W] -> y [B,Co,(L-1)*stride-2p+W].
// Forward is the data-gradient of the matching conv1d.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> convt1d_forward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>* bias,
                          int stride, int padding) {
  if (x.ndim() != 3 || k.ndim() != 3)
    throw std::invalid_argument("conv1d_transposed: inputs must be rank 3");
  if (k.dim(0) != x.dim(1))
    throw std::invalid_argument("conv1d_transposed: kernel C_in " + std::to_string(k.dim(0)) +
                                " != input channel dim " + std::to_string(x.dim(1)));
  const int B = x.dim(0), Ci = x.dim(1), L = x.dim(2);
  const int Co = k.dim(1), W = k.dim(2);
  const int Lo = (L - 1) * stride - 2 * padding + W;
  if (Lo < 1) throw std::invalid_argument("conv1d_transposed: output length would be < 1");
  detail::RowMat<T> xmat = detail::to_channel_major(x);  // [Ci, B*L]
  ConstRowMajorMap<T> kmat(k.data.data(), Ci, static_cast<std::int64_t>(Co) * W);
  MatX<T> cols = kmat.transpose() * xmat;  // [Co*W, B*L]
  Tensor<T> y({B, Co, Lo});
  detail::col2im_add(cols, W, stride, padding, y);
  if (bias) {
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < Co; ++c)
        Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(
            y.data.data() + (static_cast<std::int64_t>(b) * Co + c) * Lo, Lo) += bias->at(c);
  }
  return y;
}

template <typename T>
Tensor<T> convt1d_backward_data(const Tensor<T>& gy, const Tensor<T>& k, int stride, int padding,
                                int L_in) {
  const int B = gy.dim(0);
  const int Ci = k.dim(0), Co = k.dim(1), W = k.dim(2);
  MatX<T> cols = detail::im2col(gy, W, stride, padding, L_in);  // [Co*W, B*L_in]
  ConstRowMajorMap<T> kmat(k.data.data(), Ci, static_cast<std::int64_t>(Co) * W);
  detail::RowMat<T> gmat = kmat * cols;  // [Ci, B*L_in]
  return detail::from_channel_major(gmat, B, Ci, L_in);
}

template <typename T>
Tensor<T> convt1d_backward_kernel(const Tensor<T>& gy, const Tensor<T>& x, int stride,
                                  int padding, int W) {
  const int Ci = x.dim(1), L = x.dim(2);
  const int Co = gy.dim(1);
  detail::RowMat<T> xmat = detail::to_channel_major(x);       // [Ci, B*L]
  MatX<T> cols = detail::im2col(gy, W, stride, padding, L);   // [Co*W, B*L]
  MatX<T> gk = xmat * cols.transpose();                       // [Ci, Co*W]
  Tensor<T> out({Ci, Co, W});
  RowMajorMap<T>(out.data.data(), Ci, static_cast<std::int64_t>(Co) * W) = gk;
  return out;
}

// ---------------------------------------------------------------------------
// Dense: x [B,I] * w [O,I] + b -> y [B,O]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  if (x.ndim() != 2 || w.ndim() != 2)
    throw std::invalid_argument("dense: expected rank-2 input and weight");
  if (x.dim(1) != w.dim(1))
    throw std::invalid_argument("dense: input feature dim " + std::to_string(x.dim(1)) +
                                " != weight in dim " + std::to_string(w.dim(1)));
  const int B = x.dim(0), I = x.dim(1), O = w.dim(0);
  Tensor<T> y({B, O});
  ConstRowMajorMap<T> xm(x.data.data(), B, I), wm(w.data.data(), O, I);
  RowMajorMap<T> ym(y.data.data(), B, O);
  ym.noalias() = xm * wm.transpose();
  if (bias) {
    if (bias->numel() != O)
      throw std::invalid_argument("dense: bias size != out dim " + std::to_string(O));
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o) y.at2(b, o) += bias->at(o);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Group normalization over [B,C,L]; statistics per (batch, group).
// ---------------------------------------------------------------------------

template <typename T>
struct GroupNormResult {
  Tensor<T> y;
  Tensor<T> stats;  // [B, G, 2]: mean, inv_std
};

template <typename T>
GroupNormResult<T> group_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                      const Tensor<T>& beta, int groups, T eps) {
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (groups < 1 || C % groups != 0)
    throw std::invalid_argument("group_norm: channel dim " + std::to_string(C) +
                                " not divisible by groups " + std::to_string(groups));
  if (gamma.numel() != C || beta.numel() != C)
    throw std::invalid_argument("group_norm: scale/shift size must equal channel dim");
  const int Cg = C / groups;
  const std::int64_t n = static_cast<std::int64_t>(Cg) * L;
  GroupNormResult<T> r{Tensor<T>({B, C, L}), Tensor<T>({B, groups, 2})};
  using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
  for (int b = 0; b < B; ++b) {
    for (int g = 0; g < groups; ++g) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * C + g * Cg) * L;
      ConstVecMap xg(x.data.data() + off, n);
      const T mean = xg.mean();
      const T var = (xg - mean).square().mean();
      const T inv = T(1) / std::sqrt(var + eps);
      r.stats.at3(b, g, 0) = mean;
      r.stats.at3(b, g, 1) = inv;
      for (int c = 0; c < Cg; ++c) {
        const int ch = g * Cg + c;
        ConstVecMap x_row(x.data.data() + off + static_cast<std::int64_t>(c) * L, L);
        VecMap y_row(r.y.data.data() + off + static_cast<std::int64_t>(c) * L, L);
        y_row = gamma.at(ch) * ((x_row - mean) * inv) + beta.at(ch);
      }
    }
  }
  return r;
}

template <typename T>
void group_norm_backward(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& gamma,
                         const Tensor<T>& stats, int groups, Tensor<T>& gx, Tensor<T>& ggamma,
                         Tensor<T>& gbeta) {
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const int Cg = C / groups;
  const T n = static_cast<T>(static_cast<std::int64_t>(Cg) * L);
  gx = Tensor<T>({B, C, L});
  ggamma = Tensor<T>({C});
  gbeta = Tensor<T>({C});
  using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
  for (int b = 0; b < B; ++b) {
    for (int g = 0; g < groups; ++g) {
      const T mean = stats.at3(b, g, 0);
      const T inv = stats.at3(b, g, 1);
      const std::int64_t off = (static_cast<std::int64_t>(b) * C + g * Cg) * L;
      T sum_gh = 0, sum_ghx = 0;
      for (int c = 0; c < Cg; ++c) {
        const int ch = g * Cg + c;
        ConstVecMap x_row(x.data.data() + off + static_cast<std::int64_t>(c) * L, L);
        ConstVecMap g_row(gy.data.data() + off + static_cast<std::int64_t>(c) * L, L);
        const auto xhat = ((x_row - mean) * inv).eval();
        ggamma.at(ch) += (g_row * xhat).sum();
        gbeta.at(ch) += g_row.sum();
        sum_gh += gamma.at(ch) * g_row.sum();
        sum_ghx += gamma.at(ch) * (g_row * xhat).sum();
      }
      for (int c = 0; c < Cg; ++c) {
        const int ch = g * Cg + c;
        ConstVecMap x_row(x.data.data() + off + static_cast<std::int64_t>(c) * L, L);
        ConstVecMap g_row(gy.data.data() + off + static_cast<std::int64_t>(c) * L, L);
        VecMap gx_row(gx.data.data() + off + static_cast<std::int64_t>(c) * L, L);
        const auto xhat = (x_row - mean) * inv;
        gx_row = inv * (g_row * gamma.at(ch) - sum_gh / n - xhat * (sum_ghx / n));
      }
    }
  }
}

template <typename T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

// Sinusoidal encoding of integer steps; [B, dim] with sin half then cos half.
template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<int>& steps, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_embedding: dim must be even and >= 2");
  const int half = dim / 2;
  const int B = static_cast<int>(steps.size());
  Tensor<T> out({B, dim});
  const double scale = half > 1 ? std::log(10000.0) / (half - 1) : 0.0;
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < half; ++i) {
      const double f = std::exp(-scale * i) * steps[static_cast<std::size_t>(b)];
      out.at2(b, i) = static_cast<T>(std::sin(f));
      out.at2(b, half + i) = static_cast<T>(std::cos(f));
    }
  }
  return out;
}

}  // namespace cod
