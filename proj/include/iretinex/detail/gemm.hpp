#pragma once

#include <algorithm>
#include <cstddef>

#include <Eigen/Core>

namespace iretinex::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// C (m×n) [+]= op(A) · op(B) on row-major buffers.
/// op(A) is m×k; A is stored k×m when `ta`. Same for B (k×n, stored n×k when `tb`).
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool ta, bool tb, bool accumulate) {
  using Idx = Eigen::Index;
  MatMap<T> C(c, Idx(m), Idx(n));
  ConstMatMap<T> A(a, ta ? Idx(k) : Idx(m), ta ? Idx(m) : Idx(k));
  ConstMatMap<T> B(b, tb ? Idx(n) : Idx(k), tb ? Idx(k) : Idx(n));
  if (accumulate) {
    if (!ta && !tb) C.noalias() += A * B;
    else if (ta && !tb) C.noalias() += A.transpose() * B;
    else if (!ta && tb) C.noalias() += A * B.transpose();
    else C.noalias() += A.transpose() * B.transpose();
  } else {
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
}

/// Adds bias[c] to every row of a rows×cols row-major buffer.
template <typename T>
void add_row_bias(T* m, const T* bias, std::size_t rows, std::size_t cols) {
  using Idx = Eigen::Index;
  MatMap<T>(m, Idx(rows), Idx(cols)).rowwise() +=
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias, Idx(cols));
}

/// grad[c] += Σ_r m[r,c].
template <typename T>
void add_column_sums(const T* m, T* grad, std::size_t rows, std::size_t cols) {
  using Idx = Eigen::Index;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad, Idx(cols)) +=
      ConstMatMap<T>(m, Idx(rows), Idx(cols)).colwise().sum();
}

template <typename T>
inline void add_to(T* __restrict dst, const T* __restrict src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

/// Geometry of a "same"-padded 2-D convolution on an HWC image.
struct ConvGeometry {
  std::size_t in_h, in_w, channels, kernel, stride, out_h, out_w, pad_top, pad_left;

  static ConvGeometry same(std::size_t h, std::size_t w, std::size_t c, std::size_t k,
                           std::size_t s) {
    ConvGeometry g{h, w, c, k, s, (h + s - 1) / s, (w + s - 1) / s, 0, 0};
    const std::size_t need_h = (g.out_h - 1) * s + k;
    const std::size_t need_w = (g.out_w - 1) * s + k;
    g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
    g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
    return g;
  }

  std::size_t rows() const { return out_h * out_w; }
  std::size_t cols() const { return kernel * kernel * channels; }
};

/// Unfolds an HWC image into a (out_h·out_w) × (k·k·C) patch matrix.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const std::size_t cols = g.cols();
  const std::size_t C = g.channels;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      T* row = col + (oy * g.out_w + ox) * cols;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const long iy = long(oy * g.stride + ky) - long(g.pad_top);
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const long ix = long(ox * g.stride + kx) - long(g.pad_left);
          T* dst = row + (ky * g.kernel + kx) * C;
          if (iy < 0 || ix < 0 || iy >= long(g.in_h) || ix >= long(g.in_w)) {
            std::fill(dst, dst + C, T{0});
          } else {
            const T* src = img + (std::size_t(iy) * g.in_w + std::size_t(ix)) * C;
            std::copy(src, src + C, dst);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-and-adds patch rows back into an HWC image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const std::size_t cols = g.cols();
  const std::size_t C = g.channels;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const T* row = col + (oy * g.out_w + ox) * cols;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const long iy = long(oy * g.stride + ky) - long(g.pad_top);
        if (iy < 0 || iy >= long(g.in_h)) continue;
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const long ix = long(ox * g.stride + kx) - long(g.pad_left);
          if (ix < 0 || ix >= long(g.in_w)) continue;
          const T* src = row + (ky * g.kernel + kx) * C;
          T* dst = img + (std::size_t(iy) * g.in_w + std::size_t(ix)) * C;
          add_to(dst, src, C);
        }
      }
    }
  }
}

}  // namespace iretinex::detail
