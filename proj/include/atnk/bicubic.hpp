// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Separable Catmull-Rom (a = -0.5) resampling with edge clamping.
//
// A grid of D channels over an h x w raster is stored as an (h*w) x D matrix:
// row p holds the channel vector of row-major pixel p. Output pixel X
// samples the source at (X + 0.5) * src / dst - 0.5 (half-pixel centres).

#pragma once

#include "atnk/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace atnk {

template <typename Scalar>
Scalar catmull_rom_weight(Scalar x) {
  constexpr Scalar a = Scalar(-0.5);
  x = std::abs(x);
  if (x <= Scalar(1)) {
    return ((a + 2) * x - (a + 3)) * x * x + 1;
  }
  if (x < Scalar(2)) {
    return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
  }
  return Scalar(0);
}

/// Interpolates a 1D sequence at fractional index `x` with clamped taps.
template <typename Scalar>
Scalar catmull_rom_sample(std::span<const Scalar> samples, Scalar x) {
  const int n = static_cast<int>(samples.size());
  const int base = static_cast<int>(std::floor(x));
  const Scalar t = x - base;
  Scalar acc = 0;
  for (int k = -1; k <= 2; ++k) {
    const int idx = std::clamp(base + k, 0, n - 1);
    acc += catmull_rom_weight(t - k) * samples[idx];
  }
  return acc;
}

namespace detail {

struct Tap4 {
  std::array<int, 4> index{};
  std::array<double, 4> weight{};
};

inline std::vector<Tap4> catmull_rom_taps(int src, int dst) {
  std::vector<Tap4> taps(dst);
  const double ratio = static_cast<double>(src) / dst;
  for (int x = 0; x < dst; ++x) {
    const double s = (x + 0.5) * ratio - 0.5;
    const int base = static_cast<int>(std::floor(s));
    const double t = s - base;
    for (int k = -1; k <= 2; ++k) {
      taps[x].index[k + 1] = std::clamp(base + k, 0, src - 1);
      taps[x].weight[k + 1] = catmull_rom_weight(t - k);
    }
  }
  return taps;
}

}  // namespace detail

/// Linear operator taking an (h*w) x D grid to (H*W) x D.
///
/// Applied in two passes: a horizontal pass producing (h*W) x D "row
/// buffers", then one output row at a time from four row buffers. The pieces
/// are public so callers can fuse per-row work (softmax, accumulation) while
/// the row is hot in cache.
template <typename Scalar>
class BicubicUpsampler {
 public:
  BicubicUpsampler() = default;

  BicubicUpsampler(int src_height, int src_width, int dst_height,
                   int dst_width)
      : src_h_(src_height),
        src_w_(src_width),
        dst_h_(dst_height),
        dst_w_(dst_width) {
    if (src_height < 2 || src_width < 2) {
      throw config_error("bicubic upsampling needs a source of at least 2x2");
    }
    if (dst_height < src_height || dst_width < src_width) {
      throw config_error("bicubic target " + std::to_string(dst_height) + "x" +
                         std::to_string(dst_width) +
                         " is smaller than source " +
                         std::to_string(src_height) + "x" +
                         std::to_string(src_width));
    }
    horizontal_ = MatrixX<Scalar>::Zero(dst_width, src_width);
    const auto taps = detail::catmull_rom_taps(src_width, dst_width);
    for (int x = 0; x < dst_width; ++x) {
      for (int k = 0; k < 4; ++k) {
        horizontal_(x, taps[x].index[k]) += static_cast<Scalar>(taps[x].weight[k]);
      }
    }
    for (const auto& tap : detail::catmull_rom_taps(src_height, dst_height)) {
      VerticalTap v;
      for (int k = 0; k < 4; ++k) {
        v.index[k] = tap.index[k];
        v.weight[k] = static_cast<Scalar>(tap.weight[k]);
      }
      vertical_.push_back(v);
    }
  }

  int src_height() const { return src_h_; }
  int src_width() const { return src_w_; }
  int dst_height() const { return dst_h_; }
  int dst_width() const { return dst_w_; }

  /// (h*w) x D -> (h*W) x D.
  template <typename Derived>
  void horizontal(const Eigen::MatrixBase<Derived>& grid,
                  MatrixX<Scalar>& rows) const {
    eigen_assert(grid.rows() == src_h_ * src_w_);
    rows.resize(static_cast<Eigen::Index>(src_h_) * dst_w_, grid.cols());
    for (int y = 0; y < src_h_; ++y) {
      rows.middleRows(y * dst_w_, dst_w_).noalias() =
          horizontal_ * grid.middleRows(y * src_w_, src_w_);
    }
  }

  /// Output row `y` (W x D) from the row buffers.
  template <typename Out>
  void vertical_row(const MatrixX<Scalar>& rows, int y, Out&& out) const {
    const auto& tap = vertical_[y];
    out = tap.weight[0] * rows.middleRows(tap.index[0] * dst_w_, dst_w_) +
          tap.weight[1] * rows.middleRows(tap.index[1] * dst_w_, dst_w_) +
          tap.weight[2] * rows.middleRows(tap.index[2] * dst_w_, dst_w_) +
          tap.weight[3] * rows.middleRows(tap.index[3] * dst_w_, dst_w_);
  }

  /// Scatters the gradient of output row `y` into row-buffer gradients.
  template <typename Derived>
  void vertical_row_adjoint(const Eigen::MatrixBase<Derived>& grad, int y,
                            MatrixX<Scalar>& rows_grad) const {
    const auto& tap = vertical_[y];
    for (int k = 0; k < 4; ++k) {
      rows_grad.middleRows(tap.index[k] * dst_w_, dst_w_) += tap.weight[k] * grad;
    }
  }

  /// (h*W) x D row-buffer gradient -> (h*w) x D grid gradient.
  MatrixX<Scalar> horizontal_adjoint(const MatrixX<Scalar>& rows_grad) const {
    MatrixX<Scalar> out(static_cast<Eigen::Index>(src_h_) * src_w_, rows_grad.cols());
    for (int y = 0; y < src_h_; ++y) {
      out.middleRows(y * src_w_, src_w_).noalias() =
          horizontal_.transpose() * rows_grad.middleRows(y * dst_w_, dst_w_);
    }
    return out;
  }

  template <typename Derived>
  MatrixX<Scalar> apply(const Eigen::MatrixBase<Derived>& grid) const {
    MatrixX<Scalar> rows;
    horizontal(grid, rows);
    MatrixX<Scalar> out(static_cast<Eigen::Index>(dst_h_) * dst_w_, grid.cols());
    for (int y = 0; y < dst_h_; ++y) {
      vertical_row(rows, y, out.middleRows(y * dst_w_, dst_w_));
    }
    return out;
  }

  template <typename Derived>
  MatrixX<Scalar> adjoint(const Eigen::MatrixBase<Derived>& grad) const {
    eigen_assert(grad.rows() == dst_h_ * dst_w_);
    MatrixX<Scalar> rows_grad =
        MatrixX<Scalar>::Zero(static_cast<Eigen::Index>(src_h_) * dst_w_, grad.cols());
    for (int y = 0; y < dst_h_; ++y) {
      vertical_row_adjoint(grad.middleRows(y * dst_w_, dst_w_), y, rows_grad);
    }
    return horizontal_adjoint(rows_grad);
  }

 private:
  struct VerticalTap {
    std::array<int, 4> index{};
    std::array<Scalar, 4> weight{};
  };

  int src_h_ = 0;
  int src_w_ = 0;
  int dst_h_ = 0;
  int dst_w_ = 0;
  MatrixX<Scalar> horizontal_;  // W x w
  std::vector<VerticalTap> vertical_;
};

/// Upsamples an (h*w) x D grid to (H*W) x D.
template <typename Derived>
MatrixX<typename Derived::Scalar> upsample_bicubic(
    const Eigen::MatrixBase<Derived>& grid, int src_height, int src_width,
    int dst_height, int dst_width) {
  using Scalar = typename Derived::Scalar;
  if (grid.rows() != static_cast<Eigen::Index>(src_height) * src_width) {
    throw config_error("grid rows do not match the stated source shape");
  }
  return BicubicUpsampler<Scalar>(src_height, src_width, dst_height, dst_width)
      .apply(grid);
}

}  // namespace atnk
