// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small affine augmentations and the warps they induce on images and maps.
//
// Points are (x = col, y = row) in pixel units of the frame being warped.
// The forward transform T rotates and scales about the frame centre and then
// translates by (dx * width, dy * height):
//
//   T(p) = s * R(theta) * (p - c) + c + t,   c = ((W - 1) / 2, (H - 1) / 2)
//
// A warped image satisfies X'(T(p)) = X(p); a warped map is pulled back with
// M(p) = M'(T(p)).

#pragma once

#include "atnk/image.hpp"
#include "atnk/types.hpp"

#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace atnk {

struct AugmentationRanges {
  double max_rotation_deg = 15.0;
  double max_translation = 0.25;  // fraction of width / height
  double min_scale = 1.0;
  double max_scale = 1.2;
};

class AffineTransform {
 public:
  AffineTransform() = default;
  AffineTransform(double rotation_deg, double dx, double dy, double scale);

  static AffineTransform sample(std::mt19937_64& rng,
                                const AugmentationRanges& ranges = {});

  double rotation_deg() const { return rotation_deg_; }
  double dx() const { return dx_; }
  double dy() const { return dy_; }
  double scale() const { return scale_; }

  bool is_identity() const {
    return rotation_deg_ == 0.0 && dx_ == 0.0 && dy_ == 0.0 && scale_ == 1.0;
  }
  bool within(const AugmentationRanges& ranges) const;

  /// 2x3 matrix of T acting on homogeneous (x, y, 1) in a height x width frame.
  Eigen::Matrix<double, 2, 3> forward_matrix(int height, int width) const;
  Eigen::Matrix<double, 2, 3> inverse_matrix(int height, int width) const;

  Eigen::Vector2d apply(const Eigen::Vector2d& p, int height, int width) const;
  Eigen::Vector2d apply_inverse(const Eigen::Vector2d& p, int height,
                                int width) const;

  /// Pixels whose pull-back source T(p) lies inside the frame.
  Eigen::Array<bool, Eigen::Dynamic, 1> validity_mask(int height,
                                                      int width) const;

 private:
  double rotation_deg_ = 0.0;
  double dx_ = 0.0;
  double dy_ = 0.0;
  double scale_ = 1.0;
};

/// Renders T(X) by bilinear sampling X at T^-1(q), clamping at the border.
RgbImage warp_image(const RgbImage& image, const AffineTransform& transform);

/// Bilinear pull-back M(p) = M'(T(p)) as a sparse (H*W) x (H*W) operator over
/// row-major pixel indices. Rows outside the validity mask are empty.
template <typename Scalar>
struct MapPullback {
  Eigen::SparseMatrix<Scalar, Eigen::RowMajor> op;
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;
  Eigen::Index valid_count = 0;

  template <typename Derived>
  MatrixX<Scalar> apply(const Eigen::MatrixBase<Derived>& maps) const {
    return op * maps;
  }
  template <typename Derived>
  MatrixX<Scalar> adjoint(const Eigen::MatrixBase<Derived>& grad) const {
    return op.transpose() * grad;
  }
};

template <typename Scalar>
MapPullback<Scalar> make_pullback(const AffineTransform& transform, int height,
                                  int width) {
  MapPullback<Scalar> out;
  const Eigen::Index n = static_cast<Eigen::Index>(height) * width;
  out.valid = transform.validity_mask(height, width);
  out.valid_count = out.valid.count();
  std::vector<Eigen::Triplet<Scalar>> entries;
  entries.reserve(static_cast<std::size_t>(4 * out.valid_count));
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Eigen::Index row = static_cast<Eigen::Index>(r) * width + c;
      if (!out.valid(row)) continue;
      const Eigen::Vector2d q = transform.apply({c, r}, height, width);
      const double qx = std::clamp(q.x(), 0.0, width - 1.0);
      const double qy = std::clamp(q.y(), 0.0, height - 1.0);
      const int x0 = static_cast<int>(std::floor(qx));
      const int y0 = static_cast<int>(std::floor(qy));
      const double fx = qx - x0;
      const double fy = qy - y0;
      const int x1 = std::min(x0 + 1, width - 1);
      const int y1 = std::min(y0 + 1, height - 1);
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy,
                           fx * fy};
      const int xs[4] = {x0, x1, x0, x1};
      const int ys[4] = {y0, y0, y1, y1};
      for (int k = 0; k < 4; ++k) {
        if (w[k] == 0.0) continue;
        entries.emplace_back(row, static_cast<Eigen::Index>(ys[k]) * width + xs[k],
                             static_cast<Scalar>(w[k]));
      }
    }
  }
  out.op.resize(n, n);
  out.op.setFromTriplets(entries.begin(), entries.end());
  return out;
}

}  // namespace atnk
