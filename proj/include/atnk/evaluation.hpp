// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Bias-free linear regression from keypoints to landmarks and the landmark
// error metrics.
//
// Point sets are n x 2L matrices, one image per row, laid out
// x1 y1 x2 y2 ... in normalized [0, 1] coordinates.

#pragma once

#include "atnk/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace atnk {

template <typename Scalar>
struct RegressionModel {
  MatrixX<Scalar> weights;  // 2K x 2L
  bool min_norm = false;    // fewer samples than inputs

  template <typename Derived>
  MatrixX<Scalar> predict(const Eigen::MatrixBase<Derived>& x) const {
    if (x.cols() != weights.rows()) {
      throw config_error("regression input width " + std::to_string(x.cols()) +
                         " does not match " + std::to_string(weights.rows()));
    }
    return x * weights;
  }
};

/// argmin_W |X W - Y|_F with no intercept. Normal equations with a 1e-8
/// ridge when n >= 2K, otherwise the minimum-norm solution.
template <typename Scalar>
RegressionModel<Scalar> fit_regressor(const MatrixX<Scalar>& x,
                                      const MatrixX<Scalar>& y) {
  if (x.rows() != y.rows()) throw config_error("regression inputs differ in rows");
  if (x.rows() == 0 || x.cols() == 0 || y.cols() == 0) {
    throw config_error("empty regression problem");
  }
  if (!x.allFinite() || !y.allFinite()) throw numeric_error("non-finite regression data");
  if (x.isZero(0)) throw data_error("regression inputs are all zero");
  RegressionModel<Scalar> m;
  if (x.rows() >= x.cols()) {
    MatrixX<Scalar> gram = x.transpose() * x;
    gram.diagonal().array() += Scalar(1e-8);
    m.weights = gram.ldlt().solve(x.transpose() * y);
  } else {
    m.min_norm = true;
    m.weights = x.completeOrthogonalDecomposition().solve(y);
  }
  if (!m.weights.allFinite()) throw numeric_error("regression produced non-finite weights");
  return m;
}

namespace detail {

template <typename Scalar>
void check_pair(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw config_error("prediction and ground truth differ in shape");
  }
  if (gt.cols() % 2 != 0) throw config_error("landmark rows must hold (x, y) pairs");
}

/// Euclidean error of landmark j in image i, in units of `scale`.
template <typename Scalar>
double point_error(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& gt,
                   Eigen::Index i, Eigen::Index j, double scale) {
  const double dx = (static_cast<double>(pred(i, 2 * j)) - gt(i, 2 * j)) * scale;
  const double dy = (static_cast<double>(pred(i, 2 * j + 1)) - gt(i, 2 * j + 1)) * scale;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

struct InterocularResult {
  double value = 0.0;  // percent
  int skipped = 0;     // images with coincident eyes
};

/// Mean error over landmarks and images divided by the ground-truth
/// inter-ocular distance, x100.
template <typename Scalar>
InterocularResult nme_interocular(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& gt,
                                  std::pair<int, int> eyes) {
  detail::check_pair(pred, gt);
  const Eigen::Index l = gt.cols() / 2;
  if (eyes.first < 0 || eyes.second < 0 || eyes.first >= l || eyes.second >= l ||
      eyes.first == eyes.second) {
    throw config_error("eye landmark indices out of range");
  }
  InterocularResult r;
  double total = 0.0;
  long used = 0;
  for (Eigen::Index i = 0; i < gt.rows(); ++i) {
    const double ex = static_cast<double>(gt(i, 2 * eyes.first)) - gt(i, 2 * eyes.second);
    const double ey =
        static_cast<double>(gt(i, 2 * eyes.first + 1)) - gt(i, 2 * eyes.second + 1);
    const double iod = std::sqrt(ex * ex + ey * ey);
    if (iod == 0.0) {
      ++r.skipped;
      continue;
    }
    for (Eigen::Index j = 0; j < l; ++j) {
      total += detail::point_error(pred, gt, i, j, 1.0) / iod;
      ++used;
    }
  }
  r.value = used > 0 ? 100.0 * total / static_cast<double>(used) : 0.0;
  return r;
}

/// Mean error in pixels of a size x size frame divided by `size`, x100.
template <typename Scalar>
double nme_imagedim(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& gt,
                    double size = 256.0) {
  detail::check_pair(pred, gt);
  const Eigen::Index l = gt.cols() / 2;
  double total = 0.0;
  for (Eigen::Index i = 0; i < gt.rows(); ++i) {
    for (Eigen::Index j = 0; j < l; ++j) total += detail::point_error(pred, gt, i, j, size);
  }
  const double count = static_cast<double>(gt.rows() * l);
  return count > 0 ? 100.0 * (total / count) / size : 0.0;
}

enum class Accumulation {
  Sum,   // per-image sum over landmarks, averaged over images
  Mean,  // per-image mean over landmarks, averaged over images
};

/// Landmark errors in pixels of a size x size frame, accumulated per image
/// and averaged over images.
template <typename Scalar>
double cumulative_l2(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& gt,
                     double size = 256.0, Accumulation mode = Accumulation::Sum) {
  detail::check_pair(pred, gt);
  const Eigen::Index l = gt.cols() / 2;
  double total = 0.0;
  for (Eigen::Index i = 0; i < gt.rows(); ++i) {
    for (Eigen::Index j = 0; j < l; ++j) total += detail::point_error(pred, gt, i, j, size);
  }
  if (gt.rows() == 0 || l == 0) return 0.0;
  total /= static_cast<double>(gt.rows());
  return mode == Accumulation::Sum ? total : total / static_cast<double>(l);
}

/// Percentage of landmarks within `threshold` pixels (inclusive) in a
/// size x size frame.
template <typename Scalar>
double pck(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& gt,
           double threshold = 6.0, double size = 256.0) {
  detail::check_pair(pred, gt);
  const Eigen::Index l = gt.cols() / 2;
  long hits = 0;
  for (Eigen::Index i = 0; i < gt.rows(); ++i) {
    for (Eigen::Index j = 0; j < l; ++j) {
      if (detail::point_error(pred, gt, i, j, size) <= threshold) ++hits;
    }
  }
  const double count = static_cast<double>(gt.rows() * l);
  return count > 0 ? 100.0 * static_cast<double>(hits) / count : 0.0;
}

/// Mean landmark error in pixels of a 128 x 128 frame.
template <typename Scalar>
double relative_l2_128(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& gt) {
  detail::check_pair(pred, gt);
  const Eigen::Index l = gt.cols() / 2;
  double total = 0.0;
  for (Eigen::Index i = 0; i < gt.rows(); ++i) {
    for (Eigen::Index j = 0; j < l; ++j) total += detail::point_error(pred, gt, i, j, 128.0);
  }
  const double count = static_cast<double>(gt.rows() * l);
  return count > 0 ? total / count : 0.0;
}

}  // namespace atnk
