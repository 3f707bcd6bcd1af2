// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Localization and equivariance objectives on fused (H*W) x N maps, with
// their cotangents. Gaussian targets and maxima are constants of each step.

#pragma once

#include "atnk/affine.hpp"
#include "atnk/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace atnk {

inline constexpr double kKlFloor = 1e-8;

/// Per column, the (row, col) of the largest entry; ties resolve to the
/// smallest row-major index.
template <typename Scalar>
std::vector<PixelCoord> locate_maxima(const MatrixX<Scalar>& maps, int height,
                                      int width) {
  if (maps.rows() != static_cast<Eigen::Index>(height) * width) {
    throw config_error("map rows do not match " + std::to_string(height) + "x" +
                       std::to_string(width));
  }
  std::vector<PixelCoord> out;
  out.reserve(static_cast<std::size_t>(maps.cols()));
  for (Eigen::Index n = 0; n < maps.cols(); ++n) {
    const Scalar* col = maps.col(n).data();
    Eigen::Index best = 0;
    for (Eigen::Index p = 1; p < maps.rows(); ++p) {
      if (col[p] > col[best]) best = p;
    }
    out.push_back({static_cast<int>(best / width), static_cast<int>(best % width)});
  }
  return out;
}

/// exp(-|p - mu|^2 / (2 sigma^2)) over row-major pixels, as an (H*W) vector.
/// Evaluated as a product of row and column factors, so it is exactly 1 at mu
/// and exactly symmetric about it.
template <typename Scalar>
VectorX<Scalar> gaussian_target(const PixelCoord& mu, double sigma, int height,
                                int width) {
  if (!(sigma > 0.0)) throw config_error("gaussian sigma must be positive");
  if (mu.row < 0 || mu.row >= height || mu.col < 0 || mu.col >= width) {
    throw config_error("gaussian centre outside the map");
  }
  const double k = -1.0 / (2.0 * sigma * sigma);
  Eigen::ArrayXd gy(height);
  Eigen::ArrayXd gx(width);
  for (int r = 0; r < height; ++r) gy(r) = std::exp(k * (r - mu.row) * (r - mu.row));
  for (int c = 0; c < width; ++c) gx(c) = std::exp(k * (c - mu.col) * (c - mu.col));
  VectorX<Scalar> g(static_cast<Eigen::Index>(height) * width);
  for (int r = 0; r < height; ++r) {
    g.segment(static_cast<Eigen::Index>(r) * width, width) =
        (gx * gy(r)).template cast<Scalar>().matrix();
  }
  return g;
}

/// One target column per centre.
template <typename Scalar>
MatrixX<Scalar> gaussian_targets(const std::vector<PixelCoord>& centres,
                                 double sigma, int height, int width) {
  MatrixX<Scalar> g(static_cast<Eigen::Index>(height) * width,
                    static_cast<Eigen::Index>(centres.size()));
  for (std::size_t n = 0; n < centres.size(); ++n) {
    g.col(static_cast<Eigen::Index>(n)) =
        gaussian_target<Scalar>(centres[n], sigma, height, width);
  }
  return g;
}

/// KL(G^ || M^) with both sides floored at 1e-8 and normalized over pixels.
template <typename DerivedM, typename DerivedG>
double kl_localization_score(const Eigen::MatrixBase<DerivedM>& map,
                             const Eigen::MatrixBase<DerivedG>& target) {
  if (map.size() != target.size() || map.size() == 0) {
    throw config_error("map and target sizes differ");
  }
  const Eigen::ArrayXd m =
      map.template cast<double>().array().max(kKlFloor).eval();
  const Eigen::ArrayXd g =
      target.template cast<double>().array().max(kKlFloor).eval();
  const double ms = m.sum();
  const double gs = g.sum();
  const Eigen::ArrayXd gh = g / gs;
  return (gh * ((gh).log() - (m / ms).log())).sum();
}

template <typename Scalar>
std::vector<double> kl_scores(const MatrixX<Scalar>& maps,
                              const MatrixX<Scalar>& targets) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(maps.cols()));
  for (Eigen::Index n = 0; n < maps.cols(); ++n) {
    out.push_back(kl_localization_score(maps.col(n), targets.col(n)));
  }
  return out;
}

/// Indices of the kappa smallest scores, in increasing score order; ties by
/// smaller index.
inline std::vector<int> select_top_kappa(const std::vector<double>& scores,
                                         int kappa) {
  if (kappa < 1) throw config_error("kappa must be positive");
  if (kappa > static_cast<int>(scores.size())) {
    throw config_error("kappa " + std::to_string(kappa) + " exceeds token count " +
                       std::to_string(scores.size()));
  }
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return scores[a] < scores[b]; });
  idx.resize(static_cast<std::size_t>(kappa));
  return idx;
}

template <typename Scalar>
struct LossTerm {
  double value = 0.0;
  MatrixX<Scalar> cotangent;  // shaped like the maps it differentiates
};

/// Mean over selected tokens of the mean squared pixel difference to their
/// targets. Columns of `targets` are indexed like `maps`.
template <typename Scalar>
LossTerm<Scalar> localization_loss(const MatrixX<Scalar>& maps,
                                   const MatrixX<Scalar>& targets,
                                   const std::vector<int>& selection) {
  if (selection.empty()) throw config_error("empty token selection");
  if (maps.rows() != targets.rows() || maps.cols() != targets.cols()) {
    throw config_error("maps and targets differ in shape");
  }
  LossTerm<Scalar> out;
  out.cotangent = MatrixX<Scalar>::Zero(maps.rows(), maps.cols());
  const double kappa = static_cast<double>(selection.size());
  const double pixels = static_cast<double>(maps.rows());
  const Scalar scale = static_cast<Scalar>(2.0 / (kappa * pixels));
  double total = 0.0;
  for (int n : selection) {
    if (n < 0 || n >= maps.cols()) throw config_error("selection index out of range");
    const VectorX<Scalar> diff = maps.col(n) - targets.col(n);
    total += diff.template cast<double>().squaredNorm() / pixels;
    out.cotangent.col(n) += scale * diff;
  }
  out.value = total / kappa;
  return out;
}

template <typename Scalar>
struct EquivarianceTerm {
  double value = 0.0;
  MatrixX<Scalar> clean_cotangent;   // w.r.t. maps of the original image
  MatrixX<Scalar> warped_cotangent;  // w.r.t. maps of the warped image
};

/// Mean over selected tokens and valid pixels of (M'(T(p)) - M(p))^2, where
/// M' are the maps of the warped image.
template <typename Scalar>
EquivarianceTerm<Scalar> equivariance_loss(const MatrixX<Scalar>& clean,
                                           const MatrixX<Scalar>& warped,
                                           const MapPullback<Scalar>& pullback,
                                           const std::vector<int>& selection) {
  if (selection.empty()) throw config_error("empty token selection");
  if (clean.rows() != warped.rows() || clean.cols() != warped.cols() ||
      pullback.op.rows() != clean.rows()) {
    throw config_error("equivariance inputs differ in shape");
  }
  if (pullback.valid_count == 0) throw data_error("empty validity mask");
  const auto k = static_cast<Eigen::Index>(selection.size());
  MatrixX<Scalar> picked(warped.rows(), k);
  for (Eigen::Index i = 0; i < k; ++i) picked.col(i) = warped.col(selection[i]);
  MatrixX<Scalar> diff = pullback.apply(picked);
  for (Eigen::Index i = 0; i < k; ++i) diff.col(i) -= clean.col(selection[i]);
  for (Eigen::Index p = 0; p < diff.rows(); ++p) {
    if (!pullback.valid(p)) diff.row(p).setZero();
  }
  const double denom = static_cast<double>(k) * static_cast<double>(pullback.valid_count);
  EquivarianceTerm<Scalar> out;
  out.value = diff.template cast<double>().squaredNorm() / denom;
  const MatrixX<Scalar> grad = diff * static_cast<Scalar>(2.0 / denom);
  const MatrixX<Scalar> back = pullback.adjoint(grad);
  out.clean_cotangent = MatrixX<Scalar>::Zero(clean.rows(), clean.cols());
  out.warped_cotangent = MatrixX<Scalar>::Zero(warped.rows(), warped.cols());
  for (Eigen::Index i = 0; i < k; ++i) {
    out.clean_cotangent.col(selection[i]) -= grad.col(i);
    out.warped_cotangent.col(selection[i]) += back.col(i);
  }
  return out;
}

}  // namespace atnk
