// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/affine.hpp"

#include <numbers>

namespace atnk {

namespace {

constexpr double kBoundsSlack = 1e-9;

float bilinear(const Plane& plane, double x, double y) {
  const int h = static_cast<int>(plane.rows());
  const int w = static_cast<int>(plane.cols());
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1 - fx) * plane(y0, x0) + fx * plane(y0, x1);
  const double bottom = (1 - fx) * plane(y1, x0) + fx * plane(y1, x1);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

}  // namespace

AffineTransform::AffineTransform(double rotation_deg, double dx, double dy,
                                 double scale)
    : rotation_deg_(rotation_deg), dx_(dx), dy_(dy), scale_(scale) {
  if (!(scale > 0.0) || !std::isfinite(rotation_deg) || !std::isfinite(dx) ||
      !std::isfinite(dy)) {
    throw config_error("affine transform must be finite with positive scale");
  }
}

AffineTransform AffineTransform::sample(std::mt19937_64& rng,
                                        const AugmentationRanges& ranges) {
  std::uniform_real_distribution<double> rot(-ranges.max_rotation_deg,
                                             ranges.max_rotation_deg);
  std::uniform_real_distribution<double> shift(-ranges.max_translation,
                                               ranges.max_translation);
  std::uniform_real_distribution<double> zoom(ranges.min_scale,
                                              ranges.max_scale);
  const double r = rot(rng);
  const double dx = shift(rng);
  const double dy = shift(rng);
  const double s = zoom(rng);
  return {r, dx, dy, s};
}

bool AffineTransform::within(const AugmentationRanges& ranges) const {
  return std::abs(rotation_deg_) <= ranges.max_rotation_deg &&
         std::abs(dx_) <= ranges.max_translation &&
         std::abs(dy_) <= ranges.max_translation &&
         scale_ >= ranges.min_scale && scale_ <= ranges.max_scale;
}

Eigen::Matrix<double, 2, 3> AffineTransform::forward_matrix(int height,
                                                            int width) const {
  const double theta = rotation_deg_ * std::numbers::pi / 180.0;
  Eigen::Matrix2d a;
  a << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  a *= scale_;
  const Eigen::Vector2d c(0.5 * (width - 1), 0.5 * (height - 1));
  const Eigen::Vector2d t(dx_ * width, dy_ * height);
  Eigen::Matrix<double, 2, 3> m;
  m.leftCols<2>() = a;
  m.col(2) = c - a * c + t;
  return m;
}

Eigen::Matrix<double, 2, 3> AffineTransform::inverse_matrix(int height,
                                                            int width) const {
  const auto fwd = forward_matrix(height, width);
  const Eigen::Matrix2d ainv = fwd.leftCols<2>().inverse();
  Eigen::Matrix<double, 2, 3> m;
  m.leftCols<2>() = ainv;
  m.col(2) = -ainv * fwd.col(2);
  return m;
}

Eigen::Vector2d AffineTransform::apply(const Eigen::Vector2d& p, int height,
                                       int width) const {
  if (is_identity()) return p;
  const double theta = rotation_deg_ * std::numbers::pi / 180.0;
  const Eigen::Vector2d c(0.5 * (width - 1), 0.5 * (height - 1));
  const Eigen::Vector2d d = p - c;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  return {scale_ * (cs * d.x() - sn * d.y()) + c.x() + dx_ * width,
          scale_ * (sn * d.x() + cs * d.y()) + c.y() + dy_ * height};
}

Eigen::Vector2d AffineTransform::apply_inverse(const Eigen::Vector2d& p,
                                               int height, int width) const {
  if (is_identity()) return p;
  const double theta = rotation_deg_ * std::numbers::pi / 180.0;
  const Eigen::Vector2d c(0.5 * (width - 1), 0.5 * (height - 1));
  const Eigen::Vector2d d = p - c - Eigen::Vector2d(dx_ * width, dy_ * height);
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  return {(cs * d.x() + sn * d.y()) / scale_ + c.x(),
          (-sn * d.x() + cs * d.y()) / scale_ + c.y()};
}

Eigen::Array<bool, Eigen::Dynamic, 1> AffineTransform::validity_mask(
    int height, int width) const {
  Eigen::Array<bool, Eigen::Dynamic, 1> mask(static_cast<Eigen::Index>(height) *
                                             width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Eigen::Vector2d q = apply({c, r}, height, width);
      mask(static_cast<Eigen::Index>(r) * width + c) =
          q.x() >= -kBoundsSlack && q.x() <= width - 1 + kBoundsSlack &&
          q.y() >= -kBoundsSlack && q.y() <= height - 1 + kBoundsSlack;
    }
  }
  return mask;
}

RgbImage warp_image(const RgbImage& image, const AffineTransform& transform) {
  if (transform.is_identity()) return image;
  const int h = image.height();
  const int w = image.width();
  RgbImage out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Eigen::Vector2d src = transform.apply_inverse({c, r}, h, w);
      for (int ch = 0; ch < 3; ++ch) {
        out.channels[ch](r, c) = bilinear(image.channels[ch], src.x(), src.y());
      }
    }
  }
  return out;
}

}  // namespace atnk
