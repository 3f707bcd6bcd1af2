// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "atnk/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace atnk {

using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Planar RGB raster with values in [0, 1].
struct RgbImage {
  std::array<Plane, 3> channels;

  RgbImage() = default;
  RgbImage(int height, int width, float fill = 0.0f) {
    for (auto& c : channels) c = Plane::Constant(height, width, fill);
  }

  int height() const { return static_cast<int>(channels[0].rows()); }
  int width() const { return static_cast<int>(channels[0].cols()); }
  bool empty() const { return channels[0].size() == 0; }
};

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

/// Encodes to an in-memory PNG; used by the sidecar transport.
std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

/// Writes an 8-bit grayscale PNG, mapping [lo, hi] linearly onto [0, 255].
void write_gray_png(const std::filesystem::path& path, const Plane& values,
                    float lo, float hi);

}  // namespace atnk
