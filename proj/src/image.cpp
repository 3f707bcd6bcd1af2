// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace atnk {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

RgbImage from_interleaved(const std::vector<std::uint8_t>& pixels, int height,
                          int width) {
  RgbImage image(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const std::size_t base = 3 * (static_cast<std::size_t>(r) * width + c);
      for (int ch = 0; ch < 3; ++ch) {
        image.channels[ch](r, c) = pixels[base + ch] / 255.0f;
      }
    }
  }
  return image;
}

std::vector<std::uint8_t> to_interleaved(const RgbImage& image) {
  const int h = image.height();
  const int w = image.width();
  std::vector<std::uint8_t> pixels(3 * static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t base = 3 * (static_cast<std::size_t>(r) * w + c);
      for (int ch = 0; ch < 3; ++ch) {
        pixels[base + ch] = to_byte(image.channels[ch](r, c));
      }
    }
  }
  return pixels;
}

png_image rgb_header(int height, int width) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = PNG_FORMAT_RGB;
  return png;
}

}  // namespace

RgbImage read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw data_error("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw data_error("cannot decode PNG " + path.string() + ": " + png.message);
  }
  return from_interleaved(pixels, static_cast<int>(png.height),
                          static_cast<int>(png.width));
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw data_error(std::string("cannot parse PNG payload: ") + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw data_error(std::string("cannot decode PNG payload: ") + png.message);
  }
  return from_interleaved(pixels, static_cast<int>(png.height),
                          static_cast<int>(png.width));
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  auto pixels = to_interleaved(image);
  png_image png = rgb_header(image.height(), image.width());
  if (!png_image_write_to_file(&png, path.c_str(), 0, pixels.data(), 0,
                               nullptr)) {
    throw data_error("cannot write PNG " + path.string() + ": " + png.message);
  }
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  auto pixels = to_interleaved(image);
  png_image png = rgb_header(image.height(), image.width());
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, pixels.data(), 0,
                                 nullptr)) {
    throw data_error(std::string("cannot size PNG: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, pixels.data(), 0,
                                 nullptr)) {
    throw data_error(std::string("cannot encode PNG: ") + png.message);
  }
  out.resize(size);
  return out;
}

void write_gray_png(const std::filesystem::path& path, const Plane& values,
                    float lo, float hi) {
  const int h = static_cast<int>(values.rows());
  const int w = static_cast<int>(values.cols());
  const float span = hi > lo ? hi - lo : 1.0f;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      pixels[static_cast<std::size_t>(r) * w + c] =
          to_byte((values(r, c) - lo) / span);
    }
  }
  png_image png = rgb_header(h, w);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, pixels.data(), 0,
                               nullptr)) {
    throw data_error("cannot write PNG " + path.string() + ": " + png.message);
  }
}

}  // namespace atnk
