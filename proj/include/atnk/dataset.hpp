// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset manifests, landmark annotations and the synthetic part generator.
//
// Manifest (one record per line, '#' lines are comments):
//
//   # split: train
//   <id> \t <path relative to the manifest> \t [x1 y1 x2 y2 ...]
//
// Annotation file:
//
//   # landmarks: L
//   # eyes: i j            (optional)
//   <id> x1 y1 ... xL yL
//
// Landmark coordinates are normalized to [0, 1] with x along columns.

#pragma once

#include "atnk/affine.hpp"
#include "atnk/image.hpp"
#include "atnk/types.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace atnk {

struct ManifestRecord {
  std::string id;
  std::filesystem::path path;  // relative to the manifest root
  std::optional<std::vector<double>> landmarks;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  std::vector<ManifestRecord> records;  // sorted by id

  std::filesystem::path image_path(const ManifestRecord& r) const {
    return root / r.path;
  }
  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    const DatasetManifest& manifest);

struct LandmarkAnnotation {
  std::string id;
  std::vector<double> coords;  // x1 y1 x2 y2 ...

  int count() const { return static_cast<int>(coords.size() / 2); }
  friend bool operator==(const LandmarkAnnotation&, const LandmarkAnnotation&) = default;
};

struct AnnotationSet {
  int landmarks = 0;
  std::optional<std::pair<int, int>> eyes;
  std::vector<LandmarkAnnotation> records;  // sorted by id

  const LandmarkAnnotation* find(const std::string& id) const;
};

AnnotationSet load_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       const AnnotationSet& annotations);

enum class Background { Flat, Noise, Clutter };

Background parse_background(const std::string& name);
std::string to_string(Background b);

struct SyntheticSpec {
  int parts = 5;
  int canvas = 128;
  int train_count = 64;
  int test_count = 32;
  /// Part radius as a fraction of the canvas.
  double part_radius = 0.07;
  /// Canonical centres are drawn within +-layout_extent of the canvas centre
  /// (fraction of the canvas).
  double layout_extent = 0.28;
  AugmentationRanges deformation{25.0, 0.12, 0.85, 1.1};
  Background background = Background::Noise;
  double noise_level = 0.12;
  std::uint64_t appearance_seed = 7;

  void validate() const;
};

/// Part hues and canonical centres derived from the appearance seed.
struct PartLayout {
  std::vector<std::array<float, 3>> hues;
  std::vector<Eigen::Vector2d> centres;  // pixels, (x, y)
};

PartLayout make_layout(const SyntheticSpec& spec);

struct SyntheticSample {
  RgbImage image;
  AffineTransform deformation;
  std::vector<Eigen::Vector2d> landmarks;  // pixels, (x, y)
};

/// Renders one image; the deformation is drawn from `rng`.
SyntheticSample render_sample(const SyntheticSpec& spec, const PartLayout& layout,
                              std::mt19937_64& rng);

struct SyntheticDataset {
  DatasetManifest train;
  DatasetManifest test;
  AnnotationSet train_landmarks;
  AnnotationSet test_landmarks;
};

/// Writes train/ and test/ PNGs, train.tsv, test.tsv, *_landmarks.txt and
/// deformations.tsv under `out_dir`.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                                    const std::filesystem::path& out_dir);

}  // namespace atnk
