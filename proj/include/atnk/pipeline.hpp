// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run orchestration shared by the command-line tool and the test harness:
// backend construction, token voting over a training split, batch keypoint
// extraction, keypoint files, overlays and metric reports.

#pragma once

#include "atnk/attention.hpp"
#include "atnk/config.hpp"
#include "atnk/dataset.hpp"
#include "atnk/evaluation.hpp"
#include "atnk/keypoints.hpp"
#include "atnk/training.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace atnk {

/// Backend named by `cfg.backend`; `cfg` must already be resolved.
std::unique_ptr<AttentionBackend<Real>> make_backend(const RunConfig& cfg);

/// Writes `<dir>/<command>.run.json`: command, config hash, full config dump
/// and any extra fields (a JSON object text).
std::filesystem::path write_run_record(const std::filesystem::path& dir,
                                       const std::string& command,
                                       const RunConfig& cfg,
                                       const std::string& extra_json = "{}");

struct TokenVote {
  std::vector<std::vector<int>> per_image;
  std::vector<int> chosen;
};

/// Per-image top-kappa + FPS selections on identity-pass maps, then a vote.
TokenVote choose_tokens(const AttentionBackend<Real>& backend,
                        const DatasetManifest& manifest, const EmbeddingSet<Real>& e,
                        const RunConfig& cfg);

/// Per-image ensemble seed; independent of manifest order.
std::uint64_t image_seed(std::uint64_t seed, const std::string& id);

struct ExtractOptions {
  std::filesystem::path heatmap_dir;  // PNG + ATNK per image when set
  std::filesystem::path overlay_dir;  // marker overlays when set
};

std::vector<KeypointSet> extract_all(const AttentionBackend<Real>& backend,
                                     const DatasetManifest& manifest,
                                     const EmbeddingSet<Real>& e,
                                     const std::vector<int>& tokens,
                                     const RunConfig& cfg,
                                     const ExtractOptions& opts = {});

/// JSON lines, one record per keypoint: image, rank, token, row, col, x, y.
void write_keypoints(const std::filesystem::path& path,
                     const std::vector<KeypointSet>& sets);
std::vector<KeypointSet> read_keypoints(const std::filesystem::path& path);

/// Copy of `image` with a filled disc of radius `radius` per keypoint,
/// coloured by rank (see marker_colour).
RgbImage render_overlay(const RgbImage& image, const KeypointSet& keypoints,
                        int radius = 2);
std::array<float, 3> marker_colour(std::size_t rank);
/// Pixel (row, col) in an h x w image for normalized keypoint coordinates.
PixelCoord overlay_pixel(const Keypoint& k, int height, int width);

struct MetricValue {
  std::string name;
  double value = 0.0;
  std::string normalization;
};

struct MetricReport {
  std::string config_hash;
  std::vector<MetricValue> metrics;
  bool min_norm = false;
  int interocular_skipped = 0;
  int train_images = 0;
  int test_images = 0;

  const MetricValue* find(const std::string& name) const;
  std::string json() const;
};

/// n x 2K keypoint rows and n x 2L landmark rows, in annotation order.
MatrixX<double> keypoint_matrix(const std::vector<KeypointSet>& sets,
                                const AnnotationSet& order);
MatrixX<double> landmark_matrix(const AnnotationSet& annotations);

/// Fits the regressor on the training split and scores the test split.
/// Rejects splits that share image ids.
MetricReport evaluate(const std::vector<KeypointSet>& train_keypoints,
                      const std::vector<KeypointSet>& test_keypoints,
                      const AnnotationSet& train_landmarks,
                      const AnnotationSet& test_landmarks, const EvalConfig& cfg,
                      const std::string& config_hash);

void write_report(const std::filesystem::path& path, const MetricReport& report);

struct PipelineResult {
  TrainingResult training;
  TokenVote vote;
  std::vector<KeypointSet> train_keypoints;
  std::vector<KeypointSet> test_keypoints;
  MetricReport report;
};

/// optimize -> vote -> extract both splits -> evaluate, on a dataset laid
/// out by generate_synthetic under `data_dir`. Writes every artefact under
/// `out_dir`.
PipelineResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& data_dir,
                            const std::filesystem::path& out_dir);

}  // namespace atnk
