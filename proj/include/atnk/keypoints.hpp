// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Token selection (furthest point sampling per image, then frequency voting)
// and keypoint extraction from test-time ensembled maps.

#pragma once

#include "atnk/affine.hpp"
#include "atnk/attention.hpp"
#include "atnk/objective.hpp"
#include "atnk/types.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace atnk {

struct TokenPoint {
  int token = 0;
  PixelCoord mu;
  double kl = 0.0;
};

/// Greedy max-min subset of size k, seeded from the lowest-KL point. Returns
/// token ids in pick order; every tie goes to the smaller token id.
inline std::vector<int> furthest_point_sample(const std::vector<TokenPoint>& points,
                                              int k) {
  if (k < 1) throw config_error("furthest point sampling needs k >= 1");
  if (static_cast<int>(points.size()) < k) {
    throw config_error("furthest point sampling of " + std::to_string(k) +
                       " from " + std::to_string(points.size()) + " points");
  }
  std::size_t first = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto& a = points[i];
    const auto& b = points[first];
    if (a.kl < b.kl || (a.kl == b.kl && a.token < b.token)) first = i;
  }
  auto dist2 = [&](std::size_t i, std::size_t j) {
    const long dr = points[i].mu.row - points[j].mu.row;
    const long dc = points[i].mu.col - points[j].mu.col;
    return dr * dr + dc * dc;
  };
  std::vector<bool> taken(points.size(), false);
  std::vector<long> nearest(points.size(), std::numeric_limits<long>::max());
  std::vector<int> out;
  std::size_t pick = first;
  for (int step = 0; step < k; ++step) {
    taken[pick] = true;
    out.push_back(points[pick].token);
    for (std::size_t i = 0; i < points.size(); ++i) {
      nearest[i] = std::min(nearest[i], dist2(i, pick));
    }
    if (step + 1 == k) break;
    std::size_t best = points.size();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (taken[i]) continue;
      if (best == points.size() || nearest[i] > nearest[best] ||
          (nearest[i] == nearest[best] && points[i].token < points[best].token)) {
        best = i;
      }
    }
    pick = best;
  }
  return out;
}

/// The k most frequent tokens over all selections, most frequent first;
/// ties by smaller token id.
inline std::vector<int> vote_tokens(const std::vector<std::vector<int>>& selections,
                                    int k) {
  if (selections.empty()) throw config_error("no per-image selections to vote on");
  std::map<int, long> counts;
  for (const auto& s : selections) {
    if (static_cast<int>(s.size()) != k) {
      throw config_error("every per-image selection must hold " + std::to_string(k) +
                         " tokens");
    }
    for (int t : s) ++counts[t];
  }
  std::vector<std::pair<int, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (static_cast<int>(ranked.size()) < k) {
    throw config_error("fewer than k distinct tokens were selected");
  }
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(ranked[i].first);
  return out;
}

/// Per-image candidate set: top-kappa tokens by KL, thinned to k by FPS.
template <typename Scalar>
std::vector<int> image_selection(const MatrixX<Scalar>& fused, int height, int width,
                                 double sigma, int kappa, int k) {
  const auto maxima = locate_maxima(fused, height, width);
  const MatrixX<Scalar> targets = gaussian_targets<Scalar>(maxima, sigma, height, width);
  const auto scores = kl_scores(fused, targets);
  const auto top = select_top_kappa(scores, kappa);
  std::vector<TokenPoint> points;
  for (int n : top) points.push_back({n, maxima[n], scores[n]});
  return furthest_point_sample(points, k);
}

struct EnsembleConfig {
  int augmentations = 10;
  bool include_identity = true;
  AugmentationRanges ranges;

  void validate() const {
    if (augmentations < 1) throw config_error("augmentation count must be >= 1");
  }
};

/// The augmentation list for one image: the identity first when requested,
/// then transforms drawn from `seed`.
inline std::vector<AffineTransform> ensemble_transforms(const EnsembleConfig& cfg,
                                                        std::uint64_t seed) {
  cfg.validate();
  std::vector<AffineTransform> out;
  if (cfg.include_identity) out.emplace_back();
  std::mt19937_64 rng(seed);
  while (static_cast<int>(out.size()) < cfg.augmentations) {
    out.push_back(AffineTransform::sample(rng, cfg.ranges));
  }
  return out;
}

/// Per-pixel valid-count mean of the inverse-warped maps over `transforms`,
/// restricted to `columns` (all tokens when empty). Pixels that no transform
/// covers keep the identity-pass value.
template <typename Scalar>
MatrixX<Scalar> ensembled_map(const AttentionBackend<Scalar>& backend,
                              const RgbImage& image, const EmbeddingSet<Scalar>& e,
                              const std::vector<AffineTransform>& transforms,
                              const std::vector<int>& columns = {}) {
  if (transforms.empty()) throw config_error("empty augmentation list");
  const auto& bc = backend.config();
  const int h = bc.fused_height;
  const int w = bc.fused_width;
  auto pick = [&](const MatrixX<Scalar>& m) {
    if (columns.empty()) return m;
    MatrixX<Scalar> out(m.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) {
      out.col(static_cast<Eigen::Index>(i)) = m.col(columns[i]);
    }
    return out;
  };
  const MatrixX<Scalar> identity = pick(backend.forward(*backend.prepare(image), e).fused);
  if (transforms.size() == 1 && transforms[0].is_identity()) return identity;

  MatrixX<Scalar> sum = MatrixX<Scalar>::Zero(identity.rows(), identity.cols());
  VectorX<Scalar> count = VectorX<Scalar>::Zero(identity.rows());
  for (const auto& t : transforms) {
    if (t.is_identity()) {
      sum += identity;
      count.array() += Scalar(1);
      continue;
    }
    const auto pullback = make_pullback<Scalar>(t, h, w);
    const auto prep = backend.prepare(warp_image(image, t));
    const MatrixX<Scalar> back = pullback.apply(pick(backend.forward(*prep, e).fused));
    for (Eigen::Index p = 0; p < back.rows(); ++p) {
      if (!pullback.valid(p)) continue;
      sum.row(p) += back.row(p);
      count(p) += Scalar(1);
    }
  }
  for (Eigen::Index p = 0; p < sum.rows(); ++p) {
    if (count(p) > Scalar(0)) {
      sum.row(p) /= count(p);
    } else {
      sum.row(p) = identity.row(p);
    }
  }
  return sum;
}

template <typename Scalar>
MatrixX<Scalar> ensembled_map(const AttentionBackend<Scalar>& backend,
                              const RgbImage& image, const EmbeddingSet<Scalar>& e,
                              const EnsembleConfig& cfg, std::uint64_t seed,
                              const std::vector<int>& columns = {}) {
  return ensembled_map(backend, image, e, ensemble_transforms(cfg, seed), columns);
}

struct Keypoint {
  int token = 0;
  PixelCoord pixel;
  double x = 0.0;  // col / (W - 1)
  double y = 0.0;  // row / (H - 1)
};

struct KeypointSet {
  std::string id;
  std::vector<Keypoint> points;
};

/// Argmax per column of `maps`, which holds the maps of `tokens` in order.
template <typename Scalar>
KeypointSet keypoints_from_maps(const MatrixX<Scalar>& maps, int height, int width,
                                const std::vector<int>& tokens) {
  if (maps.cols() != static_cast<Eigen::Index>(tokens.size())) {
    throw config_error("one map per chosen token expected");
  }
  const auto maxima = locate_maxima(maps, height, width);
  KeypointSet out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Keypoint k;
    k.token = tokens[i];
    k.pixel = maxima[i];
    k.x = static_cast<double>(k.pixel.col) / (width - 1);
    k.y = static_cast<double>(k.pixel.row) / (height - 1);
    out.points.push_back(k);
  }
  return out;
}

inline void check_tokens(const std::vector<int>& tokens, int count) {
  if (tokens.empty()) throw config_error("no keypoint tokens chosen");
  for (int t : tokens) {
    if (t < 0 || t >= count) throw config_error("keypoint token out of range");
  }
}

template <typename Scalar>
KeypointSet extract_keypoints(const AttentionBackend<Scalar>& backend,
                              const RgbImage& image, const EmbeddingSet<Scalar>& e,
                              const std::vector<int>& tokens,
                              const EnsembleConfig& cfg, std::uint64_t seed) {
  check_tokens(tokens, e.count());
  const auto& bc = backend.config();
  return keypoints_from_maps(ensembled_map(backend, image, e, cfg, seed, tokens),
                             bc.fused_height, bc.fused_width, tokens);
}

}  // namespace atnk
