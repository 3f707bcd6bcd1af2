// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Embedding optimization: one image per step, Adam on
// L = L_localize + lambda * L_equiv.

#pragma once

#include "atnk/affine.hpp"
#include "atnk/attention.hpp"
#include "atnk/dataset.hpp"
#include "atnk/objective.hpp"
#include "atnk/types.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace atnk {

struct OptimizerConfig {
  int iterations = 2000;
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Gaussian width as a fraction of the fused height.
  double sigma_fraction = 0.05;
  int kappa = 10;
  double lambda_equiv = 10.0;
  bool equivariance = true;
  AugmentationRanges augmentation;
  /// Checkpoint cadence in iterations; 0 writes only the final checkpoint.
  int checkpoint_every = 0;

  double sigma(int fused_height) const { return sigma_fraction * fused_height; }
  double effective_lambda() const { return equivariance ? lambda_equiv : 0.0; }
  void validate() const;
};

template <typename Scalar>
struct OptimizerState {
  long iteration = 0;
  double learning_rate = 5e-3;
  MatrixX<Scalar> first_moment;
  MatrixX<Scalar> second_moment;
  std::uint64_t seed = 0;
  std::mt19937_64 rng;

  OptimizerState() = default;
  OptimizerState(const EmbeddingSet<Scalar>& e, double lr, std::uint64_t s)
      : learning_rate(lr),
        first_moment(MatrixX<Scalar>::Zero(e.count(), e.width())),
        second_moment(MatrixX<Scalar>::Zero(e.count(), e.width())),
        seed(s),
        rng(s) {}
};

struct LossReport {
  long iteration = 0;
  double total = 0.0;
  double localize = 0.0;
  double equiv = 0.0;
  double lambda_equiv = 10.0;
  std::vector<int> selected;
  std::vector<double> selected_kl;
  AffineTransform transform;
  bool equivariance = true;
};

/// Thrown for a non-finite loss; carries the maps of the offending tokens.
struct NonFiniteLoss : Error {
  NonFiniteLoss(const std::string& what, std::vector<int> tokens_,
                MatrixX<float> maps_)
      : Error(ErrorKind::Numeric, what),
        tokens(std::move(tokens_)),
        maps(std::move(maps_)) {}
  std::vector<int> tokens;
  MatrixX<float> maps;
};

/// Adam update; returns nothing, mutates embeddings and moments.
template <typename Scalar>
void adam_update(OptimizerState<Scalar>& state, const OptimizerConfig& cfg,
                 const MatrixX<Scalar>& grad, EmbeddingSet<Scalar>& e) {
  ++state.iteration;
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  state.first_moment = b1 * state.first_moment + (Scalar(1) - b1) * grad;
  state.second_moment =
      b2 * state.second_moment + (Scalar(1) - b2) * grad.cwiseAbs2();
  const double t = static_cast<double>(state.iteration);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
  const auto lr = static_cast<Scalar>(state.learning_rate);
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  e.tokens.array() -= lr * (state.first_moment.array() / c1) /
                      ((state.second_moment.array() / c2).sqrt() + eps);
  if (!state.first_moment.allFinite() || !state.second_moment.allFinite()) {
    throw numeric_error("non-finite optimizer moments at iteration " +
                        std::to_string(state.iteration));
  }
}

/// Loss and gradient for one image. `transform` is used for the equivariance
/// term when enabled.
template <typename Scalar>
struct StepGradient {
  LossReport report;
  MatrixX<Scalar> grad;
};

template <typename Scalar>
StepGradient<Scalar> loss_and_gradient(
    const AttentionBackend<Scalar>& backend, const RgbImage& image,
    const typename AttentionBackend<Scalar>::Prepared& prepared,
    const EmbeddingSet<Scalar>& e, const OptimizerConfig& cfg,
    const AffineTransform& transform) {
  const auto& bc = backend.config();
  const int h = bc.fused_height;
  const int w = bc.fused_width;
  StepGradient<Scalar> out;
  auto& rep = out.report;
  rep.lambda_equiv = cfg.effective_lambda();
  rep.equivariance = cfg.equivariance;
  rep.transform = transform;

  const AttentionStack<Scalar> clean = backend.forward(prepared, e);
  const auto maxima = locate_maxima(clean.fused, h, w);
  const MatrixX<Scalar> targets = gaussian_targets<Scalar>(maxima, cfg.sigma(h), h, w);
  const auto scores = kl_scores(clean.fused, targets);
  rep.selected = select_top_kappa(scores, cfg.kappa);
  for (int n : rep.selected) rep.selected_kl.push_back(scores[n]);

  LossTerm<Scalar> loc = localization_loss(clean.fused, targets, rep.selected);
  rep.localize = loc.value;
  MatrixX<Scalar> clean_cot = std::move(loc.cotangent);

  if (cfg.equivariance) {
    const RgbImage warped_image = warp_image(image, transform);
    const auto warped_prep = backend.prepare(warped_image);
    const AttentionStack<Scalar> warped = backend.forward(*warped_prep, e);
    const auto pullback = make_pullback<Scalar>(transform, h, w);
    EquivarianceTerm<Scalar> eq =
        equivariance_loss(clean.fused, warped.fused, pullback, rep.selected);
    rep.equiv = eq.value;
    const auto lambda = static_cast<Scalar>(rep.lambda_equiv);
    clean_cot += lambda * eq.clean_cotangent;
    MatrixX<Scalar> warped_cot = lambda * eq.warped_cotangent;
    rep.total = rep.localize + rep.lambda_equiv * rep.equiv;
    if (!std::isfinite(rep.total)) {
      MatrixX<float> dump(clean.fused.rows(), 2 * static_cast<Eigen::Index>(rep.selected.size()));
      for (std::size_t i = 0; i < rep.selected.size(); ++i) {
        dump.col(2 * i) = clean.fused.col(rep.selected[i]).template cast<float>();
        dump.col(2 * i + 1) = warped.fused.col(rep.selected[i]).template cast<float>();
      }
      throw NonFiniteLoss("non-finite loss", rep.selected, std::move(dump));
    }
    out.grad = backend.vjp(prepared, e, clean_cot);
    out.grad += backend.vjp(*warped_prep, e, warped_cot);
  } else {
    rep.total = rep.localize;
    if (!std::isfinite(rep.total)) {
      MatrixX<float> dump(clean.fused.rows(), static_cast<Eigen::Index>(rep.selected.size()));
      for (std::size_t i = 0; i < rep.selected.size(); ++i) {
        dump.col(i) = clean.fused.col(rep.selected[i]).template cast<float>();
      }
      throw NonFiniteLoss("non-finite loss", rep.selected, std::move(dump));
    }
    out.grad = backend.vjp(prepared, e, clean_cot);
  }
  return out;
}

/// Draws a transform whose validity mask on an h x w frame is non-empty.
AffineTransform sample_valid_transform(std::mt19937_64& rng,
                                       const AugmentationRanges& ranges,
                                       int height, int width);

/// One optimization step: samples a transform from the state's generator,
/// evaluates the loss and applies an Adam update.
template <typename Scalar>
LossReport optimization_step(const AttentionBackend<Scalar>& backend,
                             const RgbImage& image,
                             const typename AttentionBackend<Scalar>::Prepared& prepared,
                             OptimizerState<Scalar>& state, EmbeddingSet<Scalar>& e,
                             const OptimizerConfig& cfg) {
  if (state.first_moment.rows() != e.count() ||
      state.first_moment.cols() != e.width()) {
    throw config_error("optimizer state does not match the embedding shape");
  }
  AffineTransform transform;
  if (cfg.equivariance) {
    transform = sample_valid_transform(state.rng, cfg.augmentation,
                                       backend.config().fused_height,
                                       backend.config().fused_width);
  }
  StepGradient<Scalar> step =
      loss_and_gradient(backend, image, prepared, e, cfg, transform);
  adam_update(state, cfg, step.grad, e);
  step.report.iteration = state.iteration;
  return step.report;
}

struct TrainingOutputs {
  std::filesystem::path log;         // JSON lines, optional
  std::filesystem::path checkpoint;  // .atnk; a .json record is written beside it
  std::filesystem::path dump_dir;    // diagnostic maps on a non-finite loss
  std::string config_hash;
};

struct TrainingResult {
  EmbeddingSet<Real> embeddings;
  std::vector<LossReport> log;
  int skipped_images = 0;
};

/// Loads the manifest's images (skipping unreadable ones) and runs
/// cfg.iterations steps from embeddings drawn from `seed`.
TrainingResult run_optimization(const AttentionBackend<Real>& backend,
                                const DatasetManifest& manifest,
                                const OptimizerConfig& cfg, std::uint64_t seed,
                                const TrainingOutputs& outputs = {});

struct CheckpointRecord {
  std::uint64_t seed = 0;
  long iteration = 0;
  std::string config_hash;
  double sigma = 0.0;
  int kappa = 0;
  double lambda_equiv = 0.0;
};

void save_checkpoint(const std::filesystem::path& path,
                     const EmbeddingSet<Real>& e, const CheckpointRecord& record);
EmbeddingSet<Real> load_checkpoint(const std::filesystem::path& path,
                                   CheckpointRecord* record = nullptr);

std::string loss_report_json(const LossReport& r, bool upsample_queries);

}  // namespace atnk
