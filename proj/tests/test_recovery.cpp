// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Behaviour of trained embeddings on a small synthetic run (64 px canvas,
// reduced backend).

#include "atnk/config.hpp"
#include "atnk/dataset.hpp"
#include "atnk/keypoints.hpp"
#include "atnk/pipeline.hpp"
#include "atnk/training.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace atnk;

namespace {

struct SmallRun {
  test::TempDir dir;
  RunConfig cfg;
  DatasetManifest train;
  EmbeddingSet<Real> e;
  std::unique_ptr<BuiltinBackend<Real>> backend;
};

std::unique_ptr<SmallRun> train_small(std::uint64_t seed, int iterations = 400) {
  auto r = std::make_unique<SmallRun>();
  r->cfg = default_config();
  r->cfg.seed = seed;
  r->cfg.backend_config = test::light_backend();
  r->cfg.optimizer.iterations = iterations;
  r->cfg.optimizer.kappa = 6;
  r->cfg.optimizer.learning_rate = 2e-2;
  r->cfg.synth.canvas = 64;
  r->cfg.synth.train_count = 16;
  r->cfg.synth.test_count = 4;
  r->cfg = r->cfg.resolved();
  generate_synthetic(r->cfg.synth, seed, r->dir.path());
  r->train = load_manifest(r->dir / "train.tsv");
  r->backend = std::make_unique<BuiltinBackend<Real>>(r->cfg.backend_config);
  r->e = run_optimization(*r->backend, r->train, r->cfg.optimizer, seed).embeddings;
  return r;
}

}  // namespace

TEST_CASE("translating the image moves the keypoints with it") {
  const auto r = train_small(3);
  const auto& bc = r->cfg.backend_config;
  const auto vote = choose_tokens(*r->backend, r->train, r->e, r->cfg);
  const auto layout = make_layout(r->cfg.synth);
  std::mt19937_64 rng(21);
  int moved = 0, total = 0;
  for (int i = 0; i < 4; ++i) {
    const RgbImage img = render_sample(r->cfg.synth, layout, rng).image;
    const RgbImage shifted = warp_image(img, AffineTransform(0.0, 8.0 / img.width(), 0.0, 1.0));
    const auto a = extract_keypoints(*r->backend, img, r->e, vote.chosen, r->cfg.ensemble, 7);
    const auto b = extract_keypoints(*r->backend, shifted, r->e, vote.chosen, r->cfg.ensemble, 7);
    const double px = static_cast<double>(bc.fused_width) / img.width();
    for (std::size_t k = 0; k < a.points.size(); ++k) {
      const double dx = (b.points[k].pixel.col - a.points[k].pixel.col) / px;
      const double dy = (b.points[k].pixel.row - a.points[k].pixel.row) / px;
      if (std::abs(dx - 8.0) <= 2.0 && std::abs(dy) <= 2.0) ++moved;
      ++total;
    }
  }
  MESSAGE(moved << "/" << total << " keypoints moved 8 +- 2 px");
  CHECK(moved == total);
}
