// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/dataset.hpp"
#include "atnk/tensor_io.hpp"
#include "atnk/training.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <fstream>
#include <limits>

using namespace atnk;

namespace {

struct TinyData {
  test::TempDir dir;
  DatasetManifest train;

  explicit TinyData(int count = 3) {
    SyntheticSpec spec;
    spec.canvas = 64;
    spec.train_count = count;
    spec.test_count = 1;
    generate_synthetic(spec, 11, dir.path());
    train = load_manifest(dir / "train.tsv");
  }
};

// Uniform maps with a NaN row.
class PoisonedBackend final : public AttentionBackend<Real> {
 public:
  PoisonedBackend() : config_(test::light_backend(12)) {}
  const BackendConfig& config() const override { return config_; }
  std::unique_ptr<Prepared> prepare(const RgbImage&) const override {
    return std::make_unique<Prepared>();
  }
  AttentionStack<Real> forward(const Prepared&, const EmbeddingSet<Real>& e) const override {
    AttentionStack<Real> s;
    s.height = config_.fused_height;
    s.width = config_.fused_width;
    s.fused = MatrixX<Real>::Constant(config_.fused_pixels(), e.count(),
                                      Real(1) / static_cast<Real>(e.count()));
    s.fused.row(100).setConstant(std::numeric_limits<Real>::quiet_NaN());
    return s;
  }
  MatrixX<Real> vjp(const Prepared&, const EmbeddingSet<Real>& e,
                    const MatrixX<Real>&) const override {
    return MatrixX<Real>::Zero(e.count(), e.width());
  }

 private:
  BackendConfig config_;
};

OptimizerConfig light_optimizer(int iterations) {
  OptimizerConfig c;
  c.iterations = iterations;
  c.kappa = 6;
  c.learning_rate = 2e-2;
  return c;
}

}  // namespace

TEST_CASE("adam follows the bias-corrected update") {
  EmbeddingSet<double> e;
  e.tokens = MatrixX<double>::Zero(2, 2);
  OptimizerConfig cfg;
  OptimizerState<double> st(e, 0.1, 0);
  MatrixX<double> g(2, 2);
  g << 1.0, -2.0, 0.0, 4.0;
  adam_update(st, cfg, g, e);
  // First step: m_hat = g, v_hat = g^2, so the move is -lr * g / (|g| + eps).
  CHECK(e.tokens(0, 0) == doctest::Approx(-0.1));
  CHECK(e.tokens(0, 1) == doctest::Approx(0.1));
  CHECK(e.tokens(1, 0) == 0.0);
  CHECK(e.tokens(1, 1) == doctest::Approx(-0.1));
  adam_update(st, cfg, g, e);
  CHECK(e.tokens(0, 0) == doctest::Approx(-0.2));
  CHECK(st.iteration == 2);
}

TEST_CASE("every logged step composes total from its terms") {
  TinyData data;
  const BuiltinBackend<Real> backend(test::light_backend());
  const auto r = run_optimization(backend, data.train, light_optimizer(30), 4);
  REQUIRE(r.log.size() == 30);
  for (const auto& s : r.log) {
    CHECK(std::abs(s.total - (s.localize + 10.0 * s.equiv)) <= 1e-6);
    CHECK(s.selected.size() == 6);
    CHECK(s.transform.within(OptimizerConfig{}.augmentation));
  }
  CHECK(r.embeddings.all_finite());
}

TEST_CASE("disabling equivariance logs a zero term and needs no transform") {
  TinyData data;
  const BuiltinBackend<Real> backend(test::light_backend());
  auto cfg = light_optimizer(10);
  cfg.equivariance = false;
  test::TempDir out;
  const auto r = run_optimization(backend, data.train, cfg, 4, {out / "log.jsonl"});
  for (const auto& s : r.log) {
    CHECK(s.equiv == 0.0);
    CHECK(s.total == s.localize);
  }
  std::ifstream log(out / "log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(line.find("\"equiv\":0.0") != std::string::npos);
    CHECK(line.find("transform") == std::string::npos);
  }
  CHECK(lines == 10);
}

TEST_CASE("fifty steps lower the loss for nearly every seed") {
  SyntheticSpec spec;
  spec.canvas = 64;
  const auto layout = make_layout(spec);
  const BuiltinBackend<Real> backend(test::light_backend());
  const auto cfg = light_optimizer(50);
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const RgbImage img = render_sample(spec, layout, rng).image;
    const auto prep = backend.prepare(img);
    const AffineTransform probe(8.0, 0.05, -0.05, 1.1);
    auto e = EmbeddingSet<Real>::random(24, 16, seed);
    const double before = loss_and_gradient(backend, img, *prep, e, cfg, probe).report.total;
    OptimizerState<Real> st(e, cfg.learning_rate, seed);
    for (int i = 0; i < 50; ++i) optimization_step(backend, img, *prep, st, e, cfg);
    const double after = loss_and_gradient(backend, img, *prep, e, cfg, probe).report.total;
    if (after < before) ++decreased;
  }
  CHECK(decreased >= 19);
}

TEST_CASE("checkpoints round trip with their records") {
  test::TempDir dir;
  const auto e = EmbeddingSet<Real>::random(5, 3, 1);
  save_checkpoint(dir / "c.atnk", e, {7, 120, "00ff", 6.4, 10, 10.0});
  CheckpointRecord rec;
  const auto back = load_checkpoint(dir / "c.atnk", &rec);
  CHECK(back.tokens == e.tokens);
  CHECK(rec.seed == 7);
  CHECK(rec.iteration == 120);
  CHECK(rec.config_hash == "00ff");
  CHECK(rec.kappa == 10);

  auto bad = e;
  bad.tokens(2, 1) = std::numeric_limits<Real>::infinity();
  save_checkpoint(dir / "bad.atnk", bad, {});
  CHECK(test::error_kind([&] { load_checkpoint(dir / "bad.atnk"); }) == ErrorKind::Numeric);
  std::filesystem::remove(dir / "c.atnk.json");
  CHECK(test::error_kind([&] { load_checkpoint(dir / "c.atnk", &rec); }) == ErrorKind::Data);
}

TEST_CASE("intermediate checkpoints are written on schedule") {
  TinyData data;
  const BuiltinBackend<Real> backend(test::light_backend());
  auto cfg = light_optimizer(6);
  cfg.checkpoint_every = 4;
  test::TempDir out;
  run_optimization(backend, data.train, cfg, 2, {{}, out / "ck.atnk"});
  CheckpointRecord rec;
  load_checkpoint(out / "ck.atnk", &rec);
  CHECK(rec.iteration == 6);
  CHECK(rec.seed == 2);
}

TEST_CASE("a non-finite loss stops the run and dumps the offending maps") {
  TinyData data(2);
  const PoisonedBackend backend;
  auto cfg = light_optimizer(5);
  test::TempDir out;
  try {
    run_optimization(backend, data.train, cfg, 1, {{}, {}, out / "diag"});
    FAIL("non-finite loss accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
  }
  const Tensor maps = load_tensor(out / "diag" / "nonfinite_maps.atnk");
  CHECK(maps.dims.at(0) == 64 * 64);
  CHECK(std::filesystem::exists(out / "diag" / "nonfinite_maps.json"));
}

TEST_CASE("unreadable images are skipped up to a limit") {
  TinyData data(3);
  const BuiltinBackend<Real> backend(test::light_backend());
  std::ofstream(data.train.image_path(data.train.records[0])) << "broken";
  CHECK(test::error_kind([&] { run_optimization(backend, data.train, light_optimizer(2), 0); }) ==
        ErrorKind::Data);
  DatasetManifest empty = data.train;
  empty.records.clear();
  CHECK(test::error_kind([&] { run_optimization(backend, empty, light_optimizer(2), 0); }) ==
        ErrorKind::Data);
  auto cfg = light_optimizer(2);
  cfg.kappa = 30;
  CHECK(test::error_kind([&] { run_optimization(backend, data.train, cfg, 0); }) ==
        ErrorKind::Config);
}
