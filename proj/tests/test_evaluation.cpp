// Copyright (c) 2026, The atnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "atnk/evaluation.hpp"
#include "atnk/pipeline.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <random>

using namespace atnk;

namespace {

MatrixX<double> random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatrixX<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

MatrixX<double> row(std::initializer_list<double> v) {
  MatrixX<double> m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("regression recovers identity and scalar weights") {
  std::mt19937_64 rng(1);
  const auto x = random_matrix(20, 6, rng);
  const auto id = fit_regressor<double>(x, x);
  CHECK((id.weights - MatrixX<double>::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_FALSE(id.min_norm);
  CHECK((id.predict(x) - x).norm() < 1e-6);

  const MatrixX<double> s = random_matrix(10, 1, rng);
  const auto two = fit_regressor<double>(s, 2.0 * s);
  CHECK(two.weights(0, 0) == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("regression agrees with an independent QR solve") {
  std::mt19937_64 rng(2);
  const auto x = random_matrix(40, 10, rng);
  const auto y = random_matrix(40, 8, rng);
  const auto m = fit_regressor<double>(x, y);
  const MatrixX<double> qr = x.householderQr().solve(y);
  const double r1 = (x * m.weights - y).norm();
  const double r2 = (x * qr - y).norm();
  CHECK(std::abs(r1 - r2) < 1e-6);

  // First-order optimality: no small perturbation lowers the residual.
  for (int i = 0; i < 20; ++i) {
    const MatrixX<double> d = 1e-4 * (random_matrix(10, 8, rng).array() - 0.5).matrix();
    CHECK((x * (m.weights + d) - y).norm() >= r1 - 1e-12);
  }
}

TEST_CASE("regression edge cases") {
  std::mt19937_64 rng(3);
  CHECK(test::error_kind([&] {
          fit_regressor<double>(MatrixX<double>::Zero(5, 2), random_matrix(5, 2, rng));
        }) == ErrorKind::Data);
  const auto few = fit_regressor<double>(random_matrix(3, 6, rng), random_matrix(3, 4, rng));
  CHECK(few.min_norm);
  CHECK_THROWS_AS(fit_regressor<double>(random_matrix(3, 2, rng), random_matrix(4, 2, rng)),
                  Error);
}

TEST_CASE("metric definitions on single landmarks") {
  // Inter-ocular distance 0.5; both landmarks displaced by exactly that.
  const auto gt = row({0.25, 0.5, 0.75, 0.5});
  const auto off = row({0.25, 1.0, 0.75, 1.0});
  CHECK(nme_interocular<double>(off, gt, {0, 1}).value == doctest::Approx(100.0));

  const auto g1 = row({0.5, 0.5});
  CHECK(nme_imagedim<double>(row({0.6, 0.5}), g1) == doctest::Approx(10.0));
  CHECK(relative_l2_128<double>(row({0.51, 0.5}), g1) == doctest::Approx(1.28));
  CHECK(pck<double>(row({0.5 + 6.0 / 256.0, 0.5}), g1) == 100.0);
  CHECK(pck<double>(row({0.5 + 6.5 / 256.0, 0.5}), g1) == 0.0);

  MatrixX<double> g10 = MatrixX<double>::Constant(1, 20, 0.5);
  MatrixX<double> p10 = g10;
  for (int j = 0; j < 10; ++j) p10(0, 2 * j + 1) += 1.0 / 256.0;
  CHECK(cumulative_l2<double>(p10, g10) == 10.0);
  CHECK(cumulative_l2<double>(p10, g10, 256.0, Accumulation::Mean) == 1.0);

  MatrixX<double> half = g10;
  for (int j = 0; j < 5; ++j) half(0, 2 * j) += 7.0 / 256.0;
  CHECK(pck<double>(half, g10) == 50.0);
}

TEST_CASE("pred equal to ground truth gives 0 / 0 / 0 / 100 / 0") {
  std::mt19937_64 rng(4);
  const auto gt = random_matrix(6, 8, rng);
  CHECK(nme_imagedim<double>(gt, gt) == 0.0);
  CHECK(nme_interocular<double>(gt, gt, {0, 1}).value == 0.0);
  CHECK(cumulative_l2<double>(gt, gt) == 0.0);
  CHECK(pck<double>(gt, gt) == 100.0);
  CHECK(relative_l2_128<double>(gt, gt) == 0.0);
}

TEST_CASE("in-repo metric fixture") {
  const auto gt = landmark_matrix(load_annotations(test::fixture("metrics_gt.txt")));
  const auto pred = landmark_matrix(load_annotations(test::fixture("metrics_pred.txt")));
  const auto want = test::read_expected(test::fixture("metrics_expected.txt"));
  CHECK(nme_imagedim<double>(pred, gt) == want.at("nme_imagedim"));
  CHECK(nme_interocular<double>(pred, gt, {0, 1}).value == want.at("nme_interocular"));
  CHECK(cumulative_l2<double>(pred, gt) == want.at("cumulative_l2"));
  CHECK(pck<double>(pred, gt) == want.at("pck"));
  CHECK(relative_l2_128<double>(pred, gt) == want.at("relative_l2_128"));
}

TEST_CASE("coincident eyes are skipped") {
  MatrixX<double> gt(2, 4);
  gt << 0.5, 0.5, 0.5, 0.5,  //
      0.25, 0.5, 0.75, 0.5;
  MatrixX<double> pred = gt;
  pred(1, 0) += 0.5;
  const auto r = nme_interocular<double>(pred, gt, {0, 1});
  CHECK(r.skipped == 1);
  CHECK(r.value == doctest::Approx(50.0));
}

TEST_CASE("metric bounds and inter-ocular scale invariance on fuzzed inputs") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const auto gt = random_matrix(4, 6, rng);
    const auto pred = random_matrix(4, 6, rng);
    CHECK(nme_imagedim<double>(pred, gt) >= 0.0);
    CHECK(cumulative_l2<double>(pred, gt) >= 0.0);
    CHECK(relative_l2_128<double>(pred, gt) >= 0.0);
    const double p = pck<double>(pred, gt);
    CHECK(p >= 0.0);
    CHECK(p <= 100.0);
    const double io = nme_interocular<double>(pred, gt, {0, 2}).value;
    CHECK(io >= 0.0);
    const double s = 0.1 + 3.0 * (t / 100.0);
    const MatrixX<double> ps = s * pred;
    const MatrixX<double> gs = s * gt;
    CHECK(nme_interocular<double>(ps, gs, {0, 2}).value == doctest::Approx(io).epsilon(1e-10));
  }
}

TEST_CASE("evaluate rejects shared ids and matches direct calls") {
  auto kp = [](const std::string& id, double x) {
    KeypointSet s;
    s.id = id;
    s.points.push_back({0, {0, 0}, x, 0.5 * x});
    s.points.push_back({1, {0, 0}, 1.0 - x, 0.25 + 0.5 * x});
    return s;
  };
  AnnotationSet train, test;
  train.landmarks = test.landmarks = 1;
  std::vector<KeypointSet> ktrain, ktest;
  for (int i = 0; i < 8; ++i) {
    const double x = 0.1 + 0.1 * i;
    ktrain.push_back(kp("a" + std::to_string(i), x));
    train.records.push_back({"a" + std::to_string(i), {x + 0.01, 0.5 * x}});
  }
  for (int i = 0; i < 3; ++i) {
    const double x = 0.15 + 0.2 * i;
    ktest.push_back(kp("b" + std::to_string(i), x));
    test.records.push_back({"b" + std::to_string(i), {x, 0.5 * x + 0.02}});
  }
  EvalConfig ec;
  ec.metrics = {"nme_imagedim", "cumulative_l2", "pck", "relative_l2_128"};
  const auto report = evaluate(ktrain, ktest, train, test, ec, "hash");
  const auto model = fit_regressor<double>(keypoint_matrix(ktrain, train), landmark_matrix(train));
  const MatrixX<double> pred = model.predict(keypoint_matrix(ktest, test));
  const MatrixX<double> gt = landmark_matrix(test);
  CHECK(report.find("nme_imagedim")->value == nme_imagedim<double>(pred, gt));
  CHECK(report.find("cumulative_l2")->value == cumulative_l2<double>(pred, gt));
  CHECK(report.find("pck")->value == pck<double>(pred, gt));
  CHECK(report.find("relative_l2_128")->value == relative_l2_128<double>(pred, gt));
  CHECK(report.config_hash == "hash");

  auto overlap = test;
  overlap.records.push_back(train.records.front());
  CHECK(test::error_kind([&] { evaluate(ktrain, ktest, train, overlap, ec, ""); }) ==
        ErrorKind::Data);
}
