// tests/evalmetrics_test.cc

// Copyright 2026  The maskprobe Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maskprobe/evalmetrics.h"
#include "oracles.h"
#include "test_util.h"

using namespace maskprobe;

TEST_CASE("auc against the pair-count oracle") {
  Rng r(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 10 + static_cast<int>(r.Below(11));
    std::vector<double> s(n);
    std::vector<uint8_t> pos(n);
    std::vector<int> posi(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::round(r.Normal() * 2) / 2;  // ties on purpose
      posi[i] = pos[i] = i < 2 ? i : r.Bernoulli(0.4);
    }
    CHECK(RocAuc(s, pos) == doctest::Approx(oracle::Auc(s, posi)).epsilon(1e-12));
  }
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<uint8_t> y = {0, 0, 1, 1};
  CHECK(RocAuc(s, y) == doctest::Approx(0.75));
}

TEST_CASE("classification metrics on small fixtures") {
  Rng r(2);
  for (int K : {2, 4}) {
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 15;
      std::vector<double> truth(n);
      std::vector<int> ti(n), pred(n);
      Eigen::MatrixXd scores(n, K == 2 ? 1 : K);
      for (int i = 0; i < n; ++i) {
        ti[i] = i < K ? i : static_cast<int>(r.Below(K));
        truth[i] = ti[i];
        pred[i] = r.Bernoulli(0.7) ? ti[i] : static_cast<int>(r.Below(K));
        for (Eigen::Index k = 0; k < scores.cols(); ++k) scores(i, k) = r.Normal();
      }
      auto t = testutil::Classes(K == 2 ? "vad" : "accent", truth, K);
      t.valid[n - 1] = 0;
      const auto m = EvaluateClassification(pred, scores, t);
      CHECK(m.frames == n - 1);
      std::vector<int> tv(ti.begin(), ti.end() - 1), pv(pred.begin(), pred.end() - 1);
      int correct = 0;
      for (int i = 0; i < n - 1; ++i) correct += tv[i] == pv[i];
      CHECK(m.accuracy == doctest::Approx(correct / double(n - 1)));
      CHECK(m.macro_f1 == doctest::Approx(oracle::MacroF1(tv, pv)));
      REQUIRE(m.roc_auc);
      double want = 0;
      for (int k = 0; k < (K == 2 ? 1 : K); ++k) {
        std::vector<double> col;
        std::vector<int> pos;
        for (int i = 0; i < n - 1; ++i) {
          col.push_back(scores(i, k));
          pos.push_back(K == 2 ? tv[i] == 1 : tv[i] == k);
        }
        want += oracle::Auc(col, pos);
      }
      CHECK(*m.roc_auc == doctest::Approx(want / (K == 2 ? 1 : K)));
    }
  }
  const auto one = testutil::Classes("vad", {1, 1, 1}, 2);
  const std::vector<int> p = {1, 1, 0};
  CHECK(!EvaluateClassification(p, Eigen::MatrixXd::Zero(3, 1), one).roc_auc);
}

TEST_CASE("regression metrics and iqr normalization") {
  Rng r(3);
  std::vector<double> truth(20), pred(20);
  for (int i = 0; i < 20; ++i) {
    truth[i] = r.Normal() * 5;
    pred[i] = truth[i] + r.Normal();
  }
  auto t = testutil::Continuous("snr_in", truth);
  t.iqr = std::make_pair(-13.0, 8.0);
  const auto m = EvaluateRegression(pred, t);
  double mae = 0, mse = 0;
  for (int i = 0; i < 20; ++i) {
    mae += std::abs(truth[i] - pred[i]) / 20;
    mse += std::pow(truth[i] - pred[i], 2) / 20;
  }
  CHECK(*m.r2 == doctest::Approx(oracle::R2(truth, pred)).epsilon(1e-12));
  CHECK(m.mae == doctest::Approx(mae));
  CHECK(m.rmse == doctest::Approx(std::sqrt(mse)));
  CHECK(*m.mae_over_iqr == doctest::Approx(mae / 21.0));
  CHECK(*m.rmse_over_iqr == doctest::Approx(std::sqrt(mse) / 21.0));

  // Perfect prediction, zero-variance truth.
  const auto flat = testutil::Continuous("f0", {150, 150, 150});
  const auto z = EvaluateRegression(std::vector<double>{150, 150, 150}, flat);
  CHECK(!z.r2);
  CHECK(z.mae == 0.0);
  CHECK(!z.mae_over_iqr);
}

TEST_CASE("pca matches a jacobi eigendecomposition") {
  Rng r(4);
  const int n = 60, D = 5;
  Eigen::MatrixXd X(n, D);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < D; ++d) X(i, d) = r.Normal() * (d + 1) + (d == 1 ? X(i, 0) : 0.0);
  const Pca p = PcaFit(X, 3);
  std::vector<std::vector<double>> cov(D, std::vector<double>(D, 0.0));
  const Eigen::RowVectorXd mu = X.colwise().mean();
  for (int a = 0; a < D; ++a)
    for (int b = 0; b < D; ++b)
      for (int i = 0; i < n; ++i) cov[a][b] += (X(i, a) - mu(a)) * (X(i, b) - mu(b)) / (n - 1);
  std::vector<double> vals;
  std::vector<std::vector<double>> vecs;
  oracle::JacobiEigen(cov, &vals, &vecs);
  for (int k = 0; k < 3; ++k) {
    CHECK(p.explained_variance(k) == doctest::Approx(vals[k]).epsilon(1e-9));
    double dot = 0;
    for (int d = 0; d < D; ++d) dot += p.components(k, d) * vecs[d][k];
    CHECK(std::abs(dot) == doctest::Approx(1.0).epsilon(1e-9));
    Eigen::Index arg;
    p.components.row(k).cwiseAbs().maxCoeff(&arg);
    CHECK(p.components(k, arg) > 0);
  }
  CHECK((p.components * p.components.transpose() - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-10);
  const Eigen::MatrixXd Y = p.Project(X);
  CHECK(std::abs(Y.col(0).mean()) < 1e-10);
  CHECK_THROWS_AS(PcaFit(X.topRows(3), 3), DataError);

  Eigen::MatrixXd rank1(10, 3);
  for (int i = 0; i < 10; ++i) rank1.row(i) << i, 2 * i, -i;
  CHECK(PcaFit(rank1, 3).degenerate == 2);
}

TEST_CASE("frame subsampling") {
  const auto a = SubsampleFrames(1000, 0.1, 7);
  CHECK(a.size() == 100);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  CHECK(a.back() < 1000);
  CHECK(SubsampleFrames(1000, 0.1, 7) == a);
  CHECK(SubsampleFrames(1000, 0.1, 8) != a);
  CHECK(SubsampleFrames(5, 1.0, 1).size() == 5);
}

TEST_CASE("heatmap rows are unit norm and grouped by block") {
  FeatureSpace space = testutil::MaskSpace(4);
  space.source_blocks = 2;
  space.source_channels_per_block = 4;
  space.channel_map = {1, 6, 2, 5};  // blocks 0, 1, 0, 1
  ProbeModel m;
  m.target = "snr_in";
  m.kind = TargetKind::kContinuous;
  m.weights = Eigen::MatrixXd(1, 4);
  m.weights << 1, 2, 3, 4;
  m.bias = Eigen::VectorXd::Zero(1);
  m.feature_space = space;
  ProbeModel z = m;
  z.target = "f0";
  z.weights.setZero();
  const std::vector<double> sd = {1, 1, 1, 1};
  const std::vector<int> pos = {0, 1, 2, 3};
  const Heatmap h = HeatmapRows({m, z}, sd, pos);
  CHECK(h.blocks == std::vector<int>{0, 0, 1, 1});
  CHECK(h.values.row(0).norm() == doctest::Approx(1.0));
  CHECK(h.values(0, 0) == doctest::Approx(1 / std::sqrt(30.0)));
  CHECK(h.zero_rows == std::vector<std::string>{"f0"});
}
