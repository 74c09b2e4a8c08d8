// tests/sv_test.cc

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

#include "maskprobe/sv.h"
#include "oracles.h"
#include "test_util.h"

using namespace maskprobe;

namespace {

// Speaker centroids plus correlated within-speaker noise, unit-normalized.
EmbeddingSet Speakers(int n_spk, int per_spk, int dim, double spread, uint64_t seed,
                      const std::string &prefix = "spk") {
  Rng r(seed);
  Eigen::MatrixXd mix(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) mix(i, j) = (i == j ? 1.0 : 0.0) + 0.3 * r.Normal();
  EmbeddingSet e;
  e.rows.resize(n_spk * per_spk, dim);
  for (int s = 0; s < n_spk; ++s) {
    Eigen::VectorXd c(dim);
    for (auto &v : c) v = r.Normal();
    for (int u = 0; u < per_spk; ++u) {
      Eigen::VectorXd z(dim);
      for (auto &v : z) v = r.Normal();
      Eigen::VectorXd x = c + spread * mix * z;
      const int i = s * per_spk + u;
      e.rows.row(i) = x.normalized().transpose();
      char id[32];
      std::snprintf(id, sizeof id, "%s%02d_u%02d", prefix.c_str(), s, u);
      e.ids.push_back(id);
      e.speakers.push_back(prefix + std::to_string(100 + s));
    }
  }
  return e;
}

}  // namespace

TEST_CASE("wccn whitens the within-speaker covariance") {
  const EmbeddingSet train = Speakers(20, 8, 6, 0.5, 1);
  const SvBackend b = FitBackend(train, 4);
  CHECK(b.train_speakers == 20);
  CHECK(b.wccn_speakers == 20);
  CHECK(b.floored_eigenvalues == 0);
  Eigen::MatrixXd centred = train.rows.rowwise() - b.mean.transpose();
  const Eigen::MatrixXd y = centred * b.wccn.transpose();
  const Eigen::MatrixXd W = WithinClassCovariance(y, train.speakers);
  CHECK((W - Eigen::MatrixXd::Identity(6, 6)).norm() < 1e-6);
  // Projections are unit length.
  for (int i = 0; i < 5; ++i)
    CHECK(b.Project(train.rows.row(i).transpose()).norm() == doctest::Approx(1.0));
  CHECK(b.lda.rows() == 4);
  CHECK_THROWS_AS(FitBackend(Speakers(4, 3, 6, 0.5, 2), 4), DataError);
}

TEST_CASE("within-class covariance averages per-speaker covariances") {
  Eigen::MatrixXd rows(5, 1);
  rows << 0, 2, 10, 14, 99;
  const std::vector<std::string> spk = {"a", "a", "b", "b", "c"};
  int n = 0;
  const Eigen::MatrixXd W = WithinClassCovariance(rows, spk, &n);
  CHECK(n == 2);
  CHECK(W(0, 0) == doctest::Approx((1.0 + 4.0) / 2));
}

TEST_CASE("eer extremes and monotone invariance") {
  const std::vector<double> sep = {0.9, 0.8, 0.95, 0.1, 0.2, 0.3, 0.15};
  const std::vector<uint8_t> lab = {1, 1, 1, 0, 0, 0, 0};
  CHECK(Eer(sep, lab) == 0.0);
  std::vector<double> same;
  std::vector<uint8_t> same_lab;
  for (double v : {0.1, 0.4, 0.4, 0.7, 0.9}) {
    same.push_back(v);
    same_lab.push_back(1);
    same.push_back(v);
    same_lab.push_back(0);
  }
  CHECK(Eer(same, same_lab) == doctest::Approx(0.5));
  CHECK(Eer(std::vector<double>(6, 0.3), std::vector<uint8_t>{1, 0, 1, 0, 0, 0}) ==
        doctest::Approx(0.5));

  Rng r(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> s;
    std::vector<uint8_t> y;
    std::vector<int> yi;
    for (int i = 0; i < 60; ++i) {
      const bool t = i < 2 || r.Bernoulli(0.3);
      s.push_back(r.Normal() + (t ? 1.0 : 0.0));
      y.push_back(t);
      yi.push_back(t);
    }
    s[5] = s[6];
    const double e = Eer(s, y);
    const double mm = oracle::MinMaxError(s, yi);
    const int nt = static_cast<int>(std::count(yi.begin(), yi.end(), 1));
    CHECK(e <= mm + 1e-12);
    CHECK(e >= mm - 1.0 / std::min(nt, 60 - nt));
    std::vector<double> t(s.size());
    for (size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3 * s[i]) - 7;
    CHECK(Eer(t, y) == e);
  }
  CHECK_THROWS_AS(Eer(sep, std::vector<uint8_t>(7, 1)), DataError);
}

TEST_CASE("trial lists keep the non-target ratio") {
  const EmbeddingSet test = Speakers(10, 6, 5, 0.3, 4);
  for (int n_enr : {1, 2, 3}) {
    const TrialList t = MakeTrials(test, n_enr, 10, 9);
    CHECK(t.TargetCount() == 10 * (6 - n_enr));
    const double ratio = double(t.NonTargetCount()) / double(t.TargetCount());
    CHECK(std::abs(ratio - 10.0) <= 1.0);
    for (const auto &tr : t.trials) {
      CHECK(tr.enroll_ids.size() == static_cast<size_t>(n_enr));
      const auto enr_spk = test.speakers[test.IndexOf(tr.enroll_ids[0])];
      CHECK((test.speakers[test.IndexOf(tr.test_id)] == enr_spk) == tr.is_target);
      CHECK(std::find(tr.enroll_ids.begin(), tr.enroll_ids.end(), tr.test_id) ==
            tr.enroll_ids.end());
    }
    const TrialList again = MakeTrials(test, n_enr, 10, 9);
    REQUIRE(again.trials.size() == t.trials.size());
    for (size_t i = 0; i < t.trials.size(); ++i) {
      CHECK(again.trials[i].test_id == t.trials[i].test_id);
      CHECK(again.trials[i].enroll_ids == t.trials[i].enroll_ids);
    }
  }
  const TrialList few = MakeTrials(Speakers(3, 3, 5, 0.3, 5), 1, 10, 1);
  CHECK(few.NonTargetCount() == 3 * 6);  // capped at the other speakers' utterances
  CHECK_THROWS_AS(MakeTrials(test, 6, 10, 1), DataError);
}

TEST_CASE("scoring separable speakers gives zero eer") {
  const EmbeddingSet train = Speakers(20, 6, 8, 0.05, 6, "tr");
  const EmbeddingSet test = Speakers(8, 6, 8, 0.05, 7, "te");
  const SvBackend b = FitBackend(train, 6);
  for (auto avg : {EnrollAveraging::kRaw, EnrollAveraging::kProjected}) {
    const TrialList t = MakeTrials(test, 2, 10, 3);
    const auto s = ScoreTrials(b, test, t, avg);
    std::vector<uint8_t> y;
    for (const auto &tr : t.trials) y.push_back(tr.is_target);
    CHECK(Eer(s, y) == 0.0);
    for (double v : s) CHECK(std::abs(v) <= 1.0 + 1e-12);
  }
}

TEST_CASE("embeddings are unit-norm means over voiced frames") {
  Eigen::MatrixXd X(6, 2);
  X << 1, 0, 3, 0, 0, 5, 0, 0, 2, 2, 9, 9;
  const auto vad = testutil::Classes("vad", {1, 1, 0, 0, 1, 0}, 2);
  StreamManifest m;
  m.segments = {{"u1", "s1", "F", "Irish", "Office", 0, 3},
                {"u2", "s2", "M", "Irish", "Office", 3, 4},
                {"u3", "s2", "M", "Irish", "Office", 4, 6}};
  std::vector<std::string> skipped;
  const EmbeddingSet e = UtteranceEmbeddings(X, vad, m, &skipped);
  CHECK(e.ids == std::vector<std::string>{"u1", "u3"});
  CHECK(skipped == std::vector<std::string>{"u2"});
  CHECK(e.rows(0, 0) == doctest::Approx(1.0));
  CHECK(e.rows(1, 0) == doctest::Approx(std::sqrt(0.5)));

  testutil::TempDir dir("sv_io");
  const EmbeddingSet train = Speakers(6, 4, 3, 0.3, 8);
  const SvBackend b = FitBackend(train, 2);
  const SvBackend back = BackendFromJson(BackendToJson(b));
  CHECK(back.wccn == b.wccn);
  CHECK(back.lda == b.lda);
  const EmbeddingSet er = EmbeddingsFromJson(EmbeddingsToJson(train));
  CHECK(er.rows == train.rows);
  const TrialList t = MakeTrials(train, 2, 10, 1);
  WriteTrials(t, dir / "trials.csv");
  const TrialList tr = ReadTrials(dir / "trials.csv");
  REQUIRE(tr.trials.size() == t.trials.size());
  CHECK(tr.trials[0].enroll_ids == t.trials[0].enroll_ids);
  CHECK(tr.TargetCount() == t.TargetCount());
}
