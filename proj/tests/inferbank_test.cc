// tests/inferbank_test.cc

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

#include "maskprobe/inferbank.h"
#include "test_util.h"

using namespace maskprobe;

namespace {

std::vector<ProbeModel> Suite(int dim, Rng *r) {
  const FeatureSpace space = testutil::MaskSpace(dim);
  return {testutil::RandomModel("f0", TargetKind::kContinuous, 1, space, r),
          testutil::RandomModel("accent", TargetKind::kMultiClass, 6, space, r),
          testutil::RandomModel("vad", TargetKind::kBinary, 1, space, r),
          testutil::RandomModel("snr_in", TargetKind::kContinuous, 1, space, r)};
}

// Dense product over the full binary vector, accumulated from the bias in
// ascending channel order.
std::vector<double> Dense(const PredictorBank &b, const std::vector<uint8_t> &x) {
  std::vector<double> out(b.Bias());
  for (int k = 0; k < b.OutputCount(); ++k)
    for (int c = 0; c < b.ChannelCount(); ++c) out[k] += x[c] ? b.Weight(k, c) : 0.0;
  return out;
}

}  // namespace

TEST_CASE("compile orders outputs by roster") {
  Rng r(1);
  const PredictorBank b = PredictorBank::Compile(Suite(5, &r));
  REQUIRE(b.OutputCount() == 9);
  CHECK(b.Outputs()[0].target == "vad");
  CHECK(b.Outputs()[1].target == "accent");
  CHECK(b.Outputs()[1].class_index == 0);
  CHECK(b.Outputs()[7].target == "snr_in");
  CHECK(b.Outputs()[8].target == "f0");
  std::vector<ProbeModel> bad = Suite(5, &r);
  bad[2].feature_space = testutil::MaskSpace(4);
  CHECK_THROWS_AS(PredictorBank::Compile(bad), DataError);
  CHECK_THROWS_AS(PredictorBank::Compile({}), DataError);
}

TEST_CASE("gather equals the dense product bit for bit") {
  Rng r(2);
  const PredictorBank b = PredictorBank::Compile(Suite(64, &r));
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<uint8_t> x(64);
    std::vector<int> active;
    const double p = r.Uniform();
    for (int c = 0; c < 64; ++c) {
      x[c] = r.Bernoulli(p);
      if (x[c]) active.push_back(c);
    }
    CHECK(b.InferFrame(active) == Dense(b, x));
  }
  // No active channels: the bias.
  CHECK(b.InferFrame(std::vector<int>{}) == b.Bias());
}

TEST_CASE("operation count") {
  Rng r(3);
  const PredictorBank b = PredictorBank::Compile(Suite(202, &r));
  const OpCount o = CountOps(b, 40);
  CHECK(o.worst_case == 9 * 202);
  CHECK(o.adds == 9 * 41);
}

TEST_CASE("split recovers the compiled models") {
  Rng r(4);
  const auto models = Suite(12, &r);
  const PredictorBank b = PredictorBank::Compile(models);
  const auto parts = b.Split();
  REQUIRE(parts.size() == 4);
  for (const auto &p : parts) {
    const auto it = std::find_if(models.begin(), models.end(),
                                 [&](const ProbeModel &m) { return m.target == p.target; });
    REQUIRE(it != models.end());
    CHECK(p.weights == it->weights);
    CHECK(p.bias == it->bias);
    CHECK(p.kind == it->kind);
  }
  const PredictorBank j = PredictorBank::FromJson(b.ToJson());
  CHECK(j.Bias() == b.Bias());
  for (int k = 0; k < b.OutputCount(); ++k)
    for (int c = 0; c < 12; ++c) CHECK(j.Weight(k, c) == b.Weight(k, c));
}

TEST_CASE("stream inference columns and post-processing") {
  Rng r(5);
  const PredictorBank b = PredictorBank::Compile(Suite(10, &r));
  const BitMatrix frames = testutil::RandomBits(30, 10, 0.5, 6);
  const OutputTable raw = StreamInfer(b, frames);
  const OutputTable prob = StreamInfer(b, frames, Postprocess::kProbabilities);
  REQUIRE(raw.columns.size() == 11);
  CHECK(raw.columns[0] == "vad");
  CHECK(raw.columns[9] == "vad.class");
  CHECK(raw.columns[10] == "accent.class");
  for (int l = 0; l < 30; ++l) {
    std::vector<int> active;
    for (int c = 0; c < 10; ++c)
      if (frames(l, c)) active.push_back(c);
    const auto out = b.InferFrame(active);
    for (int k = 0; k < 9; ++k) CHECK(raw.rows[l][k] == out[k]);
    CHECK(raw.rows[l][9] == (out[0] > 0 ? 1.0 : 0.0));
    const int best = static_cast<int>(std::max_element(out.begin() + 1, out.begin() + 7) -
                                      (out.begin() + 1));
    CHECK(raw.rows[l][10] == best);
    CHECK(prob.rows[l][0] == doctest::Approx(1 / (1 + std::exp(-out[0]))));
    double s = 0;
    for (int k = 1; k < 7; ++k) s += prob.rows[l][k];
    CHECK(s == doctest::Approx(1.0));
    CHECK(prob.rows[l][7] == raw.rows[l][7]);  // regression untouched
    CHECK(prob.rows[l][10] == raw.rows[l][10]);
  }
  CHECK_THROWS_AS(StreamInfer(b, testutil::RandomBits(2, 9, 0.5, 1)), DataError);
}
