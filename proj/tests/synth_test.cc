// tests/synth_test.cc

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

#include <set>

#include "maskprobe/features.h"
#include "maskprobe/probes.h"
#include "maskprobe/synth.h"
#include "test_util.h"

using namespace maskprobe;

namespace {

TargetRegistry SmallRegistry() {
  auto snr = testutil::Continuous("snr_in", {-5, 0, 5, 10, 15, 20, 1, 2});
  snr.valid[2] = 0;
  return {testutil::Classes("vad", {0, 1, 1, 0, 1, 1, 0, 1}, 2),
          testutil::Classes("accent", {0, 1, 2, 0, 1, 2, 2, 1}, 3), snr};
}

// Reference value of one rule on one frame.
int RuleBit(const ChannelRule &r, const TargetSeries &t, size_t l) {
  bool bit = false;
  if (t.valid[l]) {
    bit = r.type == RuleType::kThreshold
              ? t.values[l] > r.threshold
              : std::count(r.classes.begin(), r.classes.end(), static_cast<int>(t.values[l])) > 0;
  }
  return r.polarity ? bit : !bit;
}

}  // namespace

TEST_CASE("without flips every ruled channel equals its rule") {
  const TargetRegistry reg = SmallRegistry();
  const Codebook cb = DefaultCodebook(reg, 2, 64, 0.0, 3, {2, 2, 8});
  CHECK_NOTHROW(cb.Validate());
  CHECK(cb.rules.size() == 2 + 3 * 2 + 8);
  const MaskTensor m = SynthMasks(reg, cb);
  REQUIRE(m.NumChannels() == 128);
  REQUIRE(m.NumFrames() == 8);
  for (const auto &r : cb.rules) {
    const TargetSeries &t = FindTarget(reg, r.target);
    for (size_t l = 0; l < 8; ++l) CHECK(m.bits(l, r.channel) == RuleBit(r, t, l));
  }
  const SpareLayout s = LayoutSpares(cb);
  for (size_t i = 0; i < s.constant_channels.size(); ++i)
    for (int l = 0; l < 8; ++l) CHECK(m.bits(l, s.constant_channels[i]) == s.constant_values[i]);
  CHECK(s.constant_channels.size() + s.random_channels.size() + cb.rules.size() == 128);
}

TEST_CASE("flip rate and determinism") {
  const SynthStream st = SynthTargetStream({.num_frames = 4000, .speakers = 6}, 11);
  const Codebook cb = DefaultCodebook(st.targets, 4, 96, 0.1, 4, {4, 2, 16});
  const MaskTensor a = SynthMasks(st.targets, cb);
  CHECK(SynthMasks(st.targets, cb).bits == a.bits);
  CHECK(SynthMasks(st.targets, cb, 1).bits != a.bits);
  int64_t flips = 0, total = 0;
  for (const auto &r : cb.rules) {
    const TargetSeries &t = FindTarget(st.targets, r.target);
    for (int64_t l = 0; l < a.NumFrames(); ++l, ++total) flips += a.bits(l, r.channel) != RuleBit(r, t, l);
  }
  const double rate = double(flips) / double(total);
  CHECK(rate == doctest::Approx(0.1).epsilon(0.05));
}

TEST_CASE("synthetic stream covers the roster") {
  SynthStreamOptions opt;
  opt.num_frames = 3000;
  opt.speakers = 5;
  opt.speaker_prefix = "x";
  const SynthStream st = SynthTargetStream(opt, 2);
  CHECK(st.targets.size() == 11);
  CHECK(st.manifest.NumFrames() == 3000);
  CHECK_NOTHROW(st.manifest.Validate());
  std::set<std::string> spk;
  for (const auto &s : st.manifest.segments) {
    spk.insert(s.speaker_id);
    CHECK(s.speaker_id.rfind("x", 0) == 0);
  }
  CHECK(spk.size() <= 5);
  const auto &vad = FindTarget(st.targets, "vad");
  const auto &f0 = FindTarget(st.targets, "f0");
  for (int64_t l = 0; l < 3000; ++l)
    if (f0.valid[l]) CHECK(vad.values[l] == 1.0);
  const SynthStream again = SynthTargetStream(opt, 2);
  CHECK(again.targets[4].values == st.targets[4].values);
}

TEST_CASE("codebook validation and json") {
  const TargetRegistry reg = SmallRegistry();
  Codebook cb = DefaultCodebook(reg, 1, 32, 0.05, 1, {1, 1, 4});
  const Codebook back = CodebookFromJson(CodebookToJson(cb));
  CHECK(back.rules.size() == cb.rules.size());
  CHECK(SynthMasks(reg, back).bits == SynthMasks(reg, cb).bits);

  Codebook bad = cb;
  bad.flip_prob = 0.5;
  CHECK_THROWS_AS(bad.Validate(), ConfigError);
  bad = cb;
  bad.rules.push_back(bad.rules.front());
  CHECK_THROWS_AS(bad.Validate(), ConfigError);
  bad = cb;
  bad.rules.front().channel = 32;
  CHECK_THROWS_AS(bad.Validate(), ConfigError);

  TargetRegistry extra = reg;
  extra.push_back(testutil::Continuous("f0", std::vector<double>(8, 120.0)));
  CHECK_THROWS_AS(SynthMasks(extra, cb), DataError);
  TargetRegistry shorter = reg;
  shorter[0].values.pop_back();
  shorter[0].valid.pop_back();
  CHECK_THROWS_AS(SynthMasks(shorter, cb), DataError);
  CHECK_THROWS_AS(DefaultCodebook(reg, 1, 8, 0.0, 1), ConfigError);
}

namespace {

// Training accuracy of a VAD probe on synthetic masks.
double VadTrainAccuracy(const TargetRegistry &reg, double flip, uint64_t seed) {
  const Codebook cb = DefaultCodebook(reg, 1, 48, flip, seed, {1, 1, 4});
  const FilteredMasks f = FilterMasks(SynthMasks(reg, cb), 0.005);
  const Eigen::MatrixXd X = f.bits.ToDense();
  const TargetSeries &vad = FindTarget(reg, "vad");
  const ProbeModel m = FitLogistic(X, vad, FitConfig{}, FeatureSpace::FromMasks(f));
  int correct = 0;
  for (Eigen::Index l = 0; l < X.rows(); ++l)
    correct += PredictFrame(m, X.row(l).transpose()).label == static_cast<int>(vad.values[l]);
  return double(correct) / double(X.rows());
}

TargetRegistry VadSnr(uint64_t seed) {
  SynthStreamOptions opt;
  opt.num_frames = 600;
  opt.speakers = 3;
  const SynthStream st = SynthTargetStream(opt, seed);
  return {FindTarget(st.targets, "vad"), FindTarget(st.targets, "snr_in")};
}

}  // namespace

TEST_CASE("one clean channel per binary target gives a perfect training fit") {
  for (uint64_t seed = 0; seed < 3; ++seed) CHECK(VadTrainAccuracy(VadSnr(seed), 0.0, seed) == 1.0);
}

TEST_CASE("probe accuracy degrades as the flip rate grows") {
  const std::vector<double> flips = {0.0, 0.1, 0.2, 0.35};
  std::vector<double> mean(flips.size(), 0.0);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const TargetRegistry reg = VadSnr(100 + seed);
    for (size_t i = 0; i < flips.size(); ++i) mean[i] += VadTrainAccuracy(reg, flips[i], seed) / 20;
  }
  for (size_t i = 1; i < flips.size(); ++i) CHECK(mean[i] <= mean[i - 1]);
}
