// tests/targets_test.cc

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

#include <fstream>

#include "maskprobe/targets.h"
#include "oracles.h"
#include "test_util.h"

using namespace maskprobe;

TEST_CASE("rms envelope matches the frame definition") {
  StftConfig stft;
  std::vector<double> x(2048);
  Rng r(1);
  for (auto &v : x) v = r.Normal();
  const auto rms = RmsEnvelope(x, stft);
  REQUIRE(rms.size() == static_cast<size_t>(stft.FrameCount(2048)));
  for (size_t l = 0; l < rms.size(); ++l) {
    long double acc = 0;
    for (int i = 0; i < 512; ++i) acc += x[l * 256 + i] * x[l * 256 + i];
    CHECK(rms[l] == doctest::Approx(std::sqrt(static_cast<double>(acc / 512))).epsilon(1e-12));
  }
}

TEST_CASE("zero-phase moving average") {
  const std::vector<double> x = {0, 0, 3, 0, 0};
  const auto y = ZeroPhaseMovingAverage(x, 3);
  CHECK(y == std::vector<double>{0, 1, 1, 1, 0});
  CHECK_THROWS_AS(ZeroPhaseMovingAverage(x, 4), ConfigError);
}

TEST_CASE("vad marks loud runs and drops short blips") {
  std::vector<double> rms(200, 1e-6);
  for (int l = 50; l < 150; ++l) rms[l] = 1.0;
  rms[20] = 0.05;  // quiet isolated blip, below threshold once smoothed
  const TargetSeries v = VadFromEnvelope(rms);
  CHECK(v.kind == TargetKind::kBinary);
  CHECK(v.values[20] == 0.0);
  for (int l = 60; l < 140; ++l) CHECK(v.values[l] == 1.0);
  for (int l = 0; l < 30; ++l) CHECK(v.values[l] == 0.0);
  for (int l = 170; l < 200; ++l) CHECK(v.values[l] == 0.0);
  const TargetSeries silent = VadFromEnvelope(std::vector<double>(10, 0.0));
  for (double s : silent.values) CHECK(s == 0.0);
}

TEST_CASE("frame snr in dB with clamps") {
  const std::vector<double> s = {1.0, 1.0, 0.0, 1.0, 1e-9};
  const std::vector<double> n = {1.0, 0.1, 0.0, 0.0, 1.0};
  const auto t = FrameSnr(s, n, "snr_in");
  CHECK(t.values[0] == doctest::Approx(0.0));
  CHECK(t.values[1] == doctest::Approx(20.0));
  CHECK(t.values[2] == -50.0);
  CHECK(t.values[3] == 30.0);
  CHECK(t.values[4] == -50.0);
  CHECK(t.iqr == std::make_pair(-13.0, 8.0));
}

TEST_CASE("si-sdr is scale invariant and bounded") {
  Rng r(4);
  std::vector<double> ref(4000), est(4000);
  for (auto &v : ref) v = r.Normal();
  for (double a : {0.1, 1.0, 2.7}) {
    for (size_t i = 0; i < ref.size(); ++i) est[i] = a * ref[i];
    CHECK(SiSdr(ref, est) == 30.0);
  }
  for (size_t i = 0; i < ref.size(); ++i) est[i] = ref[i] + 0.1 * r.Normal();
  const double d1 = SiSdr(ref, est, false);
  for (auto &v : est) v *= 5.0;
  CHECK(SiSdr(ref, est, false) == doctest::Approx(d1).epsilon(1e-9));
  CHECK(d1 == doctest::Approx(20.0).epsilon(0.05));
  const std::vector<double> head(est.begin(), est.begin() + 10);
  CHECK(SiSdr(std::vector<double>(10, 0.0), head) == -50.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(256), b(256);
    const double scale = std::pow(10.0, r.Uniform() * 8 - 4);
    for (int i = 0; i < 256; ++i) {
      a[i] = r.Normal();
      b[i] = scale * r.Normal() + (trial % 3) * a[i];
    }
    const double d = SiSdr(a, b);
    CHECK(d >= -50.0);
    CHECK(d <= 30.0);
  }
}

TEST_CASE("window schedule") {
  const auto w = WindowSchedule(WindowedMetricConfig::SiSdr(), 16000 * 3, 16000);
  REQUIRE(w.size() == 9);
  CHECK(w[1].start == 4000);
  CHECK(w.back().end == 48000);
  const auto p = WindowSchedule(WindowedMetricConfig::Pesq(), 16000 * 4, 16000);
  CHECK(p.size() == 2);
  CHECK(p[0].pad == 8000);
  CHECK_THROWS_AS(WindowSchedule(WindowedMetricConfig::SiSdr(), 100, 16000), DataError);
}

TEST_CASE("squared-hann upsampling") {
  StftConfig stft;
  const auto cfg = WindowedMetricConfig::SiSdr();
  const int64_t L = 300;
  const std::vector<double> flat(12, 7.25);
  const auto c = UpsampleWindowed(flat, cfg, stft, L, "sisdr_in");
  for (double v : c.values) CHECK(std::abs(v - 7.25) <= 1e-9);

  std::vector<double> ramp(12);
  for (int k = 0; k < 12; ++k) ramp[k] = 1.5 * k - 4;
  const auto u = UpsampleWindowed(ramp, cfg, stft, L, "sisdr_in");
  for (int64_t l = 0; l < L; ++l) {
    const double want = oracle::OverlapAddAt(ramp, 16000, 4000, l * 256 + 256.0);
    if (!std::isnan(want)) CHECK(std::abs(u.values[l] - want) <= 1e-9);
  }
}

TEST_CASE("gating by vad invalidates silent frames only") {
  auto snr = testutil::Continuous("snr_in", {1, 2, 3, 4});
  snr.valid[3] = 0;
  const auto vad = testutil::Classes("vad", {1, 0, 1, 1}, 2);
  const auto g = GateByVad(snr, vad);
  CHECK(g.valid == std::vector<uint8_t>{1, 0, 1, 0});
  CHECK(g.values == snr.values);
}

TEST_CASE("external targets") {
  testutil::TempDir dir("tg_ext");
  {
    std::ofstream os(dir / "f0.csv");
    os << "frame,value\n0,0\n1,120.5\n2,130\n";
  }
  const auto f0 = IngestExternalTarget(dir / "f0.csv", "f0", TargetKind::kContinuous, 0,
                                       DefaultIqr("f0"), 3, true);
  CHECK(f0.valid == std::vector<uint8_t>{0, 1, 1});
  CHECK(f0.values[1] == 120.5);
  CHECK_THROWS_AS(IngestExternalTarget(dir / "f0.csv", "f0", TargetKind::kContinuous, 0,
                                       std::nullopt, 4, true),
                  DataError);
}

TEST_CASE("interquartile ranges of the roster") {
  CHECK(DefaultIqr("snr_in") == std::make_pair(-13.0, 8.0));
  CHECK(DefaultIqr("snr_enh") == std::make_pair(1.0, 14.0));
  CHECK(DefaultIqr("sisdr_in") == std::make_pair(-1.0, 10.0));
  CHECK(DefaultIqr("sisdr_enh") == std::make_pair(8.0, 17.0));
  CHECK(DefaultIqr("pesq_in") == std::make_pair(1.2, 1.7));
  CHECK(DefaultIqr("pesq_enh") == std::make_pair(2.6, 2.9));
  CHECK(DefaultIqr("f0") == std::make_pair(110.0, 200.0));
  CHECK(!DefaultIqr("vad"));
  CHECK(TargetRoster().size() == 11);
  CHECK(RosterRank("vad") < RosterRank("f0"));
}
