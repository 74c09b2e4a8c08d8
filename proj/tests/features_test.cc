// tests/features_test.cc

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

#include "maskprobe/features.h"
#include "oracles.h"
#include "test_util.h"

using namespace maskprobe;

namespace {

// Random masks with injected constant and alternating channels.
MaskTensor InjectedMasks(int64_t L, int blocks, int cpb, uint64_t seed,
                         std::vector<int> *constant, std::vector<int> *alternating) {
  MaskTensor m;
  m.num_blocks = blocks;
  m.channels_per_block = cpb;
  m.bits = testutil::RandomBits(L, blocks * cpb, 0.5, seed);
  Rng r(seed + 1);
  for (int c = 0; c < blocks * cpb; ++c) {
    const uint64_t kind = r.Below(3);
    if (kind == 0) {
      const bool v = r.Bernoulli(0.5);
      for (int64_t l = 0; l < L; ++l) m.bits.Set(l, c, v);
      constant->push_back(c);
    } else if (kind == 1) {
      for (int64_t l = 0; l < L; ++l) m.bits.Set(l, c, l % 2);
      alternating->push_back(c);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("column std is the population std") {
  const BitMatrix b = testutil::RandomBits(37, 6, 0.3, 8);
  const auto sd = ColumnStd(b);
  for (int c = 0; c < 6; ++c) {
    std::vector<double> col;
    for (int l = 0; l < 37; ++l) col.push_back(b(l, c));
    CHECK(sd[c] == doctest::Approx(oracle::Std(col)).epsilon(1e-12));
  }
}

TEST_CASE("filter drops constant channels and keeps alternating ones") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<int> constant, alternating;
    const int64_t L = 2 + static_cast<int64_t>(seed) * 17;
    const MaskTensor m = InjectedMasks(L, 3, 16, seed, &constant, &alternating);
    const FilteredMasks f = FilterMasks(m, 0.005);
    const std::set<int> kept(f.channel_map.begin(), f.channel_map.end());
    for (int c : constant) CHECK(kept.count(c) == 0);
    for (int c : alternating) CHECK(kept.count(c) == 1);
    CHECK(std::is_sorted(f.channel_map.begin(), f.channel_map.end()));
    for (int k = 0; k < f.NumKept(); ++k) {
      CHECK(f.channel_std[k] > 0.005);
      for (int64_t l = 0; l < L; ++l) CHECK(f.bits(l, k) == m.bits(l, f.channel_map[k]));
    }
  }
  MaskTensor one;
  one.num_blocks = 1;
  one.channels_per_block = 4;
  one.bits = BitMatrix(1, 4);
  CHECK_THROWS_AS(FilterMasks(one, 0.005), DataError);
}

TEST_CASE("channel map carries over to new masks") {
  std::vector<int> constant, alternating;
  const MaskTensor tr = InjectedMasks(50, 2, 8, 3, &constant, &alternating);
  const FilteredMasks f = FilterMasks(tr, 0.005);
  MaskTensor te = tr;
  te.bits = testutil::RandomBits(20, 16, 0.5, 99);
  const FilteredMasks g = ApplyChannelMap(te, f);
  CHECK(g.channel_map == f.channel_map);
  CHECK(g.channel_std == f.channel_std);
  REQUIRE(g.NumFrames() == 20);
  for (int k = 0; k < g.NumKept(); ++k) CHECK(g.bits(7, k) == te.bits(7, g.channel_map[k]));
  te.channels_per_block = 4;
  te.num_blocks = 4;
  CHECK_NOTHROW(te.NumChannels());
  te.num_blocks = 3;
  CHECK_THROWS_AS(ApplyChannelMap(te, f), DataError);
}

TEST_CASE("block restriction") {
  FilteredMasks f;
  f.source_blocks = 3;
  f.source_channels_per_block = 4;
  f.channel_map = {0, 3, 4, 9, 11};
  f.channel_std = {1, 2, 3, 4, 5};
  f.bits = testutil::RandomBits(5, 5, 0.5, 1);
  const auto r = RestrictBlocks(f, {0, 2});
  CHECK(r.channel_map == std::vector<int>{0, 3, 9, 11});
  CHECK_THROWS_AS(RestrictBlocks(f, {3}), DataError);
  FilteredMasks only1 = f.Subset({2});
  CHECK_THROWS_AS(RestrictBlocks(only1, {0}), DataError);
}

TEST_CASE("feature ranking by scaled coefficient norm") {
  const FeatureSpace space = testutil::MaskSpace(4);
  ProbeModel a, b;
  a.target = "vad";
  a.weights = Eigen::MatrixXd(1, 4);
  a.weights << 0.1, 0.0, 2.0, 0.5;
  a.bias = Eigen::VectorXd::Zero(1);
  a.feature_space = space;
  b = a;
  b.target = "snr_in";
  b.weights << 0.0, 3.0, 0.0, 0.0;
  const std::vector<double> sd = {1.0, 1.0, 1.0, 1.0};
  const auto order = RankFeatures({a, b}, sd);
  // Unit-norm rows: channel 1 (1.0), channel 2 (~0.97), 3, 0.
  CHECK(order == std::vector<int>{1, 2, 3, 0});
  const std::vector<double> sd2 = {100.0, 1.0, 1.0, 1.0};
  CHECK(RankFeatures({a}, sd2).front() == 0);
}

TEST_CASE("stft magnitudes match a direct dft") {
  StftConfig stft;
  stft.window_len = 64;
  stft.hop_len = 32;
  stft.fft_size = 128;
  Rng r(2);
  std::vector<double> x(300);
  for (auto &v : x) v = r.Normal();
  const Eigen::MatrixXd M = StftMagnitudes(x, stft);
  REQUIRE(M.rows() == stft.FrameCount(300));
  REQUIRE(M.cols() == 65);
  for (int l = 0; l < M.rows(); ++l) {
    std::vector<double> frame(64);
    for (int n = 0; n < 64; ++n)
      frame[n] = x[l * 32 + n] * (0.5 - 0.5 * std::cos(2 * M_PI * n / 64));
    const auto want = oracle::DftMagnitudes(frame, 128);
    for (int k = 0; k < 65; ++k) CHECK(M(l, k) == doctest::Approx(want[k]).epsilon(1e-9));
    // Parseval over the one-sided spectrum.
    double time = 0, freq = 0;
    for (double v : frame) time += v * v;
    for (int k = 0; k <= 64; ++k)
      freq += (k == 0 || k == 64 ? 1.0 : 2.0) * M(l, k) * M(l, k);
    CHECK(freq / 128 == doctest::Approx(time).epsilon(1e-9));
  }
}

TEST_CASE("log-magnitude features reuse fitted z-score statistics") {
  AudioStream a, b;
  Rng r(5);
  for (int i = 0; i < 8000; ++i) {
    a.samples.push_back(0.1 * r.Normal());
    b.samples.push_back(0.3 * r.Normal());
  }
  StftConfig stft;
  const BaselineFeatures fa = StftLogMag(a, stft);
  REQUIRE(fa.zscore);
  for (Eigen::Index c = 0; c < fa.values.cols(); ++c) {
    CHECK(std::abs(fa.values.col(c).mean()) < 1e-9);
  }
  const BaselineFeatures fb = StftLogMag(b, stft, &*fa.zscore);
  CHECK(fb.zscore->mean == fa.zscore->mean);
  // A louder stream sits above the training mean.
  CHECK(fb.values.mean() > 0.5);

  Eigen::MatrixXd X(3, 2);
  X << 1, 5, 2, 5, 3, 5;
  ZscoreStats st;
  const Eigen::MatrixXd Z = Zscore(X, nullptr, &st);
  CHECK(Z(0, 1) == 0.0);
  CHECK(Z(2, 0) == doctest::Approx(std::sqrt(1.5)));
}
