// tests/assembly_test.cc

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
#include <map>

#include "maskprobe/assembly.h"
#include "maskprobe/io.h"
#include "test_util.h"

using namespace maskprobe;

namespace {

AudioStream Tone(int64_t n, double amp, double freq) {
  AudioStream a;
  for (int64_t i = 0; i < n; ++i) a.samples.push_back(amp * std::sin(freq * i));
  return a;
}

Utterance Utt(const std::string &id, const std::string &spk, const std::string &g,
              const std::string &acc, int64_t n) {
  return {{id, spk, g, acc, {}}, Tone(n, 0.3, 0.05)};
}

NoiseExcerpt Noise(const std::string &id, const std::string &cat, int64_t n, double amp) {
  NoiseExcerpt e{{id, cat, {}}, {}};
  e.audio.role = AudioRole::kNoise;
  e.audio.samples.assign(n, amp);
  return e;
}

}  // namespace

TEST_CASE("stratified order is balanced at every prefix") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<std::string> strata;
    Rng r(seed);
    for (int i = 0; i < 60; ++i) strata.push_back("s" + std::to_string(r.Below(5)));
    const auto order = StratifiedOrder(strata, seed);
    REQUIRE(order.size() == strata.size());
    std::map<std::string, int> total, seen;
    for (const auto &s : strata) ++total[s];
    std::set<size_t> uniq(order.begin(), order.end());
    CHECK(uniq.size() == strata.size());
    for (size_t p = 0; p < order.size(); ++p) {
      ++seen[strata[order[p]]];
      int lo = INT32_MAX, hi = 0;
      for (const auto &[s, n] : total) {
        if (seen[s] == n) continue;  // exhausted
        lo = std::min(lo, seen[s]);
        hi = std::max(hi, seen[s]);
      }
      if (lo != INT32_MAX) CHECK(hi - lo <= 1);
    }
    CHECK(StratifiedOrder(strata, seed) == order);
  }
}

TEST_CASE("assembled stream mixes without gain and frames segments") {
  StftConfig stft;
  std::vector<Utterance> speech = {Utt("a", "s1", "M", "English", 5000),
                                   Utt("b", "s2", "F", "Irish", 3000),
                                   Utt("c", "s1", "M", "English", 4100)};
  std::vector<NoiseExcerpt> noise = {Noise("n1", "Office", 2500, 0.01),
                                     Noise("n2", "Street", 1000, 0.02)};
  const AssembledStream s = AssembleStream(speech, noise, stft, "train", 3);
  const int64_t pad = stft.window_len - stft.hop_len;
  REQUIRE(s.clean.Size() == 12100 + pad);
  CHECK(s.noise.Size() == s.clean.Size());
  for (int64_t i = 0; i < s.clean.Size(); ++i)
    CHECK(s.noisy.samples[i] == s.clean.samples[i] + s.noise.samples[i]);
  for (int64_t i = 12100; i < s.clean.Size(); ++i) CHECK(s.clean.samples[i] == 0.0);

  // Segment boundaries follow floor(a_k / hop).
  const auto &seg = s.manifest.segments;
  REQUIRE(seg.size() == 3);
  CHECK(seg[0].start_frame == 0);
  CHECK(seg[1].start_frame == 5000 / 256);
  CHECK(seg[2].start_frame == 8000 / 256);
  CHECK(s.manifest.NumFrames() == stft.FrameCount(s.clean.Size()));
  CHECK_NOTHROW(s.manifest.Validate());

  // Noise loops: 3500 samples per pass.
  CHECK(s.noise.samples[0] == 0.01);
  CHECK(s.noise.samples[2600] == 0.02);
  CHECK(s.noise.samples[3500] == 0.01);
  CHECK(!s.noise_seams.empty());
  CHECK(s.noise_seams.front() == 3500);
  CHECK(seg[0].noise_category == "Office");
  CHECK(seg[2].noise_category == (8000 % 3500 < 2500 ? "Office" : "Street"));
}

TEST_CASE("labels from manifest") {
  StreamManifest m;
  m.segments = {{"u1", "s2", "F", "Welsh", "Office", 0, 3},
                {"u2", "s1", "M", "Irish", "Street", 3, 5}};
  const auto g = LabelsFromManifest(m, LabelKey::kGender);
  CHECK(g.values == std::vector<double>{1, 1, 1, 0, 0});
  CHECK(g.kind == TargetKind::kBinary);
  const auto a = LabelsFromManifest(m, LabelKey::kAccent);
  CHECK(a.values == std::vector<double>{5, 5, 5, 3, 3});  // unknown accent -> Other
  const auto n = LabelsFromManifest(m, LabelKey::kNoiseCategory);
  CHECK(n.values == std::vector<double>{1, 1, 1, 4, 4});
  const auto s = LabelsFromManifest(m, LabelKey::kSpeaker);
  CHECK(s.class_names == std::vector<std::string>{"s1", "s2"});
  CHECK(s.values == std::vector<double>{1, 1, 1, 0, 0});
  m.segments[0].gender = "X";
  CHECK_THROWS_AS(LabelsFromManifest(m, LabelKey::kGender), DataError);
}

TEST_CASE("pools from csv") {
  testutil::TempDir dir("asm_pool");
  {
    std::ofstream os(dir / "speech.csv");
    os << "id,path,speaker,gender,accent,split\n"
       << "u1,a.wav,s1,M,English,train\nu2,b.wav,s2,F,Irish,test\n";
  }
  const auto tr = ReadUtterancePool(dir / "speech.csv", "train");
  REQUIRE(tr.entries.size() == 1);
  CHECK(tr.entries[0].wav == dir / "a.wav");
  CHECK_THROWS_AS(ReadUtterancePool(dir / "speech.csv", "dev"), DataError);
  {
    std::ofstream os(dir / "dup.csv");
    os << "id,path,speaker,gender,accent\nu1,a.wav,s1,M,English\nu1,b.wav,s2,F,Irish\n";
  }
  CHECK_THROWS_AS(ReadUtterancePool(dir / "dup.csv", "train"), DataError);
  {
    std::ofstream os(dir / "nocol.csv");
    os << "id,path\nu1,a.wav\n";
  }
  CHECK_THROWS_AS(ReadUtterancePool(dir / "nocol.csv", "train"), DataError);
}

TEST_CASE("extract noise is the samplewise difference") {
  AudioStream clean = Tone(100, 0.5, 0.1), noisy = Tone(100, 0.5, 0.1);
  for (int i = 0; i < 100; ++i) noisy.samples[i] += 0.01 * i;
  const AudioStream n = ExtractNoise(noisy, clean);
  for (int i = 0; i < 100; ++i) CHECK(n.samples[i] == doctest::Approx(0.01 * i));
  clean.samples.pop_back();
  CHECK_THROWS_AS(ExtractNoise(noisy, clean), DataError);
}
