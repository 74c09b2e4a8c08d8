// tests/io_test.cc

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

#include "maskprobe/io.h"
#include "test_util.h"

using namespace maskprobe;

TEST_CASE("bit packing is LSB first and round-trips") {
  const std::vector<uint8_t> row = {1, 0, 0, 0, 0, 0, 0, 1, 1, 1};
  const auto packed = PackBits(row);
  REQUIRE(packed.size() == 2);
  CHECK(packed[0] == 0x81);
  CHECK(packed[1] == 0x03);
  std::vector<uint8_t> back(row.size());
  UnpackBits(packed, static_cast<int64_t>(row.size()), back);
  CHECK(back == row);
}

TEST_CASE("mask file round trip and header layout") {
  testutil::TempDir dir("io_masks");
  MaskTensor m;
  m.num_blocks = 3;
  m.channels_per_block = 7;
  m.bits = testutil::RandomBits(13, 21, 0.4, 5);
  const auto path = dir / "m.dcpm";
  WriteMaskFile(m, path);
  CHECK(fs::file_size(path) == 17 + 13 * 3);
  std::ifstream is(path, std::ios::binary);
  char magic[5] = {};
  is.read(magic, 4);
  CHECK(std::string(magic) == "DCPM");
  CHECK(is.get() == 1);
  const MaskTensor r = ReadMaskFile(path);
  CHECK(r.num_blocks == 3);
  CHECK(r.channels_per_block == 7);
  CHECK(r.bits == m.bits);
}

TEST_CASE("corrupt mask files are data errors") {
  testutil::TempDir dir("io_corrupt");
  MaskTensor m;
  m.num_blocks = 1;
  m.channels_per_block = 9;
  m.bits = testutil::RandomBits(4, 9, 0.5, 1);
  const auto path = dir / "m.dcpm";
  WriteMaskFile(m, path);
  fs::resize_file(path, fs::file_size(path) - 1);
  CHECK_THROWS_AS(ReadMaskFile(path), DataError);
  {
    std::ofstream os(dir / "bad.dcpm", std::ios::binary);
    os << "XXXX";
  }
  CHECK_THROWS_AS(ReadMaskFile(dir / "bad.dcpm"), DataError);
  CHECK_THROWS_AS(ReadMaskFile(dir / "missing.dcpm"), DataError);
}

TEST_CASE("filtered masks carry their channel map") {
  testutil::TempDir dir("io_filtered");
  FilteredMasks f;
  f.source_blocks = 2;
  f.source_channels_per_block = 8;
  f.tau = 0.005;
  f.channel_map = {1, 4, 9, 15};
  f.channel_std = {0.5, 0.25, 0.125, 0.0625};
  f.bits = testutil::RandomBits(10, 4, 0.5, 2);
  WriteFilteredMasks(f, dir / "f.dcpm");
  const FilteredMasks r = ReadFilteredMasks(dir / "f.dcpm");
  CHECK(r.channel_map == f.channel_map);
  CHECK(r.channel_std == f.channel_std);
  CHECK(r.tau == f.tau);
  CHECK(r.source_blocks == 2);
  CHECK(r.bits == f.bits);
}

TEST_CASE("manifest json round trip") {
  testutil::TempDir dir("io_manifest");
  StreamManifest m;
  m.split = "test";
  m.seed = 17;
  m.num_samples = 4000;
  m.segments = {{"u1", "s1", "F", "Scottish", "Street", 0, 7},
                {"u2", "s2", "M", "American", "Office", 7, 14}};
  m.noise_track = {{"n1", "Street", 0, 2000, 0}, {"n2", "Office", 2000, 4000, 1}};
  WriteManifest(m, dir / "manifest.json");
  const StreamManifest r = ReadManifest(dir / "manifest.json");
  CHECK(r.split == "test");
  CHECK(r.seed == 17);
  CHECK(r.segments == m.segments);
  CHECK(r.noise_track == m.noise_track);
  CHECK(r.stft == m.stft);
}

TEST_CASE("target registry round trip keeps validity and metadata") {
  testutil::TempDir dir("io_targets");
  TargetRegistry reg;
  reg.push_back(testutil::Classes("vad", {0, 1, 1, 0}, 2));
  auto snr = testutil::Continuous("snr_in", {1.5, -3.25, 0.0, 30.0});
  snr.valid = {1, 0, 1, 1};
  snr.iqr = std::make_pair(-13.0, 8.0);
  reg.push_back(snr);
  WriteTargetRegistry(reg, dir.path());
  const TargetRegistry r = ReadTargetRegistry(dir.path());
  REQUIRE(r.size() == 2);
  CHECK(FindTarget(r, "snr_in").values == snr.values);
  CHECK(FindTarget(r, "snr_in").valid == snr.valid);
  CHECK(FindTarget(r, "snr_in").iqr == snr.iqr);
  CHECK(FindTarget(r, "vad").kind == TargetKind::kBinary);
  CHECK_THROWS_AS(FindTarget(r, "f0"), DataError);
}

TEST_CASE("feature matrix and wav round trips") {
  testutil::TempDir dir("io_misc");
  Eigen::MatrixXd X(3, 2);
  X << 1.5, -2, 0.25, 8, 1e-3, 3;
  WriteFeatureMatrix(X, dir / "x.f32");
  const Eigen::MatrixXd R = ReadFeatureMatrix(dir / "x.f32");
  CHECK(R.isApprox(X.cast<float>().cast<double>()));

  AudioStream a;
  a.sample_rate = 16000;
  for (int i = 0; i < 100; ++i) a.samples.push_back(std::sin(i * 0.1) * 0.5);
  WriteWav(a, dir / "a.wav");
  const AudioStream b = ReadWav(dir / "a.wav", AudioRole::kClean);
  REQUIRE(b.Size() == a.Size());
  CHECK(b.sample_rate == 16000);
  for (int i = 0; i < 100; ++i) CHECK(std::abs(b.samples[i] - a.samples[i]) < 1e-4);
}

TEST_CASE("number formatting round trips exactly") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-12, 12345.678, 0.0})
    CHECK(ParseDouble(FormatDouble(v), "test") == v);
  CHECK_THROWS_AS(ParseDouble("abc", "test"), DataError);
}
