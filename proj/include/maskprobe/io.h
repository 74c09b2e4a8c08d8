// maskprobe/io.h

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

// Container formats shared by all pipeline stages.
//
// DCPM mask container (little-endian):
//   bytes 0-3   "DCPM"
//   byte  4     version = 1
//   bytes 5-8   L      (u32, frames)
//   bytes 9-12  I      (u32, blocks)
//   bytes 13-16 C_res  (u32, channels per block)
//   then L rows of ceil(I*C_res/8) bytes; bit k of byte b is channel 8b+k,
//   LSB first, last byte of each row zero-padded.
//
// Feature matrix (.f32): u32 L, u32 D, then L*D float32 row-major.
// Target sidecar CSV: header "frame,value,valid", frames 0..L-1 in order.

#ifndef MASKPROBE_IO_H_
#define MASKPROBE_IO_H_

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "maskprobe/core.h"

namespace maskprobe {

namespace fs = std::filesystem;

/// Packs one row of 0/1 bytes, 8 channels per byte, LSB first.
std::vector<uint8_t> PackBits(std::span<const uint8_t> row);
/// Inverse of PackBits for a row of `width` channels.
void UnpackBits(std::span<const uint8_t> packed, int64_t width,
                std::span<uint8_t> row);

void WriteMaskFile(const MaskTensor &masks, const fs::path &path);
MaskTensor ReadMaskFile(const fs::path &path);

/// FilteredMasks as a DCPM file (I = 1, C_res = C*) plus "<path>.json"
/// holding channel_map, channel_std, tau and the source geometry.
void WriteFilteredMasks(const FilteredMasks &masks, const fs::path &path);
FilteredMasks ReadFilteredMasks(const fs::path &path);

nlohmann::json StftToJson(const StftConfig &cfg);
StftConfig StftFromJson(const nlohmann::json &j);

nlohmann::json ManifestToJson(const StreamManifest &m);
StreamManifest ManifestFromJson(const nlohmann::json &j);
void WriteManifest(const StreamManifest &m, const fs::path &path);
StreamManifest ReadManifest(const fs::path &path);

void WriteTargetCsv(const TargetSeries &ts, const fs::path &path);
/// Reads a sidecar CSV. The "valid" column is optional (defaults to 1).
/// Throws DataError on gaps, non-numeric cells, or a frame count other than
/// `expected_frames` (when >= 0).
void ReadTargetCsv(const fs::path &path, int64_t expected_frames,
                   std::vector<double> *values, std::vector<uint8_t> *valid);

/// A set of named target series sharing one frame grid, stored as a
/// directory of sidecar CSVs plus an index file "targets.json".
using TargetRegistry = std::vector<TargetSeries>;

void WriteTargetRegistry(const TargetRegistry &reg, const fs::path &dir,
                         const nlohmann::json &metadata = nlohmann::json::object());
TargetRegistry ReadTargetRegistry(const fs::path &dir);
const TargetSeries &FindTarget(const TargetRegistry &reg,
                               const std::string &name);

void WriteFeatureMatrix(const Eigen::MatrixXd &m, const fs::path &path);
Eigen::MatrixXd ReadFeatureMatrix(const fs::path &path);

/// Mono PCM16 or float32 WAV. Anything else throws DataError.
AudioStream ReadWav(const fs::path &path, AudioRole role);
/// Writes mono 32-bit float WAV.
void WriteWav(const AudioStream &audio, const fs::path &path);

nlohmann::json ReadJsonFile(const fs::path &path);
/// Pretty-printed, trailing newline; deterministic for identical input.
void WriteJsonFile(const nlohmann::json &j, const fs::path &path);

/// Shortest text that round-trips a double exactly.
std::string FormatDouble(double v);
double ParseDouble(const std::string &s, const std::string &context);

/// Minimal CSV table with a header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int Column(const std::string &name) const;  // -1 if absent
};
CsvTable ReadCsv(const fs::path &path);

}  // namespace maskprobe

#endif  // MASKPROBE_IO_H_
