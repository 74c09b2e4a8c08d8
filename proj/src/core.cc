// src/core.cc

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

#include "maskprobe/core.h"

#include <algorithm>
#include <cmath>
#include <set>

namespace maskprobe {

int64_t StftConfig::FrameCount(int64_t num_samples) const {
  if (num_samples < window_len) return 0;
  return (num_samples - window_len) / hop_len + 1;
}

void StftConfig::Validate() const {
  if (sample_rate <= 0) throw ConfigError("stft: sample_rate must be positive");
  if (hop_len <= 0 || hop_len > window_len || window_len > fft_size)
    throw ConfigError("stft: need 0 < hop_len <= window_len <= fft_size, got hop " +
                      std::to_string(hop_len) + ", window " +
                      std::to_string(window_len) + ", fft " +
                      std::to_string(fft_size));
}

int64_t FrameIndexOf(double sample_pos, const StftConfig &cfg,
                     int64_t num_frames) {
  if (num_frames <= 0) return 0;
  int64_t l = static_cast<int64_t>(std::floor(sample_pos / cfg.hop_len));
  return std::clamp<int64_t>(l, 0, num_frames - 1);
}

BitMatrix BitMatrix::SelectCols(std::span<const int> cols) const {
  BitMatrix out(rows_, static_cast<int64_t>(cols.size()));
  for (int64_t r = 0; r < rows_; ++r) {
    auto src = Row(r);
    auto dst = out.Row(r);
    for (size_t j = 0; j < cols.size(); ++j) dst[j] = src[cols[j]];
  }
  return out;
}

Eigen::MatrixXd BitMatrix::ToDense() const {
  Eigen::MatrixXd m(rows_, cols_);
  for (int64_t r = 0; r < rows_; ++r)
    for (int64_t c = 0; c < cols_; ++c) m(r, c) = data_[r * cols_ + c];
  return m;
}

FilteredMasks FilteredMasks::Subset(std::vector<int> positions) const {
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()),
                  positions.end());
  FilteredMasks out;
  out.source_blocks = source_blocks;
  out.source_channels_per_block = source_channels_per_block;
  out.tau = tau;
  for (int p : positions) {
    if (p < 0 || p >= NumKept())
      throw DataError("feature position " + std::to_string(p) +
                      " out of range");
    out.channel_map.push_back(channel_map[p]);
    out.channel_std.push_back(channel_std[p]);
  }
  out.bits = bits.SelectCols(positions);
  return out;
}

std::string TargetKindName(TargetKind kind) {
  switch (kind) {
    case TargetKind::kBinary: return "binary";
    case TargetKind::kMultiClass: return "multiclass";
    case TargetKind::kContinuous: return "continuous";
  }
  return "continuous";
}

TargetKind ParseTargetKind(const std::string &name) {
  if (name == "binary") return TargetKind::kBinary;
  if (name == "multiclass") return TargetKind::kMultiClass;
  if (name == "continuous") return TargetKind::kContinuous;
  throw ConfigError("unknown target kind '" + name + "'");
}

int64_t TargetSeries::ValidCount() const {
  return std::count(valid.begin(), valid.end(), uint8_t{1});
}

void TargetSeries::Validate() const {
  if (valid.size() != values.size())
    throw DataError("target '" + name + "': values/valid length mismatch");
  if (kind == TargetKind::kBinary && num_classes != 2)
    throw DataError("target '" + name + "': binary target needs 2 classes");
  if (kind == TargetKind::kMultiClass && num_classes < 2)
    throw DataError("target '" + name + "': multi-class target needs K >= 2");
  for (size_t l = 0; l < values.size(); ++l) {
    if (!std::isfinite(values[l]))
      throw DataError("target '" + name + "': non-finite value at frame " +
                      std::to_string(l));
    if (IsClassification()) {
      double v = values[l];
      if (v != std::floor(v) || v < 0 || v >= num_classes)
        throw DataError("target '" + name + "': class value " +
                        std::to_string(v) + " outside [0, " +
                        std::to_string(num_classes) + ") at frame " +
                        std::to_string(l));
    }
  }
}

void StreamManifest::Validate() const {
  int64_t expect = 0;
  for (size_t k = 0; k < segments.size(); ++k) {
    const Segment &s = segments[k];
    if (s.start_frame != expect)
      throw DataError("manifest: segment " + std::to_string(k) + " ('" +
                      s.utterance_id + "') starts at frame " +
                      std::to_string(s.start_frame) + ", expected " +
                      std::to_string(expect));
    if (s.end_frame < s.start_frame)
      throw DataError("manifest: segment " + std::to_string(k) +
                      " ends before it starts");
    expect = s.end_frame;
  }
}

void ValidateDisjointSpeakers(const StreamManifest &a,
                              const StreamManifest &b) {
  std::set<std::string> spk;
  for (const auto &s : a.segments) spk.insert(s.speaker_id);
  for (const auto &s : b.segments)
    if (spk.count(s.speaker_id))
      throw DataError("speaker '" + s.speaker_id + "' appears in both the " +
                      a.split + " and " + b.split + " splits");
}

std::string FeatureKindName(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kMasks: return "masks";
    case FeatureKind::kStftLogMag: return "stft-logmag";
    case FeatureKind::kSuppressionMask: return "suppression-mask";
    case FeatureKind::kRawScores: return "raw-scores";
  }
  return "masks";
}

FeatureKind ParseFeatureKind(const std::string &name) {
  if (name == "masks") return FeatureKind::kMasks;
  if (name == "stft-logmag") return FeatureKind::kStftLogMag;
  if (name == "suppression-mask") return FeatureKind::kSuppressionMask;
  if (name == "raw-scores") return FeatureKind::kRawScores;
  throw ConfigError("unknown feature kind '" + name + "'");
}

}  // namespace maskprobe
