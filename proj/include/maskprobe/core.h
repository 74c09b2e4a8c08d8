// maskprobe/core.h

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

#ifndef MASKPROBE_CORE_H_
#define MASKPROBE_CORE_H_

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maskprobe/common.h"

namespace maskprobe {

/// STFT framing shared by the SE model, the targets and the baselines.
/// Framing covers the whole signal without padding:
/// frame l spans samples [l*hop_len, l*hop_len + window_len).
struct StftConfig {
  int sample_rate = 16000;
  int window_len = 512;
  int hop_len = 256;
  int fft_size = 512;

  int BinCount() const { return fft_size / 2 + 1; }
  /// floor((num_samples - window_len) / hop_len) + 1, or 0 if the signal is
  /// shorter than one window.
  int64_t FrameCount(int64_t num_samples) const;
  /// Throws ConfigError unless 0 < hop_len <= window_len <= fft_size.
  void Validate() const;

  bool operator==(const StftConfig &) const = default;
};

/// floor(sample_pos / hop_len), clamped to [0, num_frames).
int64_t FrameIndexOf(double sample_pos, const StftConfig &cfg,
                     int64_t num_frames);

/// Dense row-major 0/1 matrix, one byte per entry in memory.
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(int64_t rows, int64_t cols)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows * cols), 0) {}

  int64_t Rows() const { return rows_; }
  int64_t Cols() const { return cols_; }

  uint8_t operator()(int64_t r, int64_t c) const { return data_[r * cols_ + c]; }
  void Set(int64_t r, int64_t c, bool v) { data_[r * cols_ + c] = v ? 1 : 0; }

  std::span<const uint8_t> Row(int64_t r) const {
    return {data_.data() + r * cols_, static_cast<size_t>(cols_)};
  }
  std::span<uint8_t> Row(int64_t r) {
    return {data_.data() + r * cols_, static_cast<size_t>(cols_)};
  }
  const std::vector<uint8_t> &Data() const { return data_; }

  /// Copies the selected columns, in the given order.
  BitMatrix SelectCols(std::span<const int> cols) const;
  Eigen::MatrixXd ToDense() const;

  bool operator==(const BitMatrix &) const = default;

 private:
  int64_t rows_ = 0;
  int64_t cols_ = 0;
  std::vector<uint8_t> data_;
};

/// Per-frame channel gating decisions of the SE model, L x (I * C_res).
/// Flat channel index is block * channels_per_block + channel.
struct MaskTensor {
  int num_blocks = 0;
  int channels_per_block = 0;
  BitMatrix bits;

  int64_t NumFrames() const { return bits.Rows(); }
  int NumChannels() const { return num_blocks * channels_per_block; }
};

/// Variance-filtered subset of a MaskTensor: the probe input features.
struct FilteredMasks {
  int source_blocks = 0;
  int source_channels_per_block = 0;
  double tau = 0.0;
  std::vector<int> channel_map;  // flat indices, strictly increasing
  std::vector<double> channel_std;
  BitMatrix bits;  // L x channel_map.size()

  int64_t NumFrames() const { return bits.Rows(); }
  int NumKept() const { return static_cast<int>(channel_map.size()); }
  int BlockOf(int kept_index) const {
    return channel_map[kept_index] / source_channels_per_block;
  }
  /// Keeps the given kept-channel positions (sorted internally).
  FilteredMasks Subset(std::vector<int> positions) const;
};

enum class TargetKind { kBinary, kMultiClass, kContinuous };

std::string TargetKindName(TargetKind kind);
TargetKind ParseTargetKind(const std::string &name);

/// One ground-truth value per STFT frame plus a validity mask.
struct TargetSeries {
  std::string name;
  TargetKind kind = TargetKind::kContinuous;
  int num_classes = 0;  // 2 for binary, K for multi-class, 0 for continuous
  std::vector<std::string> class_names;
  std::vector<double> values;
  std::vector<uint8_t> valid;
  std::optional<std::pair<double, double>> iqr;

  int64_t Length() const { return static_cast<int64_t>(values.size()); }
  int64_t ValidCount() const;
  bool IsClassification() const { return kind != TargetKind::kContinuous; }
  /// Throws DataError on size mismatch, non-finite values, or class values
  /// outside [0, num_classes).
  void Validate() const;
};

struct Segment {
  std::string utterance_id;
  std::string speaker_id;
  std::string gender;
  std::string accent;
  std::string noise_category;
  int64_t start_frame = 0;
  int64_t end_frame = 0;

  bool operator==(const Segment &) const = default;
};

/// A noise excerpt placed on the continuous noise track, in samples.
struct NoisePlacement {
  std::string excerpt_id;
  std::string noise_category;
  int64_t start_sample = 0;
  int64_t end_sample = 0;
  int loop = 0;  // how many times the noise order had wrapped

  bool operator==(const NoisePlacement &) const = default;
};

/// Frame-aligned metadata timeline of an assembled stream.
struct StreamManifest {
  std::string split;
  uint64_t seed = 0;
  StftConfig stft;
  std::vector<Segment> segments;
  std::vector<NoisePlacement> noise_track;
  int64_t num_samples = 0;

  int64_t NumFrames() const {
    return segments.empty() ? 0 : segments.back().end_frame;
  }
  /// Throws DataError unless segments are contiguous from frame 0.
  void Validate() const;
};

/// Throws DataError if any speaker appears in both manifests.
void ValidateDisjointSpeakers(const StreamManifest &a, const StreamManifest &b);

enum class AudioRole { kClean, kNoise, kNoisy, kEnhanced };

struct AudioStream {
  std::vector<double> samples;
  int sample_rate = 16000;
  AudioRole role = AudioRole::kClean;

  int64_t Size() const { return static_cast<int64_t>(samples.size()); }
};

/// Per-column mean and population standard deviation.
struct ZscoreStats {
  std::vector<double> mean;
  std::vector<double> std;
};

enum class FeatureKind { kMasks, kStftLogMag, kSuppressionMask, kRawScores };

std::string FeatureKindName(FeatureKind kind);
FeatureKind ParseFeatureKind(const std::string &name);

/// Real-valued alternative feature matrix, L x D.
struct BaselineFeatures {
  FeatureKind kind = FeatureKind::kStftLogMag;
  Eigen::MatrixXd values;
  std::optional<ZscoreStats> zscore;
};

}  // namespace maskprobe

#endif  // MASKPROBE_CORE_H_
