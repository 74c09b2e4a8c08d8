// maskprobe/targets.h

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

// Ground-truth series on the STFT frame grid: energy-envelope VAD, per-frame
// SNR, windowed SI-SDR, squared-Hann upsampling of windowed metrics, and
// ingestion of externally computed series (PESQ, F0).

#ifndef MASKPROBE_TARGETS_H_
#define MASKPROBE_TARGETS_H_

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskprobe/core.h"

namespace maskprobe {

inline constexpr double kDbFloor = -50.0;
inline constexpr double kDbCeil = 30.0;

struct VadParams {
  int smooth_len = 11;             // frames, odd
  double threshold_db = -40.0;     // relative to the reference level
  double reference_percentile = 95.0;
  int second_smooth_len = 11;      // frames, odd
  double second_threshold = 0.5;

  void Validate() const;
};

/// Windowed metric bookkeeping. Windows start every
/// window_len * (1 - overlap) seconds and must fit inside the stream.
struct WindowedMetricConfig {
  double window_len = 1.0;  // seconds
  double overlap = 0.75;
  double pad = 0.0;         // seconds of silence added on both ends (PESQ)
  bool clamp = true;        // clamp to [kDbFloor, kDbCeil]

  void Validate() const;
  static WindowedMetricConfig SiSdr() { return {1.0, 0.75, 0.0, true}; }
  static WindowedMetricConfig Pesq() { return {3.0, 0.75, 0.5, false}; }
};

/// One analysis window of a windowed metric, in samples of the stream.
struct MetricWindow {
  int64_t start = 0;
  int64_t end = 0;  // exclusive
  int64_t pad = 0;  // silence samples to prepend and append before scoring
};

/// Window schedule over a stream of `num_samples` samples.
/// Throws DataError if not even one window fits.
std::vector<MetricWindow> WindowSchedule(const WindowedMetricConfig &cfg,
                                         int64_t num_samples, int sample_rate);

/// Per-frame RMS over each STFT frame. Throws DataError if the stream is
/// shorter than one window.
std::vector<double> RmsEnvelope(std::span<const double> samples,
                                const StftConfig &cfg);

/// Centred moving average of odd length; edge frames average over the part
/// of the window that lies inside the signal.
std::vector<double> ZeroPhaseMovingAverage(std::span<const double> x, int len);

/// Percentile with linear interpolation between order statistics.
double Percentile(std::vector<double> x, double pct);

/// Two-stage smoothed energy threshold:
/// smooth -> compare to ref * 10^(threshold_db / 20) -> smooth the 0/1
/// decisions -> compare to second_threshold. ref is the configured
/// percentile of the raw RMS, so the output is invariant to global gain.
TargetSeries VadFromEnvelope(std::span<const double> rms,
                             const VadParams &params = {});

/// 20 log10(rms_s / rms_n) clamped to [-50, 30]; silent speech gives -50,
/// otherwise silent noise gives 30.
TargetSeries FrameSnr(std::span<const double> rms_s,
                      std::span<const double> rms_n,
                      const std::string &name = "snr");

/// Scale-invariant SDR of est against ref on one window, in dB.
/// A silent reference yields kDbFloor.
double SiSdr(std::span<const double> ref, std::span<const double> est,
             bool clamp = true);

/// SI-SDR per window of the schedule.
std::vector<double> WindowedSiSdr(const AudioStream &ref, const AudioStream &est,
                                  const WindowedMetricConfig &cfg);

/// Squared-Hann interpolation of per-window values onto the frame grid.
/// Window k contributes hann^2((t_l - start_k) / W) at frame centre t_l;
/// frames outside every window support take the nearest window's value.
TargetSeries UpsampleWindowed(std::span<const double> values,
                              const WindowedMetricConfig &cfg,
                              const StftConfig &stft, int64_t num_frames,
                              const std::string &name);

/// Reads a per-frame sidecar CSV produced by an external tool.
/// When zero_is_invalid is set (F0), frames with value 0 are marked invalid.
TargetSeries IngestExternalTarget(const std::filesystem::path &csv,
                                  const std::string &name, TargetKind kind,
                                  int num_classes,
                                  std::optional<std::pair<double, double>> iqr,
                                  int64_t num_frames, bool zero_is_invalid);

/// Reads per-window values ("window,value" CSV) for a given schedule.
std::vector<double> ReadWindowValues(const std::filesystem::path &csv,
                                     size_t num_windows);

/// valid := valid AND vad. Throws DataError unless vad is binary and of
/// equal length.
TargetSeries GateByVad(const TargetSeries &ts, const TargetSeries &vad);

/// Interquartile ranges used to normalise regression errors.
std::optional<std::pair<double, double>> DefaultIqr(const std::string &target);

/// Canonical target roster in table order:
/// vad, gender, accent, noise, snr_in, snr_enh, sisdr_in, sisdr_enh,
/// pesq_in, pesq_enh, f0.
const std::vector<std::string> &TargetRoster();
/// Position in TargetRoster, or -1.
int RosterRank(const std::string &target);

}  // namespace maskprobe

#endif  // MASKPROBE_TARGETS_H_
