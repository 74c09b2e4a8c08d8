// src/targets.cc

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

#include "maskprobe/targets.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "maskprobe/io.h"

namespace maskprobe {

void VadParams::Validate() const {
  if (smooth_len < 1 || smooth_len % 2 == 0 || second_smooth_len < 1 ||
      second_smooth_len % 2 == 0)
    throw ConfigError("vad: smoothing lengths must be odd and >= 1");
  if (!(threshold_db < 0))
    throw ConfigError("vad: threshold_db must be negative");
  if (!(second_threshold > 0 && second_threshold < 1))
    throw ConfigError("vad: second_threshold must lie in (0, 1)");
  if (!(reference_percentile > 0 && reference_percentile <= 100))
    throw ConfigError("vad: reference percentile must lie in (0, 100]");
}

void WindowedMetricConfig::Validate() const {
  if (!(window_len > 0)) throw ConfigError("windowed metric: window_len must be > 0");
  if (!(overlap >= 0 && overlap < 1))
    throw ConfigError("windowed metric: overlap must lie in [0, 1)");
  if (!(pad >= 0)) throw ConfigError("windowed metric: pad must be >= 0");
}

namespace {

struct WindowGeometry {
  int64_t win = 0;
  int64_t hop = 0;
  int64_t pad = 0;
};

WindowGeometry Geometry(const WindowedMetricConfig &cfg, int sample_rate) {
  cfg.Validate();
  WindowGeometry g;
  g.win = std::llround(cfg.window_len * sample_rate);
  g.hop = std::llround(cfg.window_len * (1.0 - cfg.overlap) * sample_rate);
  g.pad = std::llround(cfg.pad * sample_rate);
  if (g.win <= 0 || g.hop <= 0)
    throw ConfigError("windowed metric: window or hop rounds to zero samples");
  return g;
}

double ClampDb(double v) { return std::clamp(v, kDbFloor, kDbCeil); }

}  // namespace

std::vector<MetricWindow> WindowSchedule(const WindowedMetricConfig &cfg,
                                         int64_t num_samples, int sample_rate) {
  const WindowGeometry g = Geometry(cfg, sample_rate);
  if (num_samples < g.win)
    throw DataError("windowed metric: stream of " + std::to_string(num_samples) +
                    " samples is shorter than one " + std::to_string(g.win) +
                    "-sample window");
  std::vector<MetricWindow> out;
  for (int64_t a = 0; a + g.win <= num_samples; a += g.hop)
    out.push_back({a, a + g.win, g.pad});
  return out;
}

std::vector<double> RmsEnvelope(std::span<const double> samples,
                                const StftConfig &cfg) {
  cfg.Validate();
  const int64_t frames = cfg.FrameCount(static_cast<int64_t>(samples.size()));
  if (frames == 0)
    throw DataError("rms_envelope: stream shorter than one window");
  std::vector<double> rms(frames);
  for (int64_t l = 0; l < frames; ++l) {
    double acc = 0.0;
    const double *p = samples.data() + l * cfg.hop_len;
    for (int i = 0; i < cfg.window_len; ++i) acc += p[i] * p[i];
    rms[l] = std::sqrt(acc / cfg.window_len);
  }
  return rms;
}

std::vector<double> ZeroPhaseMovingAverage(std::span<const double> x, int len) {
  if (len < 1 || len % 2 == 0)
    throw ConfigError("moving average length must be odd and >= 1");
  const int64_t n = static_cast<int64_t>(x.size()), half = len / 2;
  std::vector<double> y(n);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t a = std::max<int64_t>(0, i - half);
    const int64_t b = std::min<int64_t>(n - 1, i + half);
    double acc = 0.0;
    for (int64_t j = a; j <= b; ++j) acc += x[j];
    y[i] = acc / static_cast<double>(b - a + 1);
  }
  return y;
}

double Percentile(std::vector<double> x, double pct) {
  if (x.empty()) throw DataError("percentile of an empty vector");
  std::sort(x.begin(), x.end());
  const double pos = pct / 100.0 * static_cast<double>(x.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

TargetSeries VadFromEnvelope(std::span<const double> rms,
                             const VadParams &params) {
  params.Validate();
  if (rms.empty()) throw DataError("vad: empty envelope");
  TargetSeries vad;
  vad.name = "vad";
  vad.kind = TargetKind::kBinary;
  vad.num_classes = 2;
  vad.class_names = {"silence", "speech"};
  vad.values.assign(rms.size(), 0.0);
  vad.valid.assign(rms.size(), 1);

  const double ref = Percentile({rms.begin(), rms.end()}, params.reference_percentile);
  if (!(ref > 0)) return vad;  // all silence
  const double level = ref * std::pow(10.0, params.threshold_db / 20.0);

  std::vector<double> smooth = ZeroPhaseMovingAverage(rms, params.smooth_len);
  std::vector<double> coarse(rms.size());
  for (size_t l = 0; l < rms.size(); ++l) coarse[l] = smooth[l] > level ? 1.0 : 0.0;
  std::vector<double> fine = ZeroPhaseMovingAverage(coarse, params.second_smooth_len);
  for (size_t l = 0; l < rms.size(); ++l)
    vad.values[l] = fine[l] > params.second_threshold ? 1.0 : 0.0;
  return vad;
}

TargetSeries FrameSnr(std::span<const double> rms_s,
                      std::span<const double> rms_n, const std::string &name) {
  if (rms_s.size() != rms_n.size())
    throw DataError("frame_snr: length mismatch (" + std::to_string(rms_s.size()) +
                    " vs " + std::to_string(rms_n.size()) + ")");
  TargetSeries ts;
  ts.name = name;
  ts.kind = TargetKind::kContinuous;
  ts.values.resize(rms_s.size());
  ts.valid.assign(rms_s.size(), 1);
  for (size_t l = 0; l < rms_s.size(); ++l) {
    if (rms_s[l] == 0.0)
      ts.values[l] = kDbFloor;
    else if (rms_n[l] == 0.0)
      ts.values[l] = kDbCeil;
    else
      ts.values[l] = ClampDb(20.0 * std::log10(rms_s[l] / rms_n[l]));
  }
  ts.iqr = DefaultIqr(name);
  return ts;
}

double SiSdr(std::span<const double> ref, std::span<const double> est,
             bool clamp) {
  if (ref.size() != est.size()) throw DataError("si-sdr: length mismatch");
  double dot = 0.0, ref_energy = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    dot += est[i] * ref[i];
    ref_energy += ref[i] * ref[i];
  }
  if (ref_energy == 0.0) return kDbFloor;
  const double alpha = dot / ref_energy;
  double target = 0.0, residual = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double t = alpha * ref[i];
    const double e = est[i] - t;
    target += t * t;
    residual += e * e;
  }
  double db;
  if (residual == 0.0)
    db = target == 0.0 ? kDbFloor : kDbCeil;
  else if (target == 0.0)
    db = kDbFloor;
  else
    db = 10.0 * std::log10(target / residual);
  return clamp ? ClampDb(db) : db;
}

std::vector<double> WindowedSiSdr(const AudioStream &ref, const AudioStream &est,
                                  const WindowedMetricConfig &cfg) {
  if (ref.Size() != est.Size() || ref.sample_rate != est.sample_rate)
    throw DataError("windowed si-sdr: reference and estimate differ in length or rate");
  auto windows = WindowSchedule(cfg, ref.Size(), ref.sample_rate);
  std::vector<double> out;
  out.reserve(windows.size());
  size_t degenerate = 0;
  for (const auto &w : windows) {
    std::span<const double> r(ref.samples.data() + w.start, w.end - w.start);
    std::span<const double> e(est.samples.data() + w.start, w.end - w.start);
    bool silent = std::all_of(r.begin(), r.end(), [](double v) { return v == 0.0; });
    degenerate += silent;
    out.push_back(SiSdr(r, e, cfg.clamp));
  }
  if (degenerate)
    spdlog::warn("windowed si-sdr: {} of {} windows have a silent reference (set to {} dB)",
                 degenerate, windows.size(), kDbFloor);
  return out;
}

TargetSeries UpsampleWindowed(std::span<const double> values,
                              const WindowedMetricConfig &cfg,
                              const StftConfig &stft, int64_t num_frames,
                              const std::string &name) {
  if (values.empty()) throw DataError("upsample_windowed: no window values");
  stft.Validate();
  const WindowGeometry g = Geometry(cfg, stft.sample_rate);
  const double W = static_cast<double>(g.win);

  TargetSeries ts;
  ts.name = name;
  ts.kind = TargetKind::kContinuous;
  ts.values.assign(num_frames, 0.0);
  ts.valid.assign(num_frames, 1);
  ts.iqr = DefaultIqr(name);

  const int64_t nwin = static_cast<int64_t>(values.size());
  for (int64_t l = 0; l < num_frames; ++l) {
    const double centre = l * stft.hop_len + 0.5 * stft.window_len;
    // Only windows whose support can contain the centre.
    const int64_t k_hi = std::min<int64_t>(
        nwin - 1, static_cast<int64_t>(std::floor(centre / g.hop)));
    const int64_t k_lo = std::max<int64_t>(
        0, static_cast<int64_t>(std::floor((centre - W) / g.hop)));
    double num = 0.0, den = 0.0;
    for (int64_t k = k_lo; k <= k_hi; ++k) {
      const double u = (centre - static_cast<double>(k * g.hop)) / W;
      if (u <= 0.0 || u >= 1.0) continue;
      const double s = std::sin(M_PI * u);
      const double w = s * s * s * s;  // hann(u)^2
      num += values[k] * w;
      den += w;
    }
    if (den > 0.0) {
      ts.values[l] = num / den;
    } else {
      int64_t best = 0;
      double best_d = INFINITY;
      for (int64_t k = 0; k < nwin; ++k) {
        const double d = std::abs(centre - (k * g.hop + 0.5 * W));
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      ts.values[l] = values[best];
    }
  }
  return ts;
}

TargetSeries IngestExternalTarget(const std::filesystem::path &csv,
                                  const std::string &name, TargetKind kind,
                                  int num_classes,
                                  std::optional<std::pair<double, double>> iqr,
                                  int64_t num_frames, bool zero_is_invalid) {
  TargetSeries ts;
  ts.name = name;
  ts.kind = kind;
  ts.num_classes = kind == TargetKind::kContinuous ? 0
                   : kind == TargetKind::kBinary   ? 2
                                                   : num_classes;
  ts.iqr = iqr;
  ReadTargetCsv(csv, num_frames, &ts.values, &ts.valid);
  if (zero_is_invalid)
    for (size_t l = 0; l < ts.values.size(); ++l)
      if (ts.values[l] == 0.0) ts.valid[l] = 0;
  ts.Validate();
  return ts;
}

std::vector<double> ReadWindowValues(const std::filesystem::path &csv,
                                     size_t num_windows) {
  CsvTable t = ReadCsv(csv);
  const int wcol = t.Column("window"), vcol = t.Column("value");
  if (wcol < 0 || vcol < 0)
    throw DataError("'" + csv.string() + "': header must contain window,value");
  if (t.rows.size() != num_windows)
    throw DataError("'" + csv.string() + "': " + std::to_string(t.rows.size()) +
                    " window values, schedule has " + std::to_string(num_windows));
  std::vector<double> v(num_windows);
  for (size_t k = 0; k < num_windows; ++k) {
    if (ParseDouble(t.rows[k][wcol], csv.string()) != static_cast<double>(k))
      throw DataError("'" + csv.string() + "': windows must be numbered 0..K-1");
    v[k] = ParseDouble(t.rows[k][vcol], csv.string());
  }
  return v;
}

TargetSeries GateByVad(const TargetSeries &ts, const TargetSeries &vad) {
  if (vad.kind != TargetKind::kBinary)
    throw DataError("gate_by_vad: '" + vad.name + "' is not a binary series");
  if (vad.Length() != ts.Length())
    throw DataError("gate_by_vad: length mismatch between '" + ts.name + "' and '" +
                    vad.name + "'");
  TargetSeries out = ts;
  for (int64_t l = 0; l < ts.Length(); ++l)
    out.valid[l] = ts.valid[l] && vad.valid[l] && vad.values[l] == 1.0;
  return out;
}

std::optional<std::pair<double, double>> DefaultIqr(const std::string &target) {
  static const std::map<std::string, std::pair<double, double>> kIqr = {
      {"snr_in", {-13.0, 8.0}},   {"snr_enh", {1.0, 14.0}},
      {"sisdr_in", {-1.0, 10.0}}, {"sisdr_enh", {8.0, 17.0}},
      {"pesq_in", {1.2, 1.7}},    {"pesq_enh", {2.6, 2.9}},
      {"f0", {110.0, 200.0}},
  };
  auto it = kIqr.find(target);
  if (it == kIqr.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string> &TargetRoster() {
  static const std::vector<std::string> kRoster = {
      "vad",      "gender",    "accent",  "noise",    "snr_in", "snr_enh",
      "sisdr_in", "sisdr_enh", "pesq_in", "pesq_enh", "f0"};
  return kRoster;
}

int RosterRank(const std::string &target) {
  const auto &r = TargetRoster();
  auto it = std::find(r.begin(), r.end(), target);
  return it == r.end() ? -1 : static_cast<int>(it - r.begin());
}

}  // namespace maskprobe
