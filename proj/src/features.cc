// src/features.cc

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

#include "maskprobe/features.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>

namespace maskprobe {

std::vector<double> ColumnStd(const BitMatrix &bits) {
  const int64_t L = bits.Rows(), C = bits.Cols();
  std::vector<int64_t> ones(C, 0);
  for (int64_t l = 0; l < L; ++l) {
    auto row = bits.Row(l);
    for (int64_t c = 0; c < C; ++c) ones[c] += row[c];
  }
  // For 0/1 data the population variance is p (1 - p).
  std::vector<double> out(C);
  for (int64_t c = 0; c < C; ++c) {
    const double p = static_cast<double>(ones[c]) / static_cast<double>(L);
    out[c] = std::sqrt(p * (1.0 - p));
  }
  return out;
}

FilteredMasks FilterMasks(const MaskTensor &masks, double tau) {
  if (masks.NumFrames() < 2)
    throw DataError("filter_masks: need at least 2 frames to estimate spread");
  if (masks.bits.Cols() != masks.NumChannels())
    throw DataError("filter_masks: mask width does not match I * C_res");
  const std::vector<double> sd = ColumnStd(masks.bits);
  FilteredMasks out;
  out.source_blocks = masks.num_blocks;
  out.source_channels_per_block = masks.channels_per_block;
  out.tau = tau;
  for (int c = 0; c < masks.NumChannels(); ++c) {
    if (sd[c] > tau) {
      out.channel_map.push_back(c);
      out.channel_std.push_back(sd[c]);
    }
  }
  out.bits = masks.bits.SelectCols(out.channel_map);
  return out;
}

FilteredMasks ApplyChannelMap(const MaskTensor &masks, const FilteredMasks &fitted) {
  if (masks.num_blocks != fitted.source_blocks ||
      masks.channels_per_block != fitted.source_channels_per_block)
    throw DataError("apply_channel_map: mask geometry " + std::to_string(masks.num_blocks) + "x" +
                    std::to_string(masks.channels_per_block) + " differs from the fitted " +
                    std::to_string(fitted.source_blocks) + "x" +
                    std::to_string(fitted.source_channels_per_block));
  FilteredMasks out = fitted;
  out.bits = masks.bits.SelectCols(fitted.channel_map);
  return out;
}

FilteredMasks RestrictBlocks(const FilteredMasks &masks, const std::set<int> &blocks) {
  for (int b : blocks)
    if (b < 0 || b >= masks.source_blocks)
      throw DataError("restrict_blocks: block " + std::to_string(b) +
                      " out of range (I = " + std::to_string(masks.source_blocks) + ")");
  std::vector<int> keep;
  for (int j = 0; j < masks.NumKept(); ++j)
    if (blocks.count(masks.BlockOf(j))) keep.push_back(j);
  if (keep.empty()) throw DataError("restrict_blocks: no kept channel in the selected blocks");
  return masks.Subset(keep);
}

std::vector<int> RankFeatures(const std::vector<ProbeModel> &models,
                              std::span<const double> feature_std) {
  if (models.empty()) throw DataError("rank_features: no models");
  const int d = models.front().Dim();
  Eigen::VectorXd score2 = Eigen::VectorXd::Zero(d);
  for (const auto &m : models) {
    if (m.Dim() != d)
      throw DataError("rank_features: model '" + m.target + "' has " +
                      std::to_string(m.Dim()) + " features, expected " +
                      std::to_string(d));
    const Eigen::MatrixXd rows = NormalizedCoefficients(m, feature_std);
    score2 += rows.colwise().squaredNorm().transpose();
  }
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return score2(a) > score2(b); });
  return order;
}

namespace {

// FFTW planning is not thread-safe.
std::mutex g_fftw_mutex;

struct PlanDeleter {
  void operator()(fftw_plan_s *p) const {
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    fftw_destroy_plan(p);
  }
};

}  // namespace

Eigen::MatrixXd StftMagnitudes(std::span<const double> samples, const StftConfig &cfg) {
  cfg.Validate();
  const int64_t frames = cfg.FrameCount(static_cast<int64_t>(samples.size()));
  if (frames == 0) throw DataError("stft: stream shorter than one window");
  const int n = cfg.fft_size, bins = cfg.BinCount();

  std::vector<double> window(cfg.window_len);
  for (int i = 0; i < cfg.window_len; ++i) {
    const double s = std::sin(M_PI * i / cfg.window_len);
    window[i] = s * s;  // periodic Hann
  }

  double *in = fftw_alloc_real(n);
  fftw_complex *out = fftw_alloc_complex(bins);
  std::unique_ptr<fftw_plan_s, PlanDeleter> plan;
  {
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    plan.reset(fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE));
  }
  Eigen::MatrixXd mag(frames, bins);
  for (int64_t l = 0; l < frames; ++l) {
    const double *p = samples.data() + l * cfg.hop_len;
    for (int i = 0; i < cfg.window_len; ++i) in[i] = p[i] * window[i];
    std::fill(in + cfg.window_len, in + n, 0.0);
    fftw_execute(plan.get());
    for (int k = 0; k < bins; ++k) mag(l, k) = std::hypot(out[k][0], out[k][1]);
  }
  plan.reset();
  fftw_free(in);
  fftw_free(out);
  return mag;
}

BaselineFeatures StftLogMag(const AudioStream &x, const StftConfig &cfg,
                            const ZscoreStats *fit_stats) {
  Eigen::MatrixXd logmag = (StftMagnitudes(x.samples, cfg).array() + 1e-9).log();
  BaselineFeatures f;
  f.kind = FeatureKind::kStftLogMag;
  ZscoreStats stats;
  f.values = Zscore(logmag, fit_stats, &stats);
  f.zscore = std::move(stats);
  return f;
}

Eigen::MatrixXd Zscore(const Eigen::MatrixXd &X, const ZscoreStats *fit_stats,
                       ZscoreStats *stats_out) {
  ZscoreStats stats;
  if (fit_stats) {
    if (static_cast<Eigen::Index>(fit_stats->mean.size()) != X.cols() ||
        fit_stats->std.size() != fit_stats->mean.size())
      throw DataError("zscore: statistics have " + std::to_string(fit_stats->mean.size()) +
                      " columns, matrix has " + std::to_string(X.cols()));
    stats = *fit_stats;
  } else {
    if (X.rows() < 2) throw DataError("zscore: need at least 2 rows to fit statistics");
    stats.mean.resize(X.cols());
    stats.std.resize(X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double mean = X.col(c).mean();
      const double var = (X.col(c).array() - mean).square().mean();
      double sd = std::sqrt(var);
      // A constant column can leave rounding-level spread behind.
      if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) sd = 0.0;
      stats.mean[c] = mean;
      stats.std[c] = sd;
    }
  }
  Eigen::MatrixXd out(X.rows(), X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    if (stats.std[c] == 0.0)
      out.col(c).setZero();
    else
      out.col(c) = (X.col(c).array() - stats.mean[c]) / stats.std[c];
  }
  if (stats_out) *stats_out = std::move(stats);
  return out;
}

}  // namespace maskprobe
