// maskprobe/features.h

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

#ifndef MASKPROBE_FEATURES_H_
#define MASKPROBE_FEATURES_H_

#include <set>
#include <span>
#include <vector>

#include "maskprobe/core.h"
#include "maskprobe/probes.h"

namespace maskprobe {

/// Population (1/L) standard deviation of every column.
std::vector<double> ColumnStd(const BitMatrix &bits);

/// Keeps the flat channels whose population standard deviation over the L
/// frames exceeds tau. Throws DataError when L < 2.
FilteredMasks FilterMasks(const MaskTensor &masks, double tau);

/// Selects the channels of `fitted` from a new mask tensor of the same
/// geometry, carrying over the fitted statistics (train-time filtering
/// applied to test data).
FilteredMasks ApplyChannelMap(const MaskTensor &masks, const FilteredMasks &fitted);

/// Keeps the kept channels that belong to the given processing blocks.
/// Throws DataError for block ids >= I or an empty result.
FilteredMasks RestrictBlocks(const FilteredMasks &masks, const std::set<int> &blocks);

/// Feature positions (0..D-1) ordered by informativeness: the L2 norm, over
/// every output row of every model, of the std-scaled unit-norm
/// coefficients. Descending score, ties by ascending position.
std::vector<int> RankFeatures(const std::vector<ProbeModel> &models,
                              std::span<const double> feature_std);

/// Magnitude STFT with a periodic Hann analysis window, zero-padded to
/// fft_size: L x (fft_size / 2 + 1).
Eigen::MatrixXd StftMagnitudes(std::span<const double> samples, const StftConfig &cfg);

/// log(|STFT| + 1e-9), z-scored with statistics fitted on this stream unless
/// fit_stats is given.
BaselineFeatures StftLogMag(const AudioStream &x, const StftConfig &cfg,
                            const ZscoreStats *fit_stats = nullptr);

/// Column-wise z-score. Fits statistics (population std) when fit_stats is
/// null; columns with zero spread map to all zeros.
Eigen::MatrixXd Zscore(const Eigen::MatrixXd &X, const ZscoreStats *fit_stats,
                       ZscoreStats *stats_out);

}  // namespace maskprobe

#endif  // MASKPROBE_FEATURES_H_
