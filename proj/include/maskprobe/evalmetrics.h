// maskprobe/evalmetrics.h

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

#ifndef MASKPROBE_EVALMETRICS_H_
#define MASKPROBE_EVALMETRICS_H_

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskprobe/probes.h"

namespace maskprobe {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> roc_auc;  // absent when truth has a single class
  int64_t frames = 0;
};

/// Scores only valid frames. `scores` has one column for binary targets
/// (higher means class 1) or K columns for multi-class targets (one-vs-rest
/// AUC, macro-averaged over classes that have positives and negatives).
/// F1 is macro-averaged over classes present in truth or prediction.
ClassificationMetrics EvaluateClassification(std::span<const int> predicted,
                                             const Eigen::MatrixXd &scores,
                                             const TargetSeries &truth);

/// Area under the ROC curve via the Mann-Whitney statistic; tied scores
/// earn half credit.
double RocAuc(std::span<const double> scores, std::span<const uint8_t> positive);

struct RegressionMetrics {
  std::optional<double> r2;  // absent for zero-variance truth
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mae_over_iqr;
  std::optional<double> rmse_over_iqr;
  int64_t frames = 0;
};

RegressionMetrics EvaluateRegression(std::span<const double> predicted,
                                     const TargetSeries &truth);

struct Heatmap {
  std::vector<std::string> row_labels;  // target or target.class
  std::vector<int> channels;            // flat channel per column
  std::vector<int> blocks;              // processing block per column
  Eigen::MatrixXd values;
  std::vector<std::string> zero_rows;   // rows that were all-zero
};

/// Coefficients of the selected feature positions, multiplied by each
/// feature's standard deviation and scaled to unit L2 norm per row. Columns
/// are grouped by processing block (ascending block, then channel).
Heatmap HeatmapRows(const std::vector<ProbeModel> &models,
                    std::span<const double> feature_std,
                    std::span<const int> positions);

struct Pca {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // k x D, orthonormal rows
  Eigen::VectorXd explained_variance;
  int degenerate = 0;          // trailing components with zero variance

  Eigen::MatrixXd Project(const Eigen::MatrixXd &X) const;
};

/// Eigendecomposition of the sample covariance of mean-centred X; components
/// sorted by descending variance, each signed so that its largest-magnitude
/// entry is positive. Requires rows > k.
Pca PcaFit(const Eigen::MatrixXd &X, int k);

/// floor(fraction * rows) distinct row indices, ascending, chosen uniformly
/// with the seed.
std::vector<int64_t> SubsampleFrames(int64_t rows, double fraction, uint64_t seed);

nlohmann::json ToJson(const ClassificationMetrics &m);
nlohmann::json ToJson(const RegressionMetrics &m);

/// Evaluates a model on a feature matrix in its own feature space.
nlohmann::json EvaluateModel(const ProbeModel &model, const Eigen::MatrixXd &X,
                             const TargetSeries &truth);

}  // namespace maskprobe

#endif  // MASKPROBE_EVALMETRICS_H_
