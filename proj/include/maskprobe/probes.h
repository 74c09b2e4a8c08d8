// maskprobe/probes.h

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

// Linear probes: closed-form ridge regression for continuous targets and
// L2-regularised logistic regression (sigmoid for binary, softmax for
// multi-class) for categorical ones. Only frames marked valid in the target
// series take part in fitting.

#ifndef MASKPROBE_PROBES_H_
#define MASKPROBE_PROBES_H_

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskprobe/core.h"
#include "maskprobe/io.h"

namespace maskprobe {

/// Describes the columns a model expects.
struct FeatureSpace {
  FeatureKind kind = FeatureKind::kMasks;
  int dim = 0;
  std::vector<int> channel_map;  // flat mask channels, empty for spectral kinds
  std::vector<double> channel_std;
  int source_blocks = 0;
  int source_channels_per_block = 0;
  std::optional<ZscoreStats> zscore;  // set only for non-binary kinds

  static FeatureSpace FromMasks(const FilteredMasks &masks);
  bool SameAs(const FeatureSpace &other) const;
};

struct FitConfig {
  double alpha = 0.01;
  int max_iters = 2000;
  double grad_tol = 1e-7;
  double ftol = 1e-10;  // relative objective decrease per step
  uint64_t seed = 0;

  void Validate() const;
};

struct SolverInfo {
  std::string solver;
  int iterations = 0;
  bool converged = true;
  double grad_inf_norm = 0.0;
  double objective = 0.0;
  std::string stop = "grad_tol";  // grad_tol, ftol, max_iters or line_search
};

struct ProbeModel {
  std::string target;
  TargetKind kind = TargetKind::kContinuous;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::optional<std::pair<double, double>> iqr;
  /// K_out x D; K_out = 1 for regression and binary, K for multi-class.
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
  double alpha = 0.0;
  FeatureSpace feature_space;
  SolverInfo solver;

  int OutputCount() const { return static_cast<int>(weights.rows()); }
  int Dim() const { return static_cast<int>(weights.cols()); }
};

/// Minimises sum_valid (w.x + b - y)^2 + alpha |w|^2 with an unpenalised
/// bias, via the normal equations on centred data. alpha = 0 with a singular
/// Gram matrix yields the minimum-norm solution.
ProbeModel FitRidge(const Eigen::MatrixXd &X, const TargetSeries &y,
                    const FitConfig &cfg, const FeatureSpace &space);

/// Penalised cross-entropy of a logistic model on the rows of X, flattened
/// parameters [vec(W) (column-major, K_out x D); b (K_out)].
/// K_out = 1 selects the sigmoid form, K_out >= 3 the softmax form.
class LogisticObjective {
 public:
  LogisticObjective(Eigen::MatrixXd X, std::vector<int> labels, int num_outputs,
                    double alpha);

  int NumParams() const { return num_outputs_ * (dim_ + 1); }
  /// Returns sum_i CE_i + (alpha / 2) |W|^2; fills grad if non-null.
  double Evaluate(const Eigen::VectorXd &params, Eigen::VectorXd *grad) const;

  Eigen::MatrixXd Weights(const Eigen::VectorXd &params) const;
  Eigen::VectorXd Bias(const Eigen::VectorXd &params) const;

 private:
  Eigen::MatrixXd x_;
  std::vector<int> labels_;
  int num_outputs_;
  int dim_;
  double alpha_;
};

/// Full-batch L-BFGS with Armijo backtracking from a zero start, stopping
/// when the gradient infinity-norm drops below cfg.grad_tol, when a step
/// lowers the objective by at most cfg.ftol * max(1, |f|), or after
/// cfg.max_iters iterations. If objective_trace is given, it receives the
/// objective at the start and after every accepted step.
ProbeModel FitLogistic(const Eigen::MatrixXd &X, const TargetSeries &y,
                       const FitConfig &cfg, const FeatureSpace &space,
                       std::vector<double> *objective_trace = nullptr);

struct Prediction {
  double value = 0.0;      // regression output, or the predicted class
  int label = -1;          // predicted class (classification only)
  Eigen::VectorXd scores;  // raw linear outputs, K_out entries
};

/// Evaluates one frame given in the model's feature space. Classification
/// ties resolve to the lowest class index.
Prediction PredictFrame(const ProbeModel &model, const Eigen::VectorXd &x);

/// Class probabilities for one frame (2 entries for binary targets).
Eigen::VectorXd ClassProbabilities(const ProbeModel &model,
                                   const Eigen::VectorXd &scores);

struct SuiteResult {
  std::vector<ProbeModel> models;
  std::map<std::string, std::string> failures;
};

/// Fits one model per target. A failing target is recorded and skipped.
SuiteResult TrainSuite(const Eigen::MatrixXd &X, const TargetRegistry &targets,
                       const FitConfig &cfg, const FeatureSpace &space);

/// Coefficients scaled by each feature's standard deviation, then each row
/// scaled to unit L2 norm. All-zero rows stay zero.
Eigen::MatrixXd NormalizedCoefficients(const ProbeModel &model,
                                       std::span<const double> feature_std);

nlohmann::json FeatureSpaceToJson(const FeatureSpace &fs);
FeatureSpace FeatureSpaceFromJson(const nlohmann::json &j);
nlohmann::json ModelToJson(const ProbeModel &m);
ProbeModel ModelFromJson(const nlohmann::json &j);

/// One "<target>.json" per model plus "index.json" listing them in order.
void WriteModels(const std::vector<ProbeModel> &models,
                 const std::filesystem::path &dir);
std::vector<ProbeModel> ReadModels(const std::filesystem::path &dir);

}  // namespace maskprobe

#endif  // MASKPROBE_PROBES_H_
