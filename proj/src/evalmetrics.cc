// src/evalmetrics.cc

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

#include "maskprobe/evalmetrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace maskprobe {

using nlohmann::json;

double RocAuc(std::span<const double> scores, std::span<const uint8_t> positive) {
  const size_t n = scores.size();
  if (positive.size() != n) throw DataError("roc_auc: length mismatch");
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // Average ranks over ties (1-based).
  double pos_rank_sum = 0.0;
  int64_t n_pos = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t t = i; t <= j; ++t)
      if (positive[idx[t]]) {
        pos_rank_sum += rank;
        ++n_pos;
      }
    i = j + 1;
  }
  const int64_t n_neg = static_cast<int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("roc_auc: needs both classes");
  const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ClassificationMetrics EvaluateClassification(std::span<const int> predicted,
                                             const Eigen::MatrixXd &scores,
                                             const TargetSeries &truth) {
  const int64_t L = truth.Length();
  if (static_cast<int64_t>(predicted.size()) != L || scores.rows() != L)
    throw DataError("classification metrics: length mismatch for '" + truth.name + "'");
  const int K = truth.num_classes;
  if (!(scores.cols() == 1 && K == 2) && scores.cols() != K)
    throw DataError("classification metrics: score width does not match class count");

  std::vector<int64_t> rows;
  for (int64_t l = 0; l < L; ++l)
    if (truth.valid[l]) rows.push_back(l);
  if (rows.empty()) throw DataError("classification metrics: no valid frames for '" + truth.name + "'");

  ClassificationMetrics m;
  m.frames = static_cast<int64_t>(rows.size());
  std::vector<int64_t> tp(K, 0), fp(K, 0), fn(K, 0), support(K, 0);
  int64_t correct = 0;
  for (int64_t l : rows) {
    const int t = static_cast<int>(truth.values[l]), p = predicted[l];
    if (p < 0 || p >= K) throw DataError("classification metrics: predicted class out of range");
    ++support[t];
    if (t == p) {
      ++correct;
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());

  double f1_sum = 0.0;
  int f1_classes = 0;
  for (int k = 0; k < K; ++k) {
    if (support[k] == 0 && fp[k] == 0) continue;
    const double denom = 2.0 * tp[k] + fp[k] + fn[k];
    f1_sum += denom > 0 ? 2.0 * tp[k] / denom : 0.0;
    ++f1_classes;
  }
  m.macro_f1 = f1_classes ? f1_sum / f1_classes : 0.0;

  const int present = static_cast<int>(
      std::count_if(support.begin(), support.end(), [](int64_t s) { return s > 0; }));
  if (present >= 2) {
    std::vector<double> s(rows.size());
    std::vector<uint8_t> pos(rows.size());
    if (scores.cols() == 1) {
      for (size_t i = 0; i < rows.size(); ++i) {
        s[i] = scores(rows[i], 0);
        pos[i] = truth.values[rows[i]] == 1.0;
      }
      m.roc_auc = RocAuc(s, pos);
    } else {
      double auc_sum = 0.0;
      int auc_classes = 0;
      for (int k = 0; k < K; ++k) {
        if (support[k] == 0 || support[k] == m.frames) continue;
        for (size_t i = 0; i < rows.size(); ++i) {
          s[i] = scores(rows[i], k);
          pos[i] = truth.values[rows[i]] == k;
        }
        auc_sum += RocAuc(s, pos);
        ++auc_classes;
      }
      m.roc_auc = auc_sum / auc_classes;
    }
  }
  return m;
}

RegressionMetrics EvaluateRegression(std::span<const double> predicted,
                                     const TargetSeries &truth) {
  const int64_t L = truth.Length();
  if (static_cast<int64_t>(predicted.size()) != L)
    throw DataError("regression metrics: length mismatch for '" + truth.name + "'");
  double sum = 0.0;
  int64_t n = 0;
  for (int64_t l = 0; l < L; ++l)
    if (truth.valid[l]) {
      sum += truth.values[l];
      ++n;
    }
  if (n < 2) throw DataError("regression metrics: fewer than 2 valid frames for '" + truth.name + "'");
  const double mean = sum / n;
  double abs_err = 0.0, sq_err = 0.0, ss_tot = 0.0;
  for (int64_t l = 0; l < L; ++l) {
    if (!truth.valid[l]) continue;
    const double e = predicted[l] - truth.values[l];
    abs_err += std::abs(e);
    sq_err += e * e;
    const double d = truth.values[l] - mean;
    ss_tot += d * d;
  }
  RegressionMetrics m;
  m.frames = n;
  m.mae = abs_err / n;
  m.rmse = std::sqrt(sq_err / n);
  if (ss_tot > 0) m.r2 = 1.0 - sq_err / ss_tot;
  if (truth.iqr) {
    const double range = truth.iqr->second - truth.iqr->first;
    if (range > 0) {
      m.mae_over_iqr = m.mae / range;
      m.rmse_over_iqr = m.rmse / range;
    }
  }
  return m;
}

Heatmap HeatmapRows(const std::vector<ProbeModel> &models,
                    std::span<const double> feature_std,
                    std::span<const int> positions) {
  if (models.empty()) throw DataError("heatmap: no models");
  const FeatureSpace &space = models.front().feature_space;
  const int d = models.front().Dim();
  for (int p : positions)
    if (p < 0 || p >= d) throw DataError("heatmap: feature position outside the model");

  std::vector<int> cols(positions.begin(), positions.end());
  auto channel_of = [&](int p) {
    return space.channel_map.empty() ? p : space.channel_map[p];
  };
  auto block_of = [&](int p) {
    return space.source_channels_per_block > 0 ? channel_of(p) / space.source_channels_per_block
                                               : 0;
  };
  std::stable_sort(cols.begin(), cols.end(), [&](int a, int b) {
    return std::make_pair(block_of(a), channel_of(a)) < std::make_pair(block_of(b), channel_of(b));
  });

  Heatmap h;
  for (int p : cols) {
    h.channels.push_back(channel_of(p));
    h.blocks.push_back(block_of(p));
  }
  std::vector<Eigen::RowVectorXd> rows;
  for (const auto &m : models) {
    if (m.Dim() != d) throw DataError("heatmap: models differ in feature dimension");
    for (int k = 0; k < m.OutputCount(); ++k) {
      Eigen::RowVectorXd r(cols.size());
      for (size_t j = 0; j < cols.size(); ++j) r(j) = m.weights(k, cols[j]) * feature_std[cols[j]];
      const double norm = r.norm();
      std::string label = m.target;
      if (m.OutputCount() > 1)
        label += "." + (k < static_cast<int>(m.class_names.size()) ? m.class_names[k]
                                                                   : std::to_string(k));
      if (norm > 0)
        r /= norm;
      else
        h.zero_rows.push_back(label);
      h.row_labels.push_back(label);
      rows.push_back(r);
    }
  }
  h.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (size_t i = 0; i < rows.size(); ++i) h.values.row(i) = rows[i];
  return h;
}

Eigen::MatrixXd Pca::Project(const Eigen::MatrixXd &X) const {
  if (X.cols() != mean.size()) throw DataError("pca_project: dimension mismatch");
  return (X.rowwise() - mean) * components.transpose();
}

Pca PcaFit(const Eigen::MatrixXd &X, int k) {
  if (k < 1 || k > X.cols()) throw DataError("pca_fit: k must lie in [1, D]");
  if (X.rows() <= k) throw DataError("pca_fit: need more rows than components");
  Pca p;
  p.mean = X.colwise().mean();
  const Eigen::MatrixXd centred = X.rowwise() - p.mean;
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(X.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw DataError("pca_fit: eigendecomposition failed");
  // Eigen sorts ascending.
  const Eigen::Index D = X.cols();
  p.components.resize(k, D);
  p.explained_variance.resize(k);
  const double tol = 1e-12 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd v = eig.eigenvectors().col(D - 1 - i);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.components.row(i) = v.transpose();
    double lambda = eig.eigenvalues()(D - 1 - i);
    if (lambda <= tol) {
      lambda = std::max(lambda, 0.0);
      ++p.degenerate;
    }
    p.explained_variance(i) = lambda;
  }
  return p;
}

std::vector<int64_t> SubsampleFrames(int64_t rows, double fraction, uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw DataError("subsample: fraction must lie in (0, 1]");
  const int64_t count = static_cast<int64_t>(std::floor(fraction * static_cast<double>(rows)));
  std::vector<int64_t> idx(rows);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (int64_t i = 0; i < count; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.Below(static_cast<uint64_t>(rows - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

json Opt(const std::optional<double> &v) { return v ? json(*v) : json(); }

}  // namespace

json ToJson(const ClassificationMetrics &m) {
  return {{"accuracy", m.accuracy},
          {"macro_f1", m.macro_f1},
          {"roc_auc", Opt(m.roc_auc)},
          {"frames", m.frames},
          {"averaging", "macro; one-vs-rest AUC for K > 2"}};
}

json ToJson(const RegressionMetrics &m) {
  return {{"r2", Opt(m.r2)},
          {"mae", m.mae},
          {"rmse", m.rmse},
          {"mae_over_iqr", Opt(m.mae_over_iqr)},
          {"rmse_over_iqr", Opt(m.rmse_over_iqr)},
          {"frames", m.frames}};
}

json EvaluateModel(const ProbeModel &model, const Eigen::MatrixXd &X,
                   const TargetSeries &truth) {
  if (X.cols() != model.Dim())
    throw DataError("evaluate: features do not match model '" + model.target + "'");
  const Eigen::MatrixXd scores =
      (X * model.weights.transpose()).rowwise() + model.bias.transpose();
  json j = {{"target", model.target}, {"kind", TargetKindName(model.kind)}};
  if (model.kind == TargetKind::kContinuous) {
    std::vector<double> pred(scores.col(0).data(), scores.col(0).data() + scores.rows());
    j["metrics"] = ToJson(EvaluateRegression(pred, truth));
  } else {
    std::vector<int> pred(X.rows());
    for (Eigen::Index l = 0; l < X.rows(); ++l)
      pred[l] = PredictFrame(model, X.row(l).transpose()).label;
    j["metrics"] = ToJson(EvaluateClassification(pred, scores, truth));
  }
  return j;
}

}  // namespace maskprobe
