// src/probes.cc

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

#include "maskprobe/probes.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>

namespace maskprobe {

using nlohmann::json;

FeatureSpace FeatureSpace::FromMasks(const FilteredMasks &masks) {
  FeatureSpace fs;
  fs.kind = FeatureKind::kMasks;
  fs.dim = masks.NumKept();
  fs.channel_map = masks.channel_map;
  fs.channel_std = masks.channel_std;
  fs.source_blocks = masks.source_blocks;
  fs.source_channels_per_block = masks.source_channels_per_block;
  return fs;
}

bool FeatureSpace::SameAs(const FeatureSpace &o) const {
  if (kind != o.kind || dim != o.dim || channel_map != o.channel_map) return false;
  if (zscore.has_value() != o.zscore.has_value()) return false;
  if (zscore && (zscore->mean != o.zscore->mean || zscore->std != o.zscore->std))
    return false;
  return true;
}

void FitConfig::Validate() const {
  if (!(alpha >= 0)) throw ConfigError("fit: alpha must be >= 0");
  if (max_iters < 1) throw ConfigError("fit: max_iters must be >= 1");
  if (!(grad_tol > 0)) throw ConfigError("fit: grad_tol must be > 0");
  if (!(ftol >= 0)) throw ConfigError("fit: ftol must be >= 0");
}

namespace {

std::vector<int64_t> ValidRows(const TargetSeries &y, int64_t rows) {
  if (y.Length() != rows)
    throw DataError("target '" + y.name + "' has " + std::to_string(y.Length()) +
                    " frames, features have " + std::to_string(rows));
  std::vector<int64_t> idx;
  for (int64_t l = 0; l < rows; ++l)
    if (y.valid[l]) idx.push_back(l);
  if (idx.empty()) throw DataError("target '" + y.name + "': zero valid frames");
  return idx;
}

Eigen::MatrixXd GatherRows(const Eigen::MatrixXd &X, const std::vector<int64_t> &rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(i) = X.row(rows[i]);
  return out;
}

void CheckSpace(const Eigen::MatrixXd &X, const FeatureSpace &space) {
  if (space.dim != X.cols())
    throw DataError("feature space declares " + std::to_string(space.dim) +
                    " columns, matrix has " + std::to_string(X.cols()));
}

ProbeModel Skeleton(const TargetSeries &y, const FitConfig &cfg,
                    const FeatureSpace &space) {
  ProbeModel m;
  m.target = y.name;
  m.kind = y.kind;
  m.num_classes = y.num_classes;
  m.class_names = y.class_names;
  m.iqr = y.iqr;
  m.alpha = cfg.alpha;
  m.feature_space = space;
  return m;
}

double Softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

ProbeModel FitRidge(const Eigen::MatrixXd &X, const TargetSeries &y,
                    const FitConfig &cfg, const FeatureSpace &space) {
  cfg.Validate();
  CheckSpace(X, space);
  if (y.kind != TargetKind::kContinuous)
    throw DataError("fit_ridge: target '" + y.name + "' is not continuous");
  const auto rows = ValidRows(y, X.rows());
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size()), d = X.cols();
  if (n < d)
    spdlog::warn("fit_ridge: target '{}' has {} valid frames for {} features", y.name,
                 n, d);

  Eigen::MatrixXd Xv = GatherRows(X, rows);
  Eigen::VectorXd yv(n);
  for (Eigen::Index i = 0; i < n; ++i) yv(i) = y.values[rows[i]];

  const Eigen::RowVectorXd x_mean = Xv.colwise().mean();
  const double y_mean = yv.mean();
  Xv.rowwise() -= x_mean;
  yv.array() -= y_mean;

  Eigen::MatrixXd gram = Xv.transpose() * Xv;
  gram.diagonal().array() += cfg.alpha;
  const Eigen::VectorXd rhs = Xv.transpose() * yv;

  Eigen::VectorXd w;
  std::string solver = "normal-equations/cholesky";
  Eigen::LLT<Eigen::MatrixXd> llt;
  if (cfg.alpha > 0) llt.compute(gram);
  if (cfg.alpha > 0 && llt.info() == Eigen::Success) {
    w = llt.solve(rhs);
  } else {
    w = gram.completeOrthogonalDecomposition().solve(rhs);
    solver = "normal-equations/min-norm";
  }

  ProbeModel m = Skeleton(y, cfg, space);
  m.weights = w.transpose();
  m.bias = Eigen::VectorXd::Constant(1, y_mean - x_mean.dot(w));
  m.solver.solver = solver;
  m.solver.iterations = 1;
  m.solver.converged = w.allFinite();
  if (!w.allFinite())
    throw DataError("fit_ridge: non-finite solution for '" + y.name + "'");
  const Eigen::VectorXd resid = Xv * w - yv;
  m.solver.objective = resid.squaredNorm() + cfg.alpha * w.squaredNorm();
  return m;
}

LogisticObjective::LogisticObjective(Eigen::MatrixXd X, std::vector<int> labels,
                                     int num_outputs, double alpha)
    : x_(std::move(X)),
      labels_(std::move(labels)),
      num_outputs_(num_outputs),
      dim_(static_cast<int>(x_.cols())),
      alpha_(alpha) {
  if (num_outputs_ == 2 || num_outputs_ < 1)
    throw DataError("logistic: output count must be 1 (sigmoid) or >= 3 (softmax)");
  if (static_cast<Eigen::Index>(labels_.size()) != x_.rows())
    throw DataError("logistic: label count does not match rows");
}

Eigen::MatrixXd LogisticObjective::Weights(const Eigen::VectorXd &p) const {
  return Eigen::Map<const Eigen::MatrixXd>(p.data(), num_outputs_, dim_);
}

Eigen::VectorXd LogisticObjective::Bias(const Eigen::VectorXd &p) const {
  return p.tail(num_outputs_);
}

double LogisticObjective::Evaluate(const Eigen::VectorXd &params,
                                   Eigen::VectorXd *grad) const {
  const Eigen::MatrixXd W = Weights(params);
  const Eigen::VectorXd b = Bias(params);
  const Eigen::Index n = x_.rows();
  Eigen::MatrixXd Z = x_ * W.transpose();  // n x K
  Z.rowwise() += b.transpose();

  double loss = 0.0;
  Eigen::MatrixXd R(n, num_outputs_);  // dLoss/dZ
  if (num_outputs_ == 1) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = Z(i, 0);
      const double y = labels_[i];
      loss += Softplus(z) - y * z;
      R(i, 0) = Sigmoid(z) - y;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double zmax = Z.row(i).maxCoeff();
      double sum = 0.0;
      for (int k = 0; k < num_outputs_; ++k) sum += std::exp(Z(i, k) - zmax);
      const double lse = zmax + std::log(sum);
      loss += lse - Z(i, labels_[i]);
      for (int k = 0; k < num_outputs_; ++k)
        R(i, k) = std::exp(Z(i, k) - lse) - (k == labels_[i] ? 1.0 : 0.0);
    }
  }
  loss += 0.5 * alpha_ * W.squaredNorm();
  if (grad) {
    grad->resize(NumParams());
    Eigen::Map<Eigen::MatrixXd> gW(grad->data(), num_outputs_, dim_);
    gW.noalias() = R.transpose() * x_;
    gW += alpha_ * W;
    grad->tail(num_outputs_) = R.colwise().sum().transpose();
  }
  return loss;
}

ProbeModel FitLogistic(const Eigen::MatrixXd &X, const TargetSeries &y,
                       const FitConfig &cfg, const FeatureSpace &space,
                       std::vector<double> *objective_trace) {
  cfg.Validate();
  CheckSpace(X, space);
  if (!y.IsClassification())
    throw DataError("fit_logistic: target '" + y.name + "' is not categorical");
  const auto rows = ValidRows(y, X.rows());
  std::vector<int> labels;
  std::vector<int> counts(y.num_classes, 0);
  for (int64_t r : rows) {
    labels.push_back(static_cast<int>(y.values[r]));
    ++counts[labels.back()];
  }
  const int present = static_cast<int>(
      std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }));
  if (present < 2)
    throw DataError("fit_logistic: target '" + y.name +
                    "' has a single class among valid frames");

  const int outputs = y.num_classes == 2 ? 1 : y.num_classes;
  // Centred columns decouple the unpenalised bias from the weights; the
  // optimum is the same after shifting the bias back.
  Eigen::MatrixXd Xv = GatherRows(X, rows);
  const Eigen::RowVectorXd mu = Xv.colwise().mean();
  Xv.rowwise() -= mu;
  LogisticObjective obj(std::move(Xv), labels, outputs, cfg.alpha);

  // L-BFGS, memory 10, Armijo backtracking. Every accepted step strictly
  // lowers the objective.
  constexpr int kMemory = 10;
  constexpr double kArmijo = 1e-4;
  Eigen::VectorXd p = Eigen::VectorXd::Zero(obj.NumParams()), g, p_new, g_new;
  double f = obj.Evaluate(p, &g);
  if (!std::isfinite(f)) throw DataError("fit_logistic: non-finite loss");
  if (objective_trace) objective_trace->assign(1, f);
  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;

  SolverInfo info;
  info.solver = outputs == 1 ? "lbfgs/sigmoid" : "lbfgs/softmax";
  info.converged = false;
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < cfg.grad_tol) {
      info.converged = true;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> a(S.size());
    for (int k = static_cast<int>(S.size()) - 1; k >= 0; --k) {
      a[k] = rho[k] * S[k].dot(q);
      q -= a[k] * Y[k];
    }
    double gamma = 1.0;
    if (!S.empty()) gamma = S.back().dot(Y.back()) / Y.back().squaredNorm();
    else gamma = 1.0 / std::max(1.0, g.lpNorm<Eigen::Infinity>());
    Eigen::VectorXd d = gamma * q;
    for (size_t k = 0; k < S.size(); ++k) {
      const double beta = rho[k] * Y[k].dot(d);
      d += S[k] * (a[k] - beta);
    }
    d = -d;
    double gd = g.dot(d);
    if (!(gd < 0)) {
      S.clear();
      Y.clear();
      rho.clear();
      d = -g / std::max(1.0, g.lpNorm<Eigen::Infinity>());
      gd = g.dot(d);
    }

    double step = 1.0, f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      p_new = p + step * d;
      f_new = obj.Evaluate(p_new, &g_new);
      if (std::isfinite(f_new) && f_new <= f + kArmijo * step * gd && f_new < f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {  // no further decrease representable
      info.stop = "line_search";
      break;
    }
    const bool flat = f - f_new <= cfg.ftol * std::max(1.0, std::abs(f));

    Eigen::VectorXd s = p_new - p, yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      S.push_back(std::move(s));
      Y.push_back(std::move(yv));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > kMemory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    p.swap(p_new);
    g.swap(g_new);
    f = f_new;
    if (objective_trace) objective_trace->push_back(f);
    if (flat) {
      info.converged = true;
      info.stop = "ftol";
      ++it;
      break;
    }
  }
  if (!info.converged && g.lpNorm<Eigen::Infinity>() < cfg.grad_tol) info.converged = true;
  if (!info.converged && info.stop != "line_search") info.stop = "max_iters";
  info.iterations = it;
  info.grad_inf_norm = g.lpNorm<Eigen::Infinity>();
  info.objective = f;
  if (!info.converged)
    spdlog::debug("fit_logistic: '{}' stopped after {} iterations, |grad|_inf = {}",
                  y.name, it, info.grad_inf_norm);

  ProbeModel m = Skeleton(y, cfg, space);
  m.weights = obj.Weights(p);
  m.bias = obj.Bias(p) - m.weights * mu.transpose();
  m.solver = info;
  if (!m.weights.allFinite() || !m.bias.allFinite())
    throw DataError("fit_logistic: non-finite coefficients for '" + y.name + "'");
  return m;
}

Prediction PredictFrame(const ProbeModel &model, const Eigen::VectorXd &x) {
  if (x.size() != model.Dim())
    throw DataError("predict_frame: input has " + std::to_string(x.size()) +
                    " features, model '" + model.target + "' expects " +
                    std::to_string(model.Dim()));
  Prediction p;
  p.scores = model.weights * x + model.bias;
  if (model.kind == TargetKind::kContinuous) {
    p.value = p.scores(0);
    return p;
  }
  if (model.OutputCount() == 1) {
    p.label = p.scores(0) > 0.0 ? 1 : 0;
  } else {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < p.scores.size(); ++k)
      if (p.scores(k) > p.scores(best)) best = k;
    p.label = static_cast<int>(best);
  }
  p.value = p.label;
  return p;
}

Eigen::VectorXd ClassProbabilities(const ProbeModel &model,
                                   const Eigen::VectorXd &scores) {
  if (model.kind == TargetKind::kContinuous)
    throw DataError("class probabilities requested for regression model");
  if (scores.size() == 1) {
    const double p1 = Sigmoid(scores(0));
    Eigen::VectorXd p(2);
    p << 1.0 - p1, p1;
    return p;
  }
  Eigen::VectorXd e = (scores.array() - scores.maxCoeff()).exp();
  return e / e.sum();
}

SuiteResult TrainSuite(const Eigen::MatrixXd &X, const TargetRegistry &targets,
                       const FitConfig &cfg, const FeatureSpace &space) {
  // Targets are independent; fits run concurrently and are collected in
  // registry order.
  std::vector<std::future<ProbeModel>> jobs;
  for (const auto &t : targets)
    jobs.push_back(std::async(std::launch::async, [&X, &t, &cfg, &space] {
      return t.kind == TargetKind::kContinuous ? FitRidge(X, t, cfg, space)
                                               : FitLogistic(X, t, cfg, space);
    }));
  SuiteResult out;
  for (size_t i = 0; i < targets.size(); ++i) {
    try {
      out.models.push_back(jobs[i].get());
    } catch (const std::exception &e) {
      spdlog::warn("train: target '{}' failed: {}", targets[i].name, e.what());
      out.failures[targets[i].name] = e.what();
    }
  }
  return out;
}

Eigen::MatrixXd NormalizedCoefficients(const ProbeModel &model,
                                       std::span<const double> feature_std) {
  if (static_cast<int>(feature_std.size()) != model.Dim())
    throw DataError("normalized coefficients: " + std::to_string(feature_std.size()) +
                    " standard deviations for " + std::to_string(model.Dim()) +
                    " features");
  Eigen::MatrixXd rows = model.weights;
  for (Eigen::Index c = 0; c < rows.cols(); ++c) rows.col(c) *= feature_std[c];
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const double norm = rows.row(r).norm();
    if (norm > 0) rows.row(r) /= norm;
  }
  return rows;
}

json FeatureSpaceToJson(const FeatureSpace &fs) {
  json j = {{"kind", FeatureKindName(fs.kind)},
            {"dim", fs.dim},
            {"channel_map", fs.channel_map},
            {"channel_std", fs.channel_std},
            {"source_blocks", fs.source_blocks},
            {"source_channels_per_block", fs.source_channels_per_block}};
  if (fs.zscore)
    j["zscore"] = {{"mean", fs.zscore->mean}, {"std", fs.zscore->std}};
  else
    j["zscore"] = nullptr;
  return j;
}

FeatureSpace FeatureSpaceFromJson(const json &j) {
  FeatureSpace fs;
  fs.kind = ParseFeatureKind(j.at("kind").get<std::string>());
  fs.dim = j.at("dim").get<int>();
  fs.channel_map = j.value("channel_map", std::vector<int>{});
  fs.channel_std = j.value("channel_std", std::vector<double>{});
  fs.source_blocks = j.value("source_blocks", 0);
  fs.source_channels_per_block = j.value("source_channels_per_block", 0);
  if (j.contains("zscore") && !j["zscore"].is_null())
    fs.zscore = ZscoreStats{j["zscore"].at("mean").get<std::vector<double>>(),
                            j["zscore"].at("std").get<std::vector<double>>()};
  return fs;
}

json ModelToJson(const ProbeModel &m) {
  std::vector<double> w;
  for (Eigen::Index r = 0; r < m.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < m.weights.cols(); ++c) w.push_back(m.weights(r, c));
  json j = {{"target", m.target},
            {"kind", TargetKindName(m.kind)},
            {"num_classes", m.num_classes},
            {"class_names", m.class_names},
            {"alpha", m.alpha},
            {"outputs", m.OutputCount()},
            {"dim", m.Dim()},
            {"weights", w},
            {"bias", std::vector<double>(m.bias.data(), m.bias.data() + m.bias.size())},
            {"feature_space", FeatureSpaceToJson(m.feature_space)},
            {"solver",
             {{"name", m.solver.solver},
              {"iterations", m.solver.iterations},
              {"converged", m.solver.converged},
              {"grad_inf_norm", m.solver.grad_inf_norm},
              {"objective", m.solver.objective},
              {"stop", m.solver.stop},
              {"bias_regularized", false},
              {"multiclass", m.kind == TargetKind::kMultiClass ? "softmax" : "none"}}}};
  j["iqr"] = m.iqr ? json::array({m.iqr->first, m.iqr->second}) : json();
  return j;
}

ProbeModel ModelFromJson(const json &j) {
  ProbeModel m;
  try {
    m.target = j.at("target").get<std::string>();
    m.kind = ParseTargetKind(j.at("kind").get<std::string>());
    m.num_classes = j.at("num_classes").get<int>();
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.alpha = j.at("alpha").get<double>();
    const int k = j.at("outputs").get<int>(), d = j.at("dim").get<int>();
    auto w = j.at("weights").get<std::vector<double>>();
    auto b = j.at("bias").get<std::vector<double>>();
    if (static_cast<int64_t>(w.size()) != int64_t{k} * d ||
        static_cast<int>(b.size()) != k)
      throw DataError("model '" + m.target + "': coefficient sizes do not match");
    m.weights.resize(k, d);
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < d; ++c) m.weights(r, c) = w[static_cast<size_t>(r) * d + c];
    m.bias = Eigen::Map<Eigen::VectorXd>(b.data(), k);
    m.feature_space = FeatureSpaceFromJson(j.at("feature_space"));
    if (m.feature_space.dim != d)
      throw DataError("model '" + m.target + "': feature space dimension mismatch");
    if (j.contains("iqr") && !j["iqr"].is_null())
      m.iqr = std::make_pair(j["iqr"][0].get<double>(), j["iqr"][1].get<double>());
    const auto &s = j.at("solver");
    m.solver = {s.value("name", ""), s.value("iterations", 0),
                s.value("converged", true), s.value("grad_inf_norm", 0.0),
                s.value("objective", 0.0), s.value("stop", std::string("grad_tol"))};
  } catch (const json::exception &e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  return m;
}

void WriteModels(const std::vector<ProbeModel> &models,
                 const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  json index = json::array();
  for (const auto &m : models) {
    WriteJsonFile(ModelToJson(m), dir / (m.target + ".json"));
    index.push_back(m.target + ".json");
  }
  WriteJsonFile({{"models", index}}, dir / "index.json");
}

std::vector<ProbeModel> ReadModels(const std::filesystem::path &dir) {
  json index = ReadJsonFile(dir / "index.json");
  std::vector<ProbeModel> models;
  for (const auto &f : index.at("models"))
    models.push_back(ModelFromJson(ReadJsonFile(dir / f.get<std::string>())));
  return models;
}

}  // namespace maskprobe
