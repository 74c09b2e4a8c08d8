// src/sv.cc

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

#include "maskprobe/sv.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <thread>

#include "maskprobe/io.h"

namespace maskprobe {

using nlohmann::json;

int64_t EmbeddingSet::IndexOf(const std::string &id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw DataError("embeddings: no utterance '" + id + "'");
  return it - ids.begin();
}

void EmbeddingSet::Validate() const {
  if (speakers.size() != ids.size() || rows.rows() != Size())
    throw DataError("embeddings: ids, speakers and rows differ in length");
  for (int64_t i = 0; i < Size(); ++i)
    if (std::abs(rows.row(i).norm() - 1.0) > 1e-9)
      throw DataError("embeddings: row '" + ids[i] + "' is not unit norm");
}

EmbeddingSet UtteranceEmbeddings(const Eigen::MatrixXd &features, const TargetSeries &vad,
                                 const StreamManifest &manifest,
                                 std::vector<std::string> *skipped) {
  const int64_t L = features.rows();
  if (vad.Length() != L || manifest.NumFrames() != L)
    throw DataError("utterance_embeddings: features have " + std::to_string(L) +
                    " frames, VAD " + std::to_string(vad.Length()) + ", manifest " +
                    std::to_string(manifest.NumFrames()));
  EmbeddingSet out;
  std::vector<Eigen::RowVectorXd> rows;
  for (const Segment &s : manifest.segments) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(features.cols());
    int64_t n = 0;
    for (int64_t l = s.start_frame; l < s.end_frame; ++l)
      if (vad.valid[l] && vad.values[l] == 1.0) {
        sum += features.row(l);
        ++n;
      }
    const double norm = n ? (sum / static_cast<double>(n)).norm() : 0.0;
    if (n == 0 || norm == 0.0) {
      spdlog::warn("utterance_embeddings: skipping '{}' ({})", s.utterance_id,
                   n == 0 ? "no voice-active frames" : "zero mean vector");
      if (skipped) skipped->push_back(s.utterance_id);
      continue;
    }
    out.ids.push_back(s.utterance_id);
    out.speakers.push_back(s.speaker_id);
    rows.push_back(sum / static_cast<double>(n) / norm);
  }
  if (rows.empty()) throw DataError("utterance_embeddings: every utterance was skipped");
  out.rows.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.rows.row(i) = rows[i];
  return out;
}

Eigen::VectorXd SvBackend::Project(const Eigen::VectorXd &x) const {
  if (x.size() != Dim()) throw DataError("sv backend: embedding dimension mismatch");
  Eigen::VectorXd y = lda * (wccn * (x - mean));
  const double n = y.norm();
  if (n > 0) y /= n;
  return y;
}

namespace {

std::map<std::string, std::vector<int64_t>> GroupBySpeaker(
    const std::vector<std::string> &speakers) {
  std::map<std::string, std::vector<int64_t>> g;
  for (size_t i = 0; i < speakers.size(); ++i)
    g[speakers[i]].push_back(static_cast<int64_t>(i));
  return g;
}

// Raises eigenvalues below eps to eps; returns V diag(max(l, eps)) V^T.
Eigen::MatrixXd FloorEigenvalues(const Eigen::MatrixXd &S, double eps, int *floored) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  if (eig.info() != Eigen::Success) throw DataError("sv backend: eigendecomposition failed");
  Eigen::VectorXd l = eig.eigenvalues();
  int count = 0;
  for (Eigen::Index i = 0; i < l.size(); ++i)
    if (l(i) < eps) {
      l(i) = eps;
      ++count;
    }
  if (floored) *floored = count;
  if (count == 0) return S;
  return eig.eigenvectors() * l.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

Eigen::MatrixXd WithinClassCovariance(const Eigen::MatrixXd &rows,
                                      const std::vector<std::string> &speakers,
                                      int *contributing) {
  const Eigen::Index D = rows.cols();
  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(D, D);
  int used = 0;
  for (const auto &[spk, idx] : GroupBySpeaker(speakers)) {
    if (idx.size() < 2) continue;
    Eigen::MatrixXd X(static_cast<Eigen::Index>(idx.size()), D);
    for (size_t i = 0; i < idx.size(); ++i) X.row(i) = rows.row(idx[i]);
    const Eigen::MatrixXd c = X.rowwise() - X.colwise().mean();
    sw += c.transpose() * c / static_cast<double>(idx.size());
    ++used;
  }
  if (contributing) *contributing = used;
  if (used == 0) throw DataError("sv backend: no speaker has two utterances");
  return sw / used;
}

SvBackend FitBackend(const EmbeddingSet &train, int lda_dims) {
  if (train.rows.rows() != train.Size() || train.speakers.size() != train.ids.size())
    throw DataError("fit_backend: malformed embedding set");
  const auto groups = GroupBySpeaker(train.speakers);
  const int S = static_cast<int>(groups.size());
  const int D = train.Dim();
  if (lda_dims < 1 || lda_dims > D)
    throw DataError("fit_backend: lda_dims " + std::to_string(lda_dims) +
                    " outside [1, " + std::to_string(D) + "]");
  if (S < lda_dims + 1)
    throw DataError("fit_backend: " + std::to_string(S) + " speakers, need at least " +
                    std::to_string(lda_dims + 1));

  SvBackend b;
  b.train_speakers = S;
  b.mean = train.rows.colwise().mean().transpose();
  const Eigen::MatrixXd X = train.rows.rowwise() - b.mean.transpose();

  const Eigen::MatrixXd sw = WithinClassCovariance(X, train.speakers, &b.wccn_speakers);
  b.ridge_epsilon = 1e-6 * sw.trace() / D;
  if (!(b.ridge_epsilon > 0)) throw DataError("fit_backend: within-class covariance is zero");
  const Eigen::MatrixXd sw_f = FloorEigenvalues(sw, b.ridge_epsilon, &b.floored_eigenvalues);
  Eigen::LLT<Eigen::MatrixXd> llt(sw_f);
  if (llt.info() != Eigen::Success) throw DataError("fit_backend: Cholesky factorization failed");
  // sw_f = L L^T, so L^{-1} whitens it.
  const Eigen::MatrixXd Lm = llt.matrixL();
  b.wccn = Lm.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(D, D));

  const Eigen::MatrixXd Y = X * b.wccn.transpose();
  const Eigen::RowVectorXd mu = Y.colwise().mean();
  Eigen::MatrixXd sb = Eigen::MatrixXd::Zero(D, D);
  for (const auto &[spk, idx] : groups) {
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(D);
    for (int64_t i : idx) m += Y.row(i);
    m /= static_cast<double>(idx.size());
    const Eigen::RowVectorXd d = m - mu;
    sb += static_cast<double>(idx.size()) * d.transpose() * d;
  }
  sb /= static_cast<double>(Y.rows());
  Eigen::MatrixXd sw_y = WithinClassCovariance(Y, train.speakers);
  sw_y = FloorEigenvalues(sw_y, 1e-6 * std::max(sw_y.trace(), 1e-300) / D, nullptr);

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> gen(sb, sw_y);
  if (gen.info() != Eigen::Success) throw DataError("fit_backend: LDA eigenproblem failed");
  b.lda.resize(lda_dims, D);
  for (int i = 0; i < lda_dims; ++i) {
    Eigen::VectorXd v = gen.eigenvectors().col(D - 1 - i);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    b.lda.row(i) = v.transpose();
  }
  return b;
}

int64_t TrialList::TargetCount() const {
  return std::count_if(trials.begin(), trials.end(), [](const Trial &t) { return t.is_target; });
}

int64_t TrialList::NonTargetCount() const {
  return static_cast<int64_t>(trials.size()) - TargetCount();
}

TrialList MakeTrials(const EmbeddingSet &test, int n_enr, int ratio, uint64_t seed) {
  if (n_enr < 1) throw ConfigError("make_trials: n_enr must be >= 1");
  if (ratio < 0) throw ConfigError("make_trials: ratio must be >= 0");
  TrialList out;
  out.n_enr = n_enr;
  out.ratio = ratio;
  out.seed = seed;
  const auto groups = GroupBySpeaker(test.speakers);
  for (const auto &[spk, idx] : groups) {
    if (static_cast<int>(idx.size()) <= n_enr) {
      spdlog::warn("make_trials: speaker '{}' has {} utterances, needs more than {}", spk,
                   idx.size(), n_enr);
      out.skipped_speakers.push_back(spk);
      continue;
    }
    Rng rng(DeriveSeed(seed, spk));
    std::vector<int64_t> order = idx;
    rng.Shuffle(&order);
    std::vector<std::string> enroll;
    for (int i = 0; i < n_enr; ++i) enroll.push_back(test.ids[order[i]]);
    std::sort(enroll.begin(), enroll.end());
    std::vector<std::string> tests;
    for (size_t i = n_enr; i < order.size(); ++i) tests.push_back(test.ids[order[i]]);
    std::sort(tests.begin(), tests.end());
    for (const auto &t : tests) out.trials.push_back({enroll, t, true});

    std::vector<int64_t> others;
    for (int64_t i = 0; i < test.Size(); ++i)
      if (test.speakers[i] != spk) others.push_back(i);
    const size_t want = static_cast<size_t>(ratio) * tests.size();
    if (want > others.size())
      spdlog::warn("make_trials: speaker '{}' wants {} non-target trials, only {} available",
                   spk, want, others.size());
    // Partial Fisher-Yates, then restore id order for a stable listing.
    const size_t take = std::min(want, others.size());
    for (size_t i = 0; i < take; ++i) {
      const size_t j = i + static_cast<size_t>(rng.Below(others.size() - i));
      std::swap(others[i], others[j]);
    }
    std::vector<std::string> picked;
    for (size_t i = 0; i < take; ++i) picked.push_back(test.ids[others[i]]);
    std::sort(picked.begin(), picked.end());
    for (const auto &t : picked) out.trials.push_back({enroll, t, false});
  }
  if (out.trials.empty()) throw DataError("make_trials: no speaker has enough utterances");
  return out;
}

std::string EnrollAveragingName(EnrollAveraging a) {
  return a == EnrollAveraging::kRaw ? "raw" : "projected";
}

EnrollAveraging ParseEnrollAveraging(const std::string &name) {
  if (name == "raw") return EnrollAveraging::kRaw;
  if (name == "projected") return EnrollAveraging::kProjected;
  throw ConfigError("unknown enrollment averaging '" + name + "' (raw|projected)");
}

std::vector<double> ScoreTrials(const SvBackend &backend, const EmbeddingSet &embeddings,
                                const TrialList &trials, EnrollAveraging averaging) {
  if (embeddings.Dim() != backend.Dim())
    throw DataError("score_trials: embeddings have dimension " +
                    std::to_string(embeddings.Dim()) + ", backend expects " +
                    std::to_string(backend.Dim()));
  std::map<std::string, int64_t> index;
  for (int64_t i = 0; i < embeddings.Size(); ++i) index[embeddings.ids[i]] = i;
  auto lookup = [&](const std::string &id) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("score_trials: no embedding for '" + id + "'");
    return it->second;
  };
  // Resolve ids up front so workers never throw.
  std::vector<std::vector<int64_t>> enroll(trials.trials.size());
  std::vector<int64_t> test(trials.trials.size());
  for (size_t t = 0; t < trials.trials.size(); ++t) {
    if (trials.trials[t].enroll_ids.empty()) throw DataError("score_trials: empty enrollment");
    for (const auto &id : trials.trials[t].enroll_ids) enroll[t].push_back(lookup(id));
    test[t] = lookup(trials.trials[t].test_id);
  }

  std::vector<double> scores(trials.trials.size());
  auto work = [&](size_t begin, size_t end) {
    for (size_t t = begin; t < end; ++t) {
      Eigen::VectorXd e;
      if (averaging == EnrollAveraging::kRaw) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(backend.Dim());
        for (int64_t i : enroll[t]) sum += embeddings.rows.row(i).transpose();
        e = backend.Project(sum / static_cast<double>(enroll[t].size()));
      } else {
        e = Eigen::VectorXd::Zero(backend.lda.rows());
        for (int64_t i : enroll[t]) e += backend.Project(embeddings.rows.row(i).transpose());
        const double n = e.norm();
        if (n > 0) e /= n;
      }
      const Eigen::VectorXd v = backend.Project(embeddings.rows.row(test[t]).transpose());
      scores[t] = std::clamp(e.dot(v), -1.0, 1.0);
    }
  };
  const size_t n = scores.size();
  const size_t workers = std::max<size_t>(1, std::min<size_t>(std::thread::hardware_concurrency(), n / 256));
  std::vector<std::future<void>> jobs;
  for (size_t w = 0; w < workers; ++w)
    jobs.push_back(std::async(std::launch::async, work, n * w / workers, n * (w + 1) / workers));
  for (auto &j : jobs) j.get();
  return scores;
}

double Eer(std::span<const double> scores, std::span<const uint8_t> is_target) {
  if (scores.size() != is_target.size()) throw DataError("eer: length mismatch");
  std::vector<double> tar, non;
  for (size_t i = 0; i < scores.size(); ++i) (is_target[i] ? tar : non).push_back(scores[i]);
  if (tar.empty() || non.empty()) throw DataError("eer: needs target and non-target trials");
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());
  std::vector<double> uniq(scores.begin(), scores.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  std::vector<double> thresholds;
  thresholds.push_back(-std::numeric_limits<double>::infinity());
  for (size_t i = 0; i + 1 < uniq.size(); ++i) thresholds.push_back(0.5 * (uniq[i] + uniq[i + 1]));
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const double nt = static_cast<double>(tar.size()), nn = static_cast<double>(non.size());
  double prev_far = 1.0, prev_frr = 0.0;
  for (double th : thresholds) {
    // False reject: target <= th; false accept: non-target > th.
    const double frr = static_cast<double>(std::upper_bound(tar.begin(), tar.end(), th) - tar.begin()) / nt;
    const double far = static_cast<double>(non.end() - std::upper_bound(non.begin(), non.end(), th)) / nn;
    if (frr >= far) {
      const double d0 = prev_far - prev_frr, d1 = far - frr;
      if (d0 == d1) return far;  // only at the first threshold
      const double a = d0 / (d0 - d1);
      return prev_far + a * (far - prev_far);
    }
    prev_far = far;
    prev_frr = frr;
  }
  return 0.5;  // unreachable: at +inf frr = 1 >= far = 0
}

namespace {

json MatrixToJson(const Eigen::MatrixXd &m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) r[c] = m(i, c);
    rows.push_back(r);
  }
  return rows;
}

Eigen::MatrixXd MatrixFromJson(const json &j, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (size_t i = 0; i < j.size(); ++i) {
    auto r = j[i].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(r.size()) != cols) throw DataError("backend: ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r[c];
  }
  return m;
}

}  // namespace

json EmbeddingsToJson(const EmbeddingSet &e) {
  return {{"dim", e.Dim()}, {"ids", e.ids}, {"speakers", e.speakers}, {"rows", MatrixToJson(e.rows)}};
}

EmbeddingSet EmbeddingsFromJson(const json &j) {
  EmbeddingSet e;
  try {
    const int D = j.at("dim").get<int>();
    e.ids = j.at("ids").get<std::vector<std::string>>();
    e.speakers = j.at("speakers").get<std::vector<std::string>>();
    const auto &rows = j.at("rows");
    if (rows.size() != e.ids.size()) throw DataError("embeddings: row count mismatch");
    e.rows.resize(static_cast<Eigen::Index>(rows.size()), D);
    for (size_t i = 0; i < rows.size(); ++i) {
      auto r = rows[i].get<std::vector<double>>();
      if (static_cast<int>(r.size()) != D) throw DataError("embeddings: ragged rows");
      for (int c = 0; c < D; ++c) e.rows(i, c) = r[c];
    }
  } catch (const json::exception &ex) {
    throw DataError(std::string("embeddings file: ") + ex.what());
  }
  e.Validate();
  return e;
}

json BackendToJson(const SvBackend &b) {
  return {{"order", "mean, wccn, lda, length-norm"},
          {"dim", b.Dim()},
          {"lda_dims", b.lda.rows()},
          {"ridge_epsilon", b.ridge_epsilon},
          {"floored_eigenvalues", b.floored_eigenvalues},
          {"train_speakers", b.train_speakers},
          {"wccn_speakers", b.wccn_speakers},
          {"mean", std::vector<double>(b.mean.data(), b.mean.data() + b.mean.size())},
          {"wccn", MatrixToJson(b.wccn)},
          {"lda", MatrixToJson(b.lda)}};
}

SvBackend BackendFromJson(const json &j) {
  SvBackend b;
  try {
    const int D = j.at("dim").get<int>();
    auto mean = j.at("mean").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != D) throw DataError("backend: mean has wrong size");
    b.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), D);
    b.wccn = MatrixFromJson(j.at("wccn"), D);
    b.lda = MatrixFromJson(j.at("lda"), D);
    if (b.wccn.rows() != D) throw DataError("backend: wccn is not square");
    b.ridge_epsilon = j.at("ridge_epsilon").get<double>();
    b.floored_eigenvalues = j.at("floored_eigenvalues").get<int>();
    b.train_speakers = j.at("train_speakers").get<int>();
    b.wccn_speakers = j.at("wccn_speakers").get<int>();
  } catch (const json::exception &ex) {
    throw DataError(std::string("backend file: ") + ex.what());
  }
  return b;
}

namespace {

std::string JoinIds(const std::vector<std::string> &ids) {
  std::string s;
  for (size_t i = 0; i < ids.size(); ++i) s += (i ? ";" : "") + ids[i];
  return s;
}

void WriteTrialRows(std::ostream &os, const TrialList &t, std::span<const double> scores) {
  os << "enroll_ids,test_id,is_target" << (scores.empty() ? "" : ",score") << '\n';
  for (size_t i = 0; i < t.trials.size(); ++i) {
    const Trial &tr = t.trials[i];
    os << JoinIds(tr.enroll_ids) << ',' << tr.test_id << ',' << (tr.is_target ? 1 : 0);
    if (!scores.empty()) os << ',' << FormatDouble(scores[i]);
    os << '\n';
  }
}

}  // namespace

void WriteTrials(const TrialList &t, const std::filesystem::path &path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  WriteTrialRows(os, t, {});
}

void WriteScores(const TrialList &t, std::span<const double> scores,
                 const std::filesystem::path &path) {
  if (scores.size() != t.trials.size()) throw DataError("write_scores: length mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  if (t.trials.empty()) {
    os << "enroll_ids,test_id,is_target,score\n";
    return;
  }
  WriteTrialRows(os, t, scores);
}

TrialList ReadTrials(const std::filesystem::path &path) {
  const CsvTable csv = ReadCsv(path);
  const int ce = csv.Column("enroll_ids"), ct = csv.Column("test_id"), cg = csv.Column("is_target");
  if (ce < 0 || ct < 0 || cg < 0)
    throw DataError("trials file '" + path.string() + "' needs enroll_ids,test_id,is_target");
  TrialList t;
  for (const auto &row : csv.rows) {
    Trial tr;
    tr.enroll_ids = SplitString(row[ce], ';');
    tr.test_id = row[ct];
    if (row[cg] != "0" && row[cg] != "1")
      throw DataError("trials file: is_target must be 0 or 1, got '" + row[cg] + "'");
    tr.is_target = row[cg] == "1";
    t.trials.push_back(std::move(tr));
  }
  if (!t.trials.empty()) t.n_enr = static_cast<int>(t.trials.front().enroll_ids.size());
  return t;
}

}  // namespace maskprobe
