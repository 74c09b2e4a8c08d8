// maskprobe/sv.h

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

// Speaker verification on utterance-level embeddings: a WCCN + LDA backend
// with length normalization and cosine scoring, trial lists and EER.

#ifndef MASKPROBE_SV_H_
#define MASKPROBE_SV_H_

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "maskprobe/core.h"

namespace maskprobe {

struct EmbeddingSet {
  std::vector<std::string> ids;
  std::vector<std::string> speakers;
  Eigen::MatrixXd rows;  // one unit-norm row per utterance

  int64_t Size() const { return static_cast<int64_t>(ids.size()); }
  int Dim() const { return static_cast<int>(rows.cols()); }
  /// Row index of an utterance; throws DataError if absent.
  int64_t IndexOf(const std::string &id) const;
  void Validate() const;
};

/// For every manifest segment: mean of the feature rows on VAD-active
/// frames, then L2-normalized. Utterances with no active frame, or whose mean
/// is the zero vector, are skipped and their ids appended to `skipped`.
EmbeddingSet UtteranceEmbeddings(const Eigen::MatrixXd &features,
                                 const TargetSeries &vad,
                                 const StreamManifest &manifest,
                                 std::vector<std::string> *skipped = nullptr);

struct SvBackend {
  Eigen::VectorXd mean;  // training mean, subtracted before projection
  Eigen::MatrixXd wccn;  // D x D, applied as wccn * x
  Eigen::MatrixXd lda;   // lda_dims x D, applied after wccn
  double ridge_epsilon = 0.0;
  int floored_eigenvalues = 0;
  int train_speakers = 0;
  int wccn_speakers = 0;  // speakers with >= 2 utterances

  int Dim() const { return static_cast<int>(mean.size()); }
  /// Length-normalized projection of a raw embedding.
  Eigen::VectorXd Project(const Eigen::VectorXd &x) const;
};

/// Average within-class covariance over speakers with at least two
/// utterances (each speaker's covariance normalized by its own count).
Eigen::MatrixXd WithinClassCovariance(const Eigen::MatrixXd &rows,
                                      const std::vector<std::string> &speakers,
                                      int *contributing = nullptr);

/// WCCN is the inverse Cholesky factor of the within-class covariance with
/// eigenvalues below eps = 1e-6 * trace / D raised to eps; LDA is solved on
/// WCCN-transformed data. Throws DataError with fewer than lda_dims + 1
/// speakers or when no speaker has two utterances.
SvBackend FitBackend(const EmbeddingSet &train, int lda_dims = 16);

struct Trial {
  std::vector<std::string> enroll_ids;
  std::string test_id;
  bool is_target = false;
};

struct TrialList {
  std::vector<Trial> trials;
  int n_enr = 1;
  int ratio = 10;
  uint64_t seed = 0;
  std::vector<std::string> skipped_speakers;

  int64_t TargetCount() const;
  int64_t NonTargetCount() const;
};

/// Per speaker (sorted by id): n_enr enrollment utterances chosen with a
/// seed derived from the speaker id, the rest as target trials, and
/// ratio x that many non-target trials drawn without replacement from other
/// speakers' utterances (capped at what is available).
TrialList MakeTrials(const EmbeddingSet &test, int n_enr, int ratio, uint64_t seed);

enum class EnrollAveraging { kRaw, kProjected };

std::string EnrollAveragingName(EnrollAveraging a);
EnrollAveraging ParseEnrollAveraging(const std::string &name);

/// Cosine score per trial, in trial order.
std::vector<double> ScoreTrials(const SvBackend &backend, const EmbeddingSet &embeddings,
                                const TrialList &trials,
                                EnrollAveraging averaging = EnrollAveraging::kRaw);

/// Equal error rate: accept when score > threshold, thresholds at -inf,
/// midpoints between distinct scores and +inf, linear interpolation at the
/// crossing of the false-accept and false-reject curves.
double Eer(std::span<const double> scores, std::span<const uint8_t> is_target);

nlohmann::json EmbeddingsToJson(const EmbeddingSet &e);
EmbeddingSet EmbeddingsFromJson(const nlohmann::json &j);
nlohmann::json BackendToJson(const SvBackend &b);
SvBackend BackendFromJson(const nlohmann::json &j);

/// CSV with header enroll_ids,test_id,is_target; enrollment ids joined by ';'.
void WriteTrials(const TrialList &t, const std::filesystem::path &path);
TrialList ReadTrials(const std::filesystem::path &path);
/// Trials CSV plus a score column.
void WriteScores(const TrialList &t, std::span<const double> scores,
                 const std::filesystem::path &path);

}  // namespace maskprobe

#endif  // MASKPROBE_SV_H_
