// maskprobe/inferbank.h

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

// All probes compiled into one K_total x C* matrix. On binary input a frame
// costs one gather-and-sum: out = bias + sum of the weight columns of the
// active channels.
//
// The accumulation order is part of the contract: outputs start from the
// bias and add columns in ascending channel order, so a dense product that
// walks the same order is bit-identical.

#ifndef MASKPROBE_INFERBANK_H_
#define MASKPROBE_INFERBANK_H_

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maskprobe/probes.h"

namespace maskprobe {

/// Where a bank output row comes from.
struct BankOutput {
  std::string target;
  TargetKind kind = TargetKind::kContinuous;
  int model_index = 0;
  int class_index = -1;  // row within a multi-class model, -1 otherwise
  std::string column;    // "target" or "target.class"
};

class PredictorBank {
 public:
  PredictorBank() = default;

  /// Row-stacks the models, reordered into roster order (targets not on the
  /// roster follow in input order). Throws DataError on differing feature
  /// spaces or an empty list.
  static PredictorBank Compile(const std::vector<ProbeModel> &models);

  int OutputCount() const { return static_cast<int>(bias_.size()); }
  int ChannelCount() const { return channels_; }
  const std::vector<BankOutput> &Outputs() const { return outputs_; }
  const FeatureSpace &Space() const { return space_; }
  const std::vector<double> &Bias() const { return bias_; }
  /// Weight of output k for channel c.
  double Weight(int k, int c) const { return columns_[static_cast<size_t>(c) * OutputCount() + k]; }

  /// Gather-and-sum over strictly increasing active channel positions.
  std::vector<double> InferFrame(std::span<const int> active) const;
  void InferFrame(std::span<const int> active, std::span<double> out) const;

  /// Recovers the per-model coefficient blocks (bit-identical to the
  /// compiled models, in bank order).
  std::vector<ProbeModel> Split() const;

  nlohmann::json ToJson() const;
  static PredictorBank FromJson(const nlohmann::json &j);

 private:
  int channels_ = 0;
  std::vector<double> columns_;  // channel-major: column c is contiguous
  std::vector<double> bias_;
  std::vector<BankOutput> outputs_;
  FeatureSpace space_;
  std::vector<ProbeModel> headers_;  // model metadata without coefficients
};

struct OpCount {
  int64_t adds = 0;        // activity-dependent: K_total * (n_active + 1)
  int64_t worst_case = 0;  // K_total * C*
};

OpCount CountOps(const PredictorBank &bank, int64_t n_active);

enum class Postprocess { kRaw, kProbabilities };

struct OutputTable {
  std::vector<std::string> columns;  // excluding "frame"
  std::vector<std::vector<double>> rows;
};

/// Runs the bank over every frame. Classification targets additionally get
/// a "<target>.class" column with the arg-max class.
OutputTable StreamInfer(const PredictorBank &bank, const BitMatrix &frames,
                        Postprocess post = Postprocess::kRaw);

void WriteOutputTable(const OutputTable &t, const std::filesystem::path &path);

}  // namespace maskprobe

#endif  // MASKPROBE_INFERBANK_H_
