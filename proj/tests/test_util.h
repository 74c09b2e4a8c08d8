// tests/test_util.h

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

#ifndef MASKPROBE_TESTS_TEST_UTIL_H_
#define MASKPROBE_TESTS_TEST_UTIL_H_

#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "maskprobe/common.h"
#include "maskprobe/core.h"
#include "maskprobe/probes.h"

namespace testutil {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string &tag) {
    path_ = fs::temp_directory_path() /
            ("maskprobe_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path &path() const { return path_; }
  fs::path operator/(const std::string &p) const { return path_ / p; }

 private:
  fs::path path_;
};

inline maskprobe::BitMatrix RandomBits(int64_t rows, int64_t cols, double p, uint64_t seed) {
  maskprobe::Rng rng(seed);
  maskprobe::BitMatrix b(rows, cols);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) b.Set(r, c, rng.Bernoulli(p));
  return b;
}

inline maskprobe::TargetSeries Continuous(const std::string &name, std::vector<double> v) {
  maskprobe::TargetSeries t;
  t.name = name;
  t.kind = maskprobe::TargetKind::kContinuous;
  t.values = std::move(v);
  t.valid.assign(t.values.size(), 1);
  return t;
}

inline maskprobe::TargetSeries Classes(const std::string &name, std::vector<double> v, int k) {
  maskprobe::TargetSeries t;
  t.name = name;
  t.kind = k == 2 ? maskprobe::TargetKind::kBinary : maskprobe::TargetKind::kMultiClass;
  t.num_classes = k;
  for (int c = 0; c < k; ++c) t.class_names.push_back("c" + std::to_string(c));
  t.values = std::move(v);
  t.valid.assign(t.values.size(), 1);
  return t;
}

/// Feature space for real-valued test matrices.
inline maskprobe::FeatureSpace DenseSpace(int dim) {
  maskprobe::FeatureSpace s;
  s.kind = maskprobe::FeatureKind::kStftLogMag;
  s.dim = dim;
  s.channel_std.assign(dim, 1.0);
  return s;
}

/// Feature space for unfiltered binary masks of one block.
inline maskprobe::FeatureSpace MaskSpace(int dim) {
  maskprobe::FeatureSpace s;
  s.kind = maskprobe::FeatureKind::kMasks;
  s.dim = dim;
  s.source_blocks = 1;
  s.source_channels_per_block = dim;
  for (int c = 0; c < dim; ++c) s.channel_map.push_back(c);
  s.channel_std.assign(dim, 0.5);
  return s;
}

/// Random model with the given output count over a feature space.
inline maskprobe::ProbeModel RandomModel(const std::string &target, maskprobe::TargetKind kind,
                                         int outputs, const maskprobe::FeatureSpace &space,
                                         maskprobe::Rng *rng) {
  maskprobe::ProbeModel m;
  m.target = target;
  m.kind = kind;
  m.num_classes = kind == maskprobe::TargetKind::kContinuous ? 0
                  : kind == maskprobe::TargetKind::kBinary   ? 2
                                                             : outputs;
  for (int k = 0; k < m.num_classes; ++k) m.class_names.push_back("k" + std::to_string(k));
  m.weights.resize(outputs, space.dim);
  for (int k = 0; k < outputs; ++k)
    for (int c = 0; c < space.dim; ++c) m.weights(k, c) = rng->Normal();
  m.bias.resize(outputs);
  for (int k = 0; k < outputs; ++k) m.bias(k) = rng->Normal();
  m.feature_space = space;
  return m;
}

}  // namespace testutil

#endif  // MASKPROBE_TESTS_TEST_UTIL_H_
