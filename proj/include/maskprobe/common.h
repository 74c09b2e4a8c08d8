// maskprobe/common.h

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

#ifndef MASKPROBE_COMMON_H_
#define MASKPROBE_COMMON_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskprobe {

/// Malformed or inconsistent data: corrupt containers, length mismatches,
/// degenerate inputs an operation cannot handle. Maps to CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic 64-bit generator used everywhere a seed appears.
/// SplitMix64 seeding feeds a xoshiro256** state so that results do not
/// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t Next();
  /// Uniform integer in [0, n); n > 0.
  uint64_t Below(uint64_t n);
  /// Uniform double in [0, 1) with 53 random bits.
  double Uniform();
  double Normal();
  bool Bernoulli(double p) { return Uniform() < p; }

  template <typename T>
  void Shuffle(std::vector<T> *v) {
    for (size_t i = v->size(); i > 1; --i) {
      size_t j = static_cast<size_t>(Below(i));
      std::swap((*v)[i - 1], (*v)[j]);
    }
  }

 private:
  uint64_t s_[4];
};

/// Derives an independent stream seed from a master seed and a label.
uint64_t DeriveSeed(uint64_t master, uint64_t stream);
uint64_t DeriveSeed(uint64_t master, const std::string &label);

std::vector<std::string> SplitString(const std::string &s, char sep);
std::string Trim(const std::string &s);

}  // namespace maskprobe

#endif  // MASKPROBE_COMMON_H_
