// maskprobe/synth.h

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

// Synthetic pruning masks whose channels are known functions of target
// series, plus a generator of synthetic target streams to feed them.

#ifndef MASKPROBE_SYNTH_H_
#define MASKPROBE_SYNTH_H_

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "maskprobe/core.h"
#include "maskprobe/io.h"

namespace maskprobe {

enum class RuleType { kThreshold, kClassSet };

/// One channel driven by a target. Threshold: bit = value > threshold.
/// Class set: bit = value is one of `classes`. Polarity false inverts the
/// bit. Invalid frames give 0 before inversion.
struct ChannelRule {
  int channel = 0;
  std::string target;
  RuleType type = RuleType::kThreshold;
  double threshold = 0.0;
  std::vector<int> classes;
  bool polarity = true;
};

struct Codebook {
  int num_blocks = 1;
  int channels_per_block = 0;
  double flip_prob = 0.0;         // in [0, 0.5)
  double constant_fraction = 0.5; // share of unruled channels held constant
  uint64_t seed = 0;
  std::vector<ChannelRule> rules;

  int NumChannels() const { return num_blocks * channels_per_block; }
  /// Throws ConfigError on bad ranges, duplicate or out-of-range channels.
  void Validate() const;
};

/// Which unruled channels are constant (and their value); the rest are
/// Bernoulli(0.5) distractors. Deterministic per codebook seed.
struct SpareLayout {
  std::vector<int> constant_channels;
  std::vector<uint8_t> constant_values;
  std::vector<int> random_channels;
};
SpareLayout LayoutSpares(const Codebook &cb);

/// Ruled channels: rule(target) XOR Bernoulli(flip_prob); constant channels
/// exactly constant; every channel draws from its own derived seed. The
/// channel layout depends on the codebook only; `stream` varies the noise
/// draws so that several streams can share one codebook. Throws DataError
/// when a rule names a missing target, targets differ in length, or a
/// registry target has no channel.
MaskTensor SynthMasks(const TargetRegistry &targets, const Codebook &cb, uint64_t stream = 0);

struct LadderOptions {
  int binary_channels = 8;      // redundant copies per binary target
  int class_channels = 4;       // copies per class of a multi-class target
  int ladder = 64;              // thresholds per continuous target
};

/// Rules for every target in the registry at seeded channel positions:
/// binary targets copy the class-1 indicator, multi-class targets get
/// indicators per class, continuous targets a threshold ladder evenly
/// spaced over the range of their valid values.
Codebook DefaultCodebook(const TargetRegistry &targets, int num_blocks,
                         int channels_per_block, double flip_prob, uint64_t seed,
                         const LadderOptions &opt = {});

nlohmann::json CodebookToJson(const Codebook &cb);
Codebook CodebookFromJson(const nlohmann::json &j);

struct SynthStreamOptions {
  int64_t num_frames = 10000;
  int speakers = 20;
  int min_utterance_frames = 120;
  int max_utterance_frames = 360;
  std::string speaker_prefix = "spk";  // keeps splits' speakers disjoint
  StftConfig stft;
};

struct SynthStream {
  StreamManifest manifest;
  TargetRegistry targets;  // full roster, in roster order
};

/// A synthetic stream: utterances of seeded speakers with gender, accent
/// and noise labels, bursty VAD, and smooth continuous targets (random
/// walks) clipped to plausible ranges. Gender, accent, SNR and SI-SDR are
/// gated by the VAD; F0 is valid only on active frames.
SynthStream SynthTargetStream(const SynthStreamOptions &opt, uint64_t seed);

}  // namespace maskprobe

#endif  // MASKPROBE_SYNTH_H_
