// maskprobe/assembly.h

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

// Builds long continuous clean / noise / noisy streams from utterance and
// noise pools, together with a frame-aligned metadata timeline.

#ifndef MASKPROBE_ASSEMBLY_H_
#define MASKPROBE_ASSEMBLY_H_

#include <filesystem>
#include <string>
#include <vector>

#include "maskprobe/core.h"

namespace maskprobe {

struct UtteranceEntry {
  std::string utterance_id;
  std::string speaker_id;
  std::string gender;
  std::string accent;
  std::filesystem::path wav;
};

struct NoiseEntry {
  std::string excerpt_id;
  std::string noise_category;
  std::filesystem::path wav;
};

struct UtterancePool {
  std::string split;
  std::vector<UtteranceEntry> entries;
};

struct NoisePool {
  std::vector<NoiseEntry> entries;
};

/// Speech pool CSV columns: id,path,speaker,gender,accent, and optionally
/// split (rows of other splits are skipped). Relative paths resolve against
/// the CSV's directory. Duplicate ids throw DataError.
UtterancePool ReadUtterancePool(const std::filesystem::path &csv,
                                const std::string &split);
/// Noise pool CSV columns: id,path,category.
NoisePool ReadNoisePool(const std::filesystem::path &csv);

/// n = x - s, samplewise.
AudioStream ExtractNoise(const AudioStream &noisy, const AudioStream &clean);

/// Seeded permutation of entry indices, balanced across strata: the order is
/// emitted in rounds, each round taking one entry from every stratum that
/// still has entries, in a seeded stratum order. At every prefix, counts of
/// strata that still have entries differ by at most one.
/// `stratum_of` holds one stratum label per entry.
std::vector<size_t> StratifiedOrder(const std::vector<std::string> &stratum_of,
                                    uint64_t seed);

/// Strata keys for utterances: any of "gender", "accent", "speaker".
std::vector<size_t> StratifiedOrder(const UtterancePool &pool,
                                    const std::vector<std::string> &keys,
                                    uint64_t seed);
/// Noise pools are stratified by noise_category.
std::vector<size_t> StratifiedOrder(const NoisePool &pool, uint64_t seed);

struct Utterance {
  UtteranceEntry meta;
  AudioStream audio;
};

struct NoiseExcerpt {
  NoiseEntry meta;
  AudioStream audio;
};

struct AssembledStream {
  AudioStream clean;
  AudioStream noise;
  AudioStream noisy;
  StreamManifest manifest;
  /// Sample positions at which the noise order wrapped around.
  std::vector<int64_t> noise_seams;
};

/// Concatenates utterances into s and noise excerpts into one continuous
/// noise track n (looped on exhaustion, truncated to the speech length),
/// and mixes x = s + n without any gain change.
///
/// Segment k spans frames [floor(a_k / hop), floor(a_{k+1} / hop)) where a_k
/// is the first sample of utterance k. The streams carry a trailing
/// (window_len - hop_len) samples of speech silence so that the STFT frame
/// count equals the manifest's last end_frame. Each segment is labelled with
/// the noise category active at its first sample.
AssembledStream AssembleStream(const std::vector<Utterance> &speech,
                               const std::vector<NoiseExcerpt> &noise,
                               const StftConfig &stft, const std::string &split,
                               uint64_t seed);

/// Loads the pool entries in the given order and assembles them.
AssembledStream AssembleFromPools(const UtterancePool &speech,
                                  const std::vector<size_t> &speech_order,
                                  const NoisePool &noise,
                                  const std::vector<size_t> &noise_order,
                                  const StftConfig &stft, uint64_t seed);

/// Class vocabularies of the metadata targets.
struct LabelVocabulary {
  std::vector<std::string> genders = {"M", "F"};
  /// The first five are kept; everything else maps to the last entry.
  std::vector<std::string> accents = {"English", "American", "Scottish",
                                      "Irish",   "Canadian", "Other"};
  std::vector<std::string> noise_categories = {
      "Domestic", "Office", "Public", "Transportation", "Street", "Artificial"};
};

enum class LabelKey { kGender, kAccent, kNoiseCategory, kSpeaker };

LabelKey ParseLabelKey(const std::string &name);

/// Per-frame class series from the manifest. Speaker vocabulary is the
/// sorted set of speakers present. Throws DataError on a label outside the
/// vocabulary (accents never fail; unknown accents become "Other").
TargetSeries LabelsFromManifest(const StreamManifest &manifest, LabelKey key,
                                const LabelVocabulary &vocab = {});

}  // namespace maskprobe

#endif  // MASKPROBE_ASSEMBLY_H_
