// src/assembly.cc

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

#include "maskprobe/assembly.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <future>
#include <map>
#include <set>

#include "maskprobe/io.h"

namespace maskprobe {

namespace {

std::filesystem::path Resolve(const std::filesystem::path &base,
                              const std::string &p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

int RequireColumn(const CsvTable &t, const std::string &name,
                  const std::filesystem::path &csv) {
  int c = t.Column(name);
  if (c < 0)
    throw DataError("'" + csv.string() + "': missing column '" + name + "'");
  return c;
}

}  // namespace

UtterancePool ReadUtterancePool(const std::filesystem::path &csv,
                                const std::string &split) {
  CsvTable t = ReadCsv(csv);
  const int id = RequireColumn(t, "id", csv), path = RequireColumn(t, "path", csv),
            spk = RequireColumn(t, "speaker", csv),
            gender = RequireColumn(t, "gender", csv),
            accent = RequireColumn(t, "accent", csv);
  UtterancePool pool;
  pool.split = split;
  const int split_col = t.Column("split");
  std::set<std::string> seen;
  for (const auto &r : t.rows) {
    if (split_col >= 0 && r[split_col] != split) continue;
    if (!seen.insert(r[id]).second)
      throw DataError("'" + csv.string() + "': duplicate utterance id '" +
                      r[id] + "'");
    pool.entries.push_back(
        {r[id], r[spk], r[gender], r[accent], Resolve(csv.parent_path(), r[path])});
  }
  if (pool.entries.empty())
    throw DataError("'" + csv.string() + "': no utterances for split '" + split + "'");
  return pool;
}

NoisePool ReadNoisePool(const std::filesystem::path &csv) {
  CsvTable t = ReadCsv(csv);
  const int id = RequireColumn(t, "id", csv), path = RequireColumn(t, "path", csv),
            cat = RequireColumn(t, "category", csv);
  NoisePool pool;
  std::set<std::string> seen;
  for (const auto &r : t.rows) {
    if (!seen.insert(r[id]).second)
      throw DataError("'" + csv.string() + "': duplicate excerpt id '" + r[id] +
                      "'");
    pool.entries.push_back({r[id], r[cat], Resolve(csv.parent_path(), r[path])});
  }
  return pool;
}

AudioStream ExtractNoise(const AudioStream &noisy, const AudioStream &clean) {
  if (noisy.sample_rate != clean.sample_rate)
    throw DataError("extract_noise: sample rate mismatch (" +
                    std::to_string(noisy.sample_rate) + " vs " +
                    std::to_string(clean.sample_rate) + ")");
  if (noisy.Size() != clean.Size())
    throw DataError("extract_noise: length mismatch (" +
                    std::to_string(noisy.Size()) + " vs " +
                    std::to_string(clean.Size()) + ")");
  AudioStream n;
  n.role = AudioRole::kNoise;
  n.sample_rate = noisy.sample_rate;
  n.samples.resize(noisy.samples.size());
  for (size_t i = 0; i < n.samples.size(); ++i)
    n.samples[i] = noisy.samples[i] - clean.samples[i];
  return n;
}

std::vector<size_t> StratifiedOrder(const std::vector<std::string> &stratum_of,
                                    uint64_t seed) {
  if (stratum_of.empty()) throw DataError("stratified_order: empty pool");
  std::map<std::string, std::vector<size_t>> strata;
  for (size_t i = 0; i < stratum_of.size(); ++i) strata[stratum_of[i]].push_back(i);

  Rng rng(seed);
  std::vector<std::vector<size_t>> queues;
  for (auto &[key, members] : strata) {
    rng.Shuffle(&members);
    queues.push_back(members);
  }
  std::vector<size_t> pos(queues.size(), 0), order;
  order.reserve(stratum_of.size());
  while (order.size() < stratum_of.size()) {
    std::vector<size_t> active;
    for (size_t s = 0; s < queues.size(); ++s)
      if (pos[s] < queues[s].size()) active.push_back(s);
    rng.Shuffle(&active);
    for (size_t s : active) order.push_back(queues[s][pos[s]++]);
  }
  return order;
}

std::vector<size_t> StratifiedOrder(const UtterancePool &pool,
                                    const std::vector<std::string> &keys,
                                    uint64_t seed) {
  std::vector<std::string> labels;
  for (const auto &e : pool.entries) {
    std::string label;
    for (const auto &k : keys) {
      if (k == "gender") label += e.gender;
      else if (k == "accent") label += e.accent;
      else if (k == "speaker") label += e.speaker_id;
      else throw ConfigError("stratified_order: unknown stratum key '" + k + "'");
      label += '\x1f';
    }
    labels.push_back(label);
  }
  return StratifiedOrder(labels, seed);
}

std::vector<size_t> StratifiedOrder(const NoisePool &pool, uint64_t seed) {
  std::vector<std::string> labels;
  for (const auto &e : pool.entries) labels.push_back(e.noise_category);
  return StratifiedOrder(labels, seed);
}

AssembledStream AssembleStream(const std::vector<Utterance> &speech,
                               const std::vector<NoiseExcerpt> &noise,
                               const StftConfig &stft, const std::string &split,
                               uint64_t seed) {
  stft.Validate();
  if (speech.empty()) throw DataError("assemble_stream: empty speech pool");
  if (noise.empty()) throw DataError("assemble_stream: empty noise pool");
  for (const auto &u : speech)
    if (u.audio.sample_rate != stft.sample_rate)
      throw DataError("utterance '" + u.meta.utterance_id + "' has rate " +
                      std::to_string(u.audio.sample_rate) + ", expected " +
                      std::to_string(stft.sample_rate));
  bool any_noise = false;
  for (const auto &n : noise) {
    if (n.audio.sample_rate != stft.sample_rate)
      throw DataError("noise excerpt '" + n.meta.excerpt_id + "' has rate " +
                      std::to_string(n.audio.sample_rate) + ", expected " +
                      std::to_string(stft.sample_rate));
    any_noise |= n.audio.Size() > 0;
  }
  if (!any_noise) throw DataError("assemble_stream: all noise excerpts are empty");

  AssembledStream out;
  out.clean.role = AudioRole::kClean;
  out.noise.role = AudioRole::kNoise;
  out.noisy.role = AudioRole::kNoisy;
  out.clean.sample_rate = out.noise.sample_rate = out.noisy.sample_rate =
      stft.sample_rate;

  std::vector<int64_t> starts;
  for (const auto &u : speech) {
    starts.push_back(out.clean.Size());
    out.clean.samples.insert(out.clean.samples.end(), u.audio.samples.begin(),
                             u.audio.samples.end());
  }
  const int64_t speech_len = out.clean.Size();
  if (speech_len < stft.window_len)
    throw DataError("assemble_stream: total speech shorter than one window");
  out.clean.samples.resize(speech_len + stft.window_len - stft.hop_len, 0.0);
  const int64_t total = out.clean.Size();

  // One continuous noise track, independent of utterance boundaries.
  out.noise.samples.reserve(total);
  std::vector<NoisePlacement> track;
  int loop = 0;
  for (size_t k = 0; out.noise.Size() < total; ++k) {
    if (k == noise.size()) {
      k = 0;
      ++loop;
      out.noise_seams.push_back(out.noise.Size());
      spdlog::debug("assemble: noise order exhausted at sample {}, looping",
                   out.noise.Size());
    }
    const auto &ex = noise[k];
    if (ex.audio.Size() == 0) continue;
    const int64_t take = std::min<int64_t>(ex.audio.Size(), total - out.noise.Size());
    const int64_t at = out.noise.Size();
    out.noise.samples.insert(out.noise.samples.end(), ex.audio.samples.begin(),
                             ex.audio.samples.begin() + take);
    track.push_back({ex.meta.excerpt_id, ex.meta.noise_category, at, at + take, loop});
  }

  out.noisy.samples.resize(total);
  for (int64_t i = 0; i < total; ++i)
    out.noisy.samples[i] = out.clean.samples[i] + out.noise.samples[i];

  StreamManifest &m = out.manifest;
  m.split = split;
  m.seed = seed;
  m.stft = stft;
  m.num_samples = total;
  m.noise_track = std::move(track);
  size_t placement = 0;
  for (size_t k = 0; k < speech.size(); ++k) {
    const int64_t a = starts[k];
    const int64_t b = k + 1 < speech.size() ? starts[k + 1] : speech_len;
    while (m.noise_track[placement].end_sample <= a) ++placement;
    const auto &meta = speech[k].meta;
    m.segments.push_back({meta.utterance_id, meta.speaker_id, meta.gender,
                          meta.accent, m.noise_track[placement].noise_category,
                          a / stft.hop_len, b / stft.hop_len});
  }
  m.Validate();
  if (stft.FrameCount(total) != m.NumFrames())
    throw DataError("assemble_stream: internal frame count mismatch");
  return out;
}

AssembledStream AssembleFromPools(const UtterancePool &speech,
                                  const std::vector<size_t> &speech_order,
                                  const NoisePool &noise,
                                  const std::vector<size_t> &noise_order,
                                  const StftConfig &stft, uint64_t seed) {
  if (speech_order.empty() || noise_order.empty())
    throw DataError("assemble: empty pool");
  // Decoding is independent per file; concatenation below stays sequential.
  std::vector<std::future<AudioStream>> speech_jobs, noise_jobs;
  for (size_t i : speech_order)
    speech_jobs.push_back(std::async(std::launch::async, ReadWav,
                                     speech.entries.at(i).wav, AudioRole::kClean));
  for (size_t i : noise_order)
    noise_jobs.push_back(std::async(std::launch::async, ReadWav,
                                    noise.entries.at(i).wav, AudioRole::kNoise));
  std::vector<Utterance> utts;
  for (size_t k = 0; k < speech_order.size(); ++k)
    utts.push_back({speech.entries[speech_order[k]], speech_jobs[k].get()});
  std::vector<NoiseExcerpt> excerpts;
  for (size_t k = 0; k < noise_order.size(); ++k)
    excerpts.push_back({noise.entries[noise_order[k]], noise_jobs[k].get()});
  return AssembleStream(utts, excerpts, stft, speech.split, seed);
}

LabelKey ParseLabelKey(const std::string &name) {
  if (name == "gender") return LabelKey::kGender;
  if (name == "accent") return LabelKey::kAccent;
  if (name == "noise" || name == "noise_category") return LabelKey::kNoiseCategory;
  if (name == "speaker") return LabelKey::kSpeaker;
  throw ConfigError("unknown label key '" + name + "'");
}

TargetSeries LabelsFromManifest(const StreamManifest &manifest, LabelKey key,
                                const LabelVocabulary &vocab) {
  manifest.Validate();
  TargetSeries ts;
  std::vector<std::string> classes;
  switch (key) {
    case LabelKey::kGender:
      ts.name = "gender";
      classes = vocab.genders;
      break;
    case LabelKey::kAccent:
      ts.name = "accent";
      classes = vocab.accents;
      break;
    case LabelKey::kNoiseCategory:
      ts.name = "noise";
      classes = vocab.noise_categories;
      break;
    case LabelKey::kSpeaker: {
      ts.name = "speaker";
      std::set<std::string> spk;
      for (const auto &s : manifest.segments) spk.insert(s.speaker_id);
      classes.assign(spk.begin(), spk.end());
      break;
    }
  }
  if (classes.size() < 2)
    throw ConfigError("labels: vocabulary for '" + ts.name + "' needs >= 2 classes");
  ts.kind = classes.size() == 2 ? TargetKind::kBinary : TargetKind::kMultiClass;
  ts.num_classes = static_cast<int>(classes.size());
  ts.class_names = classes;

  auto index_of = [&](const std::string &label) -> int {
    if (key == LabelKey::kAccent) {
      const size_t kept = classes.size() - 1;
      for (size_t c = 0; c < kept; ++c)
        if (classes[c] == label) return static_cast<int>(c);
      return static_cast<int>(kept);
    }
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end())
      throw DataError("labels: value '" + label + "' is not in the '" + ts.name +
                      "' vocabulary");
    return static_cast<int>(it - classes.begin());
  };

  const int64_t frames = manifest.NumFrames();
  ts.values.assign(frames, 0.0);
  ts.valid.assign(frames, 1);
  for (const auto &s : manifest.segments) {
    const std::string &label = key == LabelKey::kGender     ? s.gender
                               : key == LabelKey::kAccent   ? s.accent
                               : key == LabelKey::kSpeaker  ? s.speaker_id
                                                            : s.noise_category;
    const double c = index_of(label);
    std::fill(ts.values.begin() + s.start_frame, ts.values.begin() + s.end_frame, c);
  }
  return ts;
}

}  // namespace maskprobe
