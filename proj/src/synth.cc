// src/synth.cc

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

#include "maskprobe/synth.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include "maskprobe/assembly.h"
#include "maskprobe/targets.h"

namespace maskprobe {

using nlohmann::json;

void Codebook::Validate() const {
  if (num_blocks < 1 || channels_per_block < 1)
    throw ConfigError("codebook: num_blocks and channels_per_block must be >= 1");
  if (!(flip_prob >= 0.0 && flip_prob < 0.5))
    throw ConfigError("codebook: flip_prob must lie in [0, 0.5)");
  if (!(constant_fraction >= 0.0 && constant_fraction <= 1.0))
    throw ConfigError("codebook: constant_fraction must lie in [0, 1]");
  std::set<int> seen;
  for (const auto &r : rules) {
    if (r.channel < 0 || r.channel >= NumChannels())
      throw ConfigError("codebook: channel " + std::to_string(r.channel) + " outside [0, " +
                        std::to_string(NumChannels()) + ")");
    if (!seen.insert(r.channel).second)
      throw ConfigError("codebook: channel " + std::to_string(r.channel) + " has two rules");
    if (r.target.empty()) throw ConfigError("codebook: rule without a target");
    if (r.type == RuleType::kClassSet && r.classes.empty())
      throw ConfigError("codebook: class-set rule on '" + r.target + "' lists no classes");
  }
}

SpareLayout LayoutSpares(const Codebook &cb) {
  std::vector<uint8_t> ruled(cb.NumChannels(), 0);
  for (const auto &r : cb.rules) ruled[r.channel] = 1;
  std::vector<int> spare;
  for (int c = 0; c < cb.NumChannels(); ++c)
    if (!ruled[c]) spare.push_back(c);
  Rng rng(DeriveSeed(cb.seed, "spares"));
  rng.Shuffle(&spare);
  const size_t n_const =
      static_cast<size_t>(std::llround(cb.constant_fraction * static_cast<double>(spare.size())));
  SpareLayout out;
  std::vector<int> consts(spare.begin(), spare.begin() + n_const);
  std::sort(consts.begin(), consts.end());
  for (int c : consts) {
    out.constant_channels.push_back(c);
    out.constant_values.push_back(rng.Bernoulli(0.5) ? 1 : 0);
  }
  out.random_channels.assign(spare.begin() + n_const, spare.end());
  std::sort(out.random_channels.begin(), out.random_channels.end());
  return out;
}

MaskTensor SynthMasks(const TargetRegistry &targets, const Codebook &cb, uint64_t stream) {
  cb.Validate();
  if (targets.empty()) throw DataError("synth_masks: empty target registry");
  const int64_t L = targets.front().Length();
  std::map<std::string, const TargetSeries *> by_name;
  for (const auto &t : targets) {
    if (t.Length() != L)
      throw DataError("synth_masks: target '" + t.name + "' has " + std::to_string(t.Length()) +
                      " frames, expected " + std::to_string(L));
    by_name[t.name] = &t;
  }
  std::set<std::string> covered;
  for (const auto &r : cb.rules) {
    if (!by_name.count(r.target))
      throw DataError("synth_masks: rule on channel " + std::to_string(r.channel) +
                      " references missing target '" + r.target + "'");
    covered.insert(r.target);
  }
  for (const auto &t : targets)
    if (!covered.count(t.name))
      throw DataError("synth_masks: target '" + t.name + "' has no channel in the codebook");

  MaskTensor m;
  m.num_blocks = cb.num_blocks;
  m.channels_per_block = cb.channels_per_block;
  m.bits = BitMatrix(L, cb.NumChannels());
  const SpareLayout spares = LayoutSpares(cb);
  const uint64_t noise_seed = DeriveSeed(cb.seed, stream);

  // Each job writes only its own columns.
  auto ruled = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      const ChannelRule &r = cb.rules[i];
      const TargetSeries &t = *by_name.at(r.target);
      std::set<int> cls(r.classes.begin(), r.classes.end());
      Rng rng(DeriveSeed(noise_seed, static_cast<uint64_t>(r.channel)));
      for (int64_t l = 0; l < L; ++l) {
        bool bit = false;
        if (t.valid[l])
          bit = r.type == RuleType::kThreshold ? t.values[l] > r.threshold
                                               : cls.count(static_cast<int>(t.values[l])) > 0;
        if (!r.polarity) bit = !bit;
        // Draw on every frame so the noise pattern does not depend on the data.
        if (rng.Bernoulli(cb.flip_prob)) bit = !bit;
        m.bits.Set(l, r.channel, bit);
      }
    }
  };
  const size_t n = cb.rules.size();
  const size_t workers = std::max<size_t>(1, std::min<size_t>(std::thread::hardware_concurrency(), n / 16));
  std::vector<std::future<void>> jobs;
  for (size_t w = 0; w < workers; ++w)
    jobs.push_back(std::async(std::launch::async, ruled, n * w / workers, n * (w + 1) / workers));
  for (auto &j : jobs) j.get();

  for (size_t i = 0; i < spares.constant_channels.size(); ++i)
    for (int64_t l = 0; l < L; ++l)
      m.bits.Set(l, spares.constant_channels[i], spares.constant_values[i]);
  for (int c : spares.random_channels) {
    Rng rng(DeriveSeed(noise_seed, static_cast<uint64_t>(c)));
    for (int64_t l = 0; l < L; ++l) m.bits.Set(l, c, rng.Bernoulli(0.5));
  }
  return m;
}

Codebook DefaultCodebook(const TargetRegistry &targets, int num_blocks, int channels_per_block,
                         double flip_prob, uint64_t seed, const LadderOptions &opt) {
  Codebook cb;
  cb.num_blocks = num_blocks;
  cb.channels_per_block = channels_per_block;
  cb.flip_prob = flip_prob;
  cb.seed = seed;

  std::vector<ChannelRule> rules;
  for (const auto &t : targets) {
    if (t.kind == TargetKind::kBinary) {
      for (int i = 0; i < opt.binary_channels; ++i)
        rules.push_back({0, t.name, RuleType::kClassSet, 0.0, {1}, true});
    } else if (t.kind == TargetKind::kMultiClass) {
      for (int k = 0; k < t.num_classes; ++k)
        for (int i = 0; i < opt.class_channels; ++i)
          rules.push_back({0, t.name, RuleType::kClassSet, 0.0, {k}, true});
    } else {
      double lo = 0, hi = 0;
      bool any = false;
      for (int64_t l = 0; l < t.Length(); ++l) {
        if (!t.valid[l]) continue;
        lo = any ? std::min(lo, t.values[l]) : t.values[l];
        hi = any ? std::max(hi, t.values[l]) : t.values[l];
        any = true;
      }
      if (!any) throw DataError("default_codebook: target '" + t.name + "' has no valid frame");
      for (int i = 0; i < opt.ladder; ++i)
        rules.push_back({0, t.name, RuleType::kThreshold,
                         lo + (i + 0.5) * (hi - lo) / opt.ladder, {}, true});
    }
  }
  if (static_cast<int>(rules.size()) > cb.NumChannels())
    throw ConfigError("default_codebook: " + std::to_string(rules.size()) +
                      " ruled channels do not fit in " + std::to_string(cb.NumChannels()));
  std::vector<int> positions(cb.NumChannels());
  std::iota(positions.begin(), positions.end(), 0);
  Rng rng(DeriveSeed(seed, "positions"));
  rng.Shuffle(&positions);
  for (size_t i = 0; i < rules.size(); ++i) rules[i].channel = positions[i];
  cb.rules = std::move(rules);
  cb.Validate();
  return cb;
}

json CodebookToJson(const Codebook &cb) {
  json rules = json::array();
  for (const auto &r : cb.rules) {
    json j = {{"channel", r.channel},
              {"target", r.target},
              {"type", r.type == RuleType::kThreshold ? "threshold" : "class_set"},
              {"polarity", r.polarity}};
    if (r.type == RuleType::kThreshold)
      j["threshold"] = r.threshold;
    else
      j["classes"] = r.classes;
    rules.push_back(j);
  }
  return {{"num_blocks", cb.num_blocks},
          {"channels_per_block", cb.channels_per_block},
          {"flip_prob", cb.flip_prob},
          {"constant_fraction", cb.constant_fraction},
          {"seed", cb.seed},
          {"rules", rules}};
}

Codebook CodebookFromJson(const json &j) {
  Codebook cb;
  try {
    cb.num_blocks = j.at("num_blocks").get<int>();
    cb.channels_per_block = j.at("channels_per_block").get<int>();
    cb.flip_prob = j.value("flip_prob", 0.0);
    cb.constant_fraction = j.value("constant_fraction", 0.5);
    cb.seed = j.value("seed", uint64_t{0});
    for (const auto &r : j.at("rules")) {
      ChannelRule rule;
      rule.channel = r.at("channel").get<int>();
      rule.target = r.at("target").get<std::string>();
      const std::string type = r.value("type", std::string("threshold"));
      if (type == "threshold") {
        rule.type = RuleType::kThreshold;
        rule.threshold = r.at("threshold").get<double>();
      } else if (type == "class_set") {
        rule.type = RuleType::kClassSet;
        rule.classes = r.at("classes").get<std::vector<int>>();
      } else {
        throw ConfigError("codebook: unknown rule type '" + type + "'");
      }
      rule.polarity = r.value("polarity", true);
      cb.rules.push_back(std::move(rule));
    }
  } catch (const json::exception &e) {
    throw ConfigError(std::string("codebook: ") + e.what());
  }
  cb.Validate();
  return cb;
}

namespace {

// Mean-reverting AR(1) walk.
class Walk {
 public:
  Walk(double mean, double sd, double rho, uint64_t seed)
      : mean_(mean), sd_(sd), rho_(rho), rng_(seed), x_(mean) {}
  double Next() {
    x_ = mean_ + rho_ * (x_ - mean_) + sd_ * std::sqrt(1 - rho_ * rho_) * rng_.Normal();
    return x_;
  }

 private:
  double mean_, sd_, rho_;
  Rng rng_;
  double x_;
};

TargetSeries Continuous(const std::string &name, std::vector<double> values) {
  TargetSeries t;
  t.name = name;
  t.kind = TargetKind::kContinuous;
  t.valid.assign(values.size(), 1);
  t.values = std::move(values);
  t.iqr = DefaultIqr(name);
  return t;
}

}  // namespace

SynthStream SynthTargetStream(const SynthStreamOptions &opt, uint64_t seed) {
  if (opt.num_frames < 2) throw ConfigError("synth stream: num_frames must be >= 2");
  if (opt.speakers < 2) throw ConfigError("synth stream: need at least 2 speakers");
  if (opt.min_utterance_frames < 1 || opt.max_utterance_frames < opt.min_utterance_frames)
    throw ConfigError("synth stream: bad utterance length range");
  const LabelVocabulary vocab;
  Rng rng(DeriveSeed(seed, "speakers"));

  struct Speaker {
    std::string id, gender, accent;
    double f0;
  };
  std::vector<Speaker> speakers;
  for (int s = 0; s < opt.speakers; ++s) {
    Speaker sp;
    sp.id = fmt::format("{}{:02d}", opt.speaker_prefix, s);
    sp.gender = vocab.genders[s % 2];
    sp.accent = vocab.accents[rng.Below(vocab.accents.size())];
    sp.f0 = sp.gender == "M" ? 100 + 40 * rng.Uniform() : 180 + 60 * rng.Uniform();
    speakers.push_back(sp);
  }

  SynthStream out;
  StreamManifest &m = out.manifest;
  m.split = "synthetic";
  m.seed = seed;
  m.stft = opt.stft;
  Rng urng(DeriveSeed(seed, "utterances"));
  std::vector<int> spk_of_segment;
  int64_t frame = 0;
  int u = 0;
  while (frame < opt.num_frames) {
    const int64_t len = std::min<int64_t>(
        opt.num_frames - frame,
        opt.min_utterance_frames +
            static_cast<int64_t>(urng.Below(opt.max_utterance_frames - opt.min_utterance_frames + 1)));
    // Cycle speakers in seeded rounds so every speaker recurs.
    if (u % opt.speakers == 0) {
      std::vector<int> order(opt.speakers);
      std::iota(order.begin(), order.end(), 0);
      urng.Shuffle(&order);
      spk_of_segment.insert(spk_of_segment.end(), order.begin(), order.end());
    }
    const Speaker &sp = speakers[spk_of_segment[u]];
    Segment s;
    s.utterance_id = sp.id + "_u" + std::to_string(u);
    s.speaker_id = sp.id;
    s.gender = sp.gender;
    s.accent = sp.accent;
    s.noise_category = vocab.noise_categories[urng.Below(vocab.noise_categories.size())];
    s.start_frame = frame;
    s.end_frame = frame + len;
    m.segments.push_back(s);
    frame += len;
    ++u;
  }
  m.num_samples = (opt.num_frames - 1) * opt.stft.hop_len + opt.stft.window_len;
  m.Validate();

  const int64_t L = opt.num_frames;
  // Bursty VAD: silence then alternating runs inside each utterance.
  TargetSeries vad;
  vad.name = "vad";
  vad.kind = TargetKind::kBinary;
  vad.num_classes = 2;
  vad.class_names = {"inactive", "active"};
  vad.values.assign(L, 0.0);
  vad.valid.assign(L, 1);
  Rng vrng(DeriveSeed(seed, "vad"));
  for (const auto &s : m.segments) {
    int64_t l = s.start_frame;
    bool active = false;
    while (l < s.end_frame) {
      const int64_t run = active ? 20 + vrng.Below(61) : 5 + vrng.Below(26);
      const int64_t e = std::min(s.end_frame, l + run);
      for (; l < e; ++l) vad.values[l] = active ? 1.0 : 0.0;
      active = !active;
    }
  }

  Walk snr(2.0, 9.0, 0.995, DeriveSeed(seed, "snr_in"));
  Walk e1(0, 1.0, 0.98, DeriveSeed(seed, "snr_enh"));
  Walk e2(0, 1.0, 0.98, DeriveSeed(seed, "sisdr_in"));
  Walk e3(0, 1.0, 0.98, DeriveSeed(seed, "sisdr_enh"));
  Walk e4(0, 0.05, 0.99, DeriveSeed(seed, "pesq_in"));
  Walk e5(0, 0.05, 0.99, DeriveSeed(seed, "pesq_enh"));
  Walk e6(0, 6.0, 0.9, DeriveSeed(seed, "f0"));
  std::vector<double> snr_in(L), snr_enh(L), sisdr_in(L), sisdr_enh(L), pesq_in(L), pesq_enh(L),
      f0(L);
  std::vector<uint8_t> f0_valid(L);
  size_t seg = 0;
  for (int64_t l = 0; l < L; ++l) {
    while (l >= m.segments[seg].end_frame) ++seg;
    const double x = std::clamp(snr.Next(), kDbFloor, kDbCeil);
    snr_in[l] = x;
    snr_enh[l] = std::clamp(0.5 * x + 9.0 + e1.Next(), kDbFloor, kDbCeil);
    sisdr_in[l] = std::clamp(0.6 * x + 3.5 + e2.Next(), kDbFloor, kDbCeil);
    sisdr_enh[l] = std::clamp(0.4 * x + 12.0 + e3.Next(), kDbFloor, kDbCeil);
    pesq_in[l] = std::clamp(1.45 + 0.02 * x + e4.Next(), 1.0, 4.5);
    pesq_enh[l] = std::clamp(2.75 + 0.015 * x + e5.Next(), 1.0, 4.5);
    const Speaker &sp = speakers[spk_of_segment[seg]];
    f0_valid[l] = vad.values[l] == 1.0;
    f0[l] = f0_valid[l] ? sp.f0 + e6.Next() : 0.0;
  }

  TargetRegistry &reg = out.targets;
  reg.push_back(vad);
  reg.push_back(GateByVad(LabelsFromManifest(m, LabelKey::kGender, vocab), vad));
  reg.push_back(GateByVad(LabelsFromManifest(m, LabelKey::kAccent, vocab), vad));
  reg.push_back(LabelsFromManifest(m, LabelKey::kNoiseCategory, vocab));
  reg.push_back(GateByVad(Continuous("snr_in", snr_in), vad));
  reg.push_back(GateByVad(Continuous("snr_enh", snr_enh), vad));
  reg.push_back(GateByVad(Continuous("sisdr_in", sisdr_in), vad));
  reg.push_back(GateByVad(Continuous("sisdr_enh", sisdr_enh), vad));
  reg.push_back(Continuous("pesq_in", pesq_in));
  reg.push_back(Continuous("pesq_enh", pesq_enh));
  TargetSeries f0_ts = Continuous("f0", f0);
  f0_ts.valid = f0_valid;
  reg.push_back(f0_ts);
  for (const auto &t : reg) t.Validate();
  return out;
}

}  // namespace maskprobe
