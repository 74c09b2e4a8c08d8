// src/pipeline.cc

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

#include "maskprobe/pipeline.h"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <toml.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "maskprobe/assembly.h"
#include "maskprobe/features.h"

namespace maskprobe {

using nlohmann::json;

namespace {

const char *kVersion = "1.0.0";

std::string ReadBytes(const fs::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

std::string Sha256Hex(const std::string &bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr) != 1)
    throw DataError("sha256 failed");
  static const char *hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < n; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string Sha256File(const fs::path &path) { return Sha256Hex(ReadBytes(path)); }

LoadedFeatures LoadFeatures(const fs::path &path) {
  if (!fs::exists(path)) throw DataError("feature file '" + path.string() + "' does not exist");
  LoadedFeatures f;
  if (path.extension() == ".dcpm") {
    FilteredMasks m;
    if (fs::exists(path.string() + ".json"))
      m = ReadFilteredMasks(path);
    else
      m = KeepAll(ReadMaskFile(path));
    f.X = m.bits.ToDense();
    f.space = FeatureSpace::FromMasks(m);
    f.masks = std::move(m);
    return f;
  }
  f.X = ReadFeatureMatrix(path);
  const fs::path side = path.string() + ".json";
  if (!fs::exists(side)) throw DataError("feature matrix '" + path.string() + "' has no sidecar");
  try {
    f.space = FeatureSpaceFromJson(ReadJsonFile(side).at("feature_space"));
  } catch (const json::exception &e) {
    throw DataError("feature sidecar '" + side.string() + "': " + e.what());
  }
  if (f.space.dim != f.X.cols())
    throw DataError("feature matrix '" + path.string() + "' width differs from its sidecar");
  return f;
}

void WriteBaselineFeatures(const BaselineFeatures &f, const fs::path &path) {
  WriteFeatureMatrix(f.values, path);
  FeatureSpace space;
  space.kind = f.kind;
  space.dim = static_cast<int>(f.values.cols());
  space.zscore = f.zscore;
  // Spread of the stored columns, used to normalise coefficients.
  for (Eigen::Index c = 0; c < f.values.cols(); ++c) {
    const double mean = f.values.col(c).mean();
    space.channel_std.push_back(std::sqrt((f.values.col(c).array() - mean).square().mean()));
  }
  WriteJsonFile({{"feature_space", FeatureSpaceToJson(space)}, {"frames", f.values.rows()}},
                path.string() + ".json");
}

// ---- assemble

StreamManifest AssembleToDir(const AssembleOptions &opt) {
  const UtterancePool speech = ReadUtterancePool(opt.speech_csv, opt.split);
  const NoisePool noise = ReadNoisePool(opt.noise_csv);
  const auto so = StratifiedOrder(speech, opt.strata, DeriveSeed(opt.seed, "speech"));
  const auto no = StratifiedOrder(noise, DeriveSeed(opt.seed, "noise"));
  AssembledStream s = AssembleFromPools(speech, so, noise, no, opt.stft, opt.seed);
  fs::create_directories(opt.out_dir);
  WriteWav(s.clean, opt.out_dir / "clean.wav");
  WriteWav(s.noise, opt.out_dir / "noise.wav");
  WriteWav(s.noisy, opt.out_dir / "noisy.wav");
  WriteManifest(s.manifest, opt.out_dir / "manifest.json");
  WriteJsonFile({{"noise_seams", s.noise_seams}}, opt.out_dir / "noise_seams.json");
  return s.manifest;
}

// ---- targets

namespace {

bool HasWindowColumn(const fs::path &csv) {
  return ReadCsv(csv).Column("window") >= 0;
}

TargetSeries WithIqr(TargetSeries t) {
  t.iqr = DefaultIqr(t.name);
  return t;
}

}  // namespace

TargetRegistry ComputeTargets(const TargetsOptions &opt) {
  opt.vad.Validate();
  const StreamManifest manifest = ReadManifest(opt.stream_dir / "manifest.json");
  const StftConfig &stft = manifest.stft;
  const AudioStream clean = ReadWav(opt.stream_dir / "clean.wav", AudioRole::kClean);
  const AudioStream noisy = ReadWav(opt.stream_dir / "noisy.wav", AudioRole::kNoisy);
  const AudioStream noise = fs::exists(opt.stream_dir / "noise.wav")
                                ? ReadWav(opt.stream_dir / "noise.wav", AudioRole::kNoise)
                                : ExtractNoise(noisy, clean);
  if (clean.sample_rate != stft.sample_rate)
    throw DataError("targets: audio rate " + std::to_string(clean.sample_rate) +
                    " differs from the manifest's " + std::to_string(stft.sample_rate));
  const int64_t L = manifest.NumFrames();
  if (stft.FrameCount(clean.Size()) != L)
    throw DataError("targets: audio has " + std::to_string(stft.FrameCount(clean.Size())) +
                    " frames, manifest " + std::to_string(L));

  const std::vector<double> rms_s = RmsEnvelope(clean.samples, stft);
  const std::vector<double> rms_n = RmsEnvelope(noise.samples, stft);
  TargetSeries vad = VadFromEnvelope(rms_s, opt.vad);
  vad.name = "vad";

  TargetRegistry reg;
  reg.push_back(vad);
  reg.push_back(GateByVad(LabelsFromManifest(manifest, LabelKey::kGender), vad));
  reg.push_back(GateByVad(LabelsFromManifest(manifest, LabelKey::kAccent), vad));
  reg.push_back(LabelsFromManifest(manifest, LabelKey::kNoiseCategory));
  reg.push_back(GateByVad(WithIqr(FrameSnr(rms_s, rms_n, "snr_in")), vad));

  const auto sisdr_cfg = WindowedMetricConfig::SiSdr();
  reg.push_back(GateByVad(
      WithIqr(UpsampleWindowed(WindowedSiSdr(clean, noisy, sisdr_cfg), sisdr_cfg, stft, L,
                               "sisdr_in")),
      vad));
  if (opt.enhanced_wav) {
    const AudioStream enh = ReadWav(*opt.enhanced_wav, AudioRole::kEnhanced);
    if (enh.Size() != clean.Size())
      throw DataError("targets: enhanced audio length differs from the clean stream");
    std::vector<double> resid(enh.samples.size());
    for (size_t i = 0; i < resid.size(); ++i) resid[i] = enh.samples[i] - clean.samples[i];
    reg.push_back(GateByVad(WithIqr(FrameSnr(rms_s, RmsEnvelope(resid, stft), "snr_enh")), vad));
    reg.push_back(GateByVad(
        WithIqr(UpsampleWindowed(WindowedSiSdr(clean, enh, sisdr_cfg), sisdr_cfg, stft, L,
                                 "sisdr_enh")),
        vad));
  }

  for (const auto &[name, path] : opt.external) {
    if (name == "f0") {
      reg.push_back(IngestExternalTarget(path, "f0", TargetKind::kContinuous, 0,
                                         DefaultIqr("f0"), L, true));
    } else if (name == "pesq_in" || name == "pesq_enh") {
      if (HasWindowColumn(path)) {
        const auto cfg = WindowedMetricConfig::Pesq();
        const auto windows = WindowSchedule(cfg, clean.Size(), clean.sample_rate);
        reg.push_back(WithIqr(
            UpsampleWindowed(ReadWindowValues(path, windows.size()), cfg, stft, L, name)));
      } else {
        reg.push_back(IngestExternalTarget(path, name, TargetKind::kContinuous, 0,
                                           DefaultIqr(name), L, false));
      }
    } else {
      throw ConfigError("targets: unknown external target '" + name +
                        "' (expected f0, pesq_in or pesq_enh)");
    }
  }
  std::stable_sort(reg.begin(), reg.end(), [](const TargetSeries &a, const TargetSeries &b) {
    return RosterRank(a.name) < RosterRank(b.name);
  });

  json meta = {{"vad",
                {{"smooth_len", opt.vad.smooth_len},
                 {"threshold_db", opt.vad.threshold_db},
                 {"reference_percentile", opt.vad.reference_percentile},
                 {"second_smooth_len", opt.vad.second_smooth_len},
                 {"second_threshold", opt.vad.second_threshold}}},
               {"snr", "20 log10(rms ratio), clamped to [-50, 30] dB"},
               {"snr_enh_noise", "enhanced minus clean"},
               {"sisdr_window", {{"seconds", sisdr_cfg.window_len}, {"overlap", sisdr_cfg.overlap}}},
               {"gated_by_vad", {"gender", "accent", "snr_in", "snr_enh", "sisdr_in", "sisdr_enh"}}};
  WriteTargetRegistry(reg, opt.out_dir, meta);
  return reg;
}

// ---- features

FilteredMasks SelectFeatures(const MaskTensor &masks, const FeatureSelection &sel,
                             const std::vector<ProbeModel> *models) {
  FilteredMasks f = FilterMasks(masks, sel.tau);
  if (!sel.blocks.empty()) f = RestrictBlocks(f, sel.blocks);
  if (sel.topk > 0) {
    if (!models || models->empty())
      throw ConfigError("features: top-k selection needs models trained on the filtered set");
    if (models->front().Dim() != f.NumKept())
      throw DataError("features: models have " + std::to_string(models->front().Dim()) +
                      " inputs, the filtered set has " + std::to_string(f.NumKept()));
    std::vector<int> order = RankFeatures(*models, f.channel_std);
    order.resize(std::min<size_t>(order.size(), static_cast<size_t>(sel.topk)));
    f = f.Subset(order);
  }
  return f;
}

// ---- infer

FilteredMasks KeepAll(const MaskTensor &masks) {
  FilteredMasks f;
  f.source_blocks = masks.num_blocks;
  f.source_channels_per_block = masks.channels_per_block;
  f.tau = 0.0;
  f.channel_map.resize(masks.NumChannels());
  for (int c = 0; c < masks.NumChannels(); ++c) f.channel_map[c] = c;
  f.channel_std = masks.NumFrames() > 0 ? ColumnStd(masks.bits)
                                        : std::vector<double>(masks.NumChannels(), 0.0);
  f.bits = masks.bits;
  return f;
}

BitMatrix FramesForSpace(const FilteredMasks &frames, const FeatureSpace &space) {
  if (space.kind != FeatureKind::kMasks)
    throw DataError("infer: binary frames given to a '" + FeatureKindName(space.kind) + "' model");
  if (frames.source_blocks != space.source_blocks ||
      frames.source_channels_per_block != space.source_channels_per_block)
    throw DataError("infer: mask geometry differs from the models' feature space");
  if (frames.channel_map == space.channel_map) return frames.bits;
  std::vector<int> pos;
  size_t j = 0;
  for (int c : space.channel_map) {
    while (j < frames.channel_map.size() && frames.channel_map[j] < c) ++j;
    if (j == frames.channel_map.size() || frames.channel_map[j] != c)
      throw DataError("infer: channel " + std::to_string(c) + " is absent from the mask file");
    pos.push_back(static_cast<int>(j));
  }
  return frames.bits.SelectCols(pos);
}

namespace {

void AppendTable(OutputTable *dst, const OutputTable &src) {
  if (dst->rows.empty()) dst->rows.resize(src.rows.size());
  if (dst->rows.size() != src.rows.size()) throw DataError("infer: frame counts differ");
  dst->columns.insert(dst->columns.end(), src.columns.begin(), src.columns.end());
  for (size_t l = 0; l < src.rows.size(); ++l)
    dst->rows[l].insert(dst->rows[l].end(), src.rows[l].begin(), src.rows[l].end());
}

std::vector<std::vector<ProbeModel>> GroupBySpace(const std::vector<ProbeModel> &models) {
  std::vector<std::vector<ProbeModel>> groups;
  for (const auto &m : models) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto &g) {
      return g.front().feature_space.SameAs(m.feature_space);
    });
    if (it == groups.end())
      groups.push_back({m});
    else
      it->push_back(m);
  }
  return groups;
}

}  // namespace

OutputTable InferMasks(const std::vector<ProbeModel> &models, const FilteredMasks &frames,
                       Postprocess post, std::vector<PredictorBank> *banks) {
  if (models.empty()) throw DataError("infer: no models");
  OutputTable out;
  for (const auto &group : GroupBySpace(models)) {
    PredictorBank bank = PredictorBank::Compile(group);
    AppendTable(&out, StreamInfer(bank, FramesForSpace(frames, bank.Space()), post));
    if (banks) banks->push_back(std::move(bank));
  }
  return out;
}

OutputTable InferFeatures(const std::vector<ProbeModel> &models, const Eigen::MatrixXd &X,
                          Postprocess post) {
  if (models.empty()) throw DataError("infer: no models");
  OutputTable out;
  out.rows.resize(X.rows());
  std::vector<std::string> class_cols;
  std::vector<std::vector<double>> class_vals(X.rows());
  for (const auto &m : models) {
    if (m.Dim() != X.cols())
      throw DataError("infer: model '" + m.target + "' expects " + std::to_string(m.Dim()) +
                      " features, got " + std::to_string(X.cols()));
    for (int k = 0; k < m.OutputCount(); ++k)
      out.columns.push_back(m.OutputCount() > 1
                                ? m.target + "." + (k < static_cast<int>(m.class_names.size())
                                                        ? m.class_names[k]
                                                        : std::to_string(k))
                                : m.target);
    const bool cls = m.kind != TargetKind::kContinuous;
    if (cls) class_cols.push_back(m.target + ".class");
    for (Eigen::Index l = 0; l < X.rows(); ++l) {
      const Prediction p = PredictFrame(m, X.row(l).transpose());
      Eigen::VectorXd v = p.scores;
      if (cls && post == Postprocess::kProbabilities) {
        const Eigen::VectorXd prob = ClassProbabilities(m, p.scores);
        v = m.OutputCount() == 1 ? prob.tail(1) : prob;
      }
      out.rows[l].insert(out.rows[l].end(), v.data(), v.data() + v.size());
      if (cls) class_vals[l].push_back(p.label);
    }
  }
  out.columns.insert(out.columns.end(), class_cols.begin(), class_cols.end());
  for (Eigen::Index l = 0; l < X.rows(); ++l)
    out.rows[l].insert(out.rows[l].end(), class_vals[l].begin(), class_vals[l].end());
  return out;
}

// ---- eval

json EvaluateModels(const std::vector<ProbeModel> &models, const LoadedFeatures &f,
                    const TargetRegistry &truth) {
  json out = json::object();
  for (const auto &m : models) {
    if (!m.feature_space.SameAs(f.space) && m.Dim() != f.X.cols())
      throw DataError("eval: features do not match model '" + m.target + "'");
    json j = EvaluateModel(m, f.X, FindTarget(truth, m.target));
    if (m.iqr) j["iqr"] = {m.iqr->first, m.iqr->second};
    out[m.target] = j;
  }
  return out;
}

void WriteHeatmapCsv(const Heatmap &h, const fs::path &path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << "row";
  for (int c : h.channels) os << ",c" << c;
  os << "\nblock";
  for (int b : h.blocks) os << ',' << b;
  os << '\n';
  for (Eigen::Index r = 0; r < h.values.rows(); ++r) {
    os << h.row_labels[r];
    for (Eigen::Index c = 0; c < h.values.cols(); ++c) os << ',' << FormatDouble(h.values(r, c));
    os << '\n';
  }
}

void WritePcaCsv(const Pca &pca, const Eigen::MatrixXd &X, const std::vector<int64_t> &rows,
                 const TargetRegistry &labels, const fs::path &path) {
  Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (size_t i = 0; i < rows.size(); ++i) sub.row(i) = X.row(rows[i]);
  const Eigen::MatrixXd proj = pca.Project(sub);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << "frame";
  for (Eigen::Index k = 0; k < proj.cols(); ++k) os << ",pc" << k + 1;
  for (const auto &t : labels) os << ',' << t.name;
  os << '\n';
  for (size_t i = 0; i < rows.size(); ++i) {
    os << rows[i];
    for (Eigen::Index k = 0; k < proj.cols(); ++k) os << ',' << FormatDouble(proj(i, k));
    for (const auto &t : labels) {
      os << ',';
      if (t.valid[rows[i]]) os << FormatDouble(t.values[rows[i]]);
    }
    os << '\n';
  }
}

// ---- runner

const std::vector<std::string> &StageOrder() {
  static const std::vector<std::string> order = {"assemble", "targets", "synth", "features",
                                                 "train",    "infer",   "eval",  "sv"};
  return order;
}

namespace {

// Typed, schema-checked view of one TOML table.
class Section {
 public:
  Section(const toml::table *t, std::string name) : t_(t), name_(std::move(name)) {}

  bool Present() const { return t_ != nullptr; }
  bool Has(const std::string &key) const { return t_ && t_->contains(key); }

  void AllowKeys(std::initializer_list<const char *> keys) const {
    if (!t_) return;
    for (const auto &[k, v] : *t_) {
      const std::string key(k.str());
      if (std::none_of(keys.begin(), keys.end(), [&](const char *a) { return key == a; }))
        throw ConfigError("config: unknown key '" + key + "' in [" + name_ + "]");
    }
  }

  int64_t Int(const std::string &key, int64_t def) const {
    if (!Has(key)) return def;
    auto v = (*t_)[key].value<int64_t>();
    if (!v || !(*t_)[key].is_integer()) throw Bad(key, "an integer");
    return *v;
  }
  double Double(const std::string &key, double def) const {
    if (!Has(key)) return def;
    const auto &n = (*t_)[key];
    if (!n.is_number()) throw Bad(key, "a number");
    return *n.value<double>();
  }
  bool Bool(const std::string &key, bool def) const {
    if (!Has(key)) return def;
    auto v = (*t_)[key].value<bool>();
    if (!v) throw Bad(key, "a boolean");
    return *v;
  }
  std::string Str(const std::string &key, const std::string &def) const {
    if (!Has(key)) return def;
    auto v = (*t_)[key].value<std::string>();
    if (!v) throw Bad(key, "a string");
    return *v;
  }
  std::vector<std::string> StrList(const std::string &key, std::vector<std::string> def) const {
    if (!Has(key)) return def;
    const toml::array *a = (*t_)[key].as_array();
    if (!a) throw Bad(key, "an array of strings");
    std::vector<std::string> out;
    for (const auto &e : *a) {
      auto v = e.value<std::string>();
      if (!v) throw Bad(key, "an array of strings");
      out.push_back(*v);
    }
    return out;
  }
  std::vector<int64_t> IntList(const std::string &key, std::vector<int64_t> def) const {
    if (!Has(key)) return def;
    const toml::array *a = (*t_)[key].as_array();
    if (!a) throw Bad(key, "an array of integers");
    std::vector<int64_t> out;
    for (const auto &e : *a) {
      if (!e.is_integer()) throw Bad(key, "an array of integers");
      out.push_back(*e.value<int64_t>());
    }
    return out;
  }
  std::map<std::string, std::string> StrTable(const std::string &key) const {
    std::map<std::string, std::string> out;
    if (!Has(key)) return out;
    const toml::table *sub = (*t_)[key].as_table();
    if (!sub) throw Bad(key, "a table of strings");
    for (const auto &[k, v] : *sub) {
      auto s = v.value<std::string>();
      if (!s) throw Bad(key + "." + std::string(k.str()), "a string");
      out[std::string(k.str())] = *s;
    }
    return out;
  }
  uint64_t Seed(uint64_t master) const {
    if (Has("seed")) {
      const int64_t s = Int("seed", 0);
      if (s < 0) throw ConfigError("config: [" + name_ + "].seed must be >= 0");
      return static_cast<uint64_t>(s);
    }
    return DeriveSeed(master, name_);
  }

 private:
  ConfigError Bad(const std::string &key, const char *what) const {
    return ConfigError("config: [" + name_ + "]." + key + " must be " + what);
  }
  const toml::table *t_;
  std::string name_;
};

struct FeatureSet {
  std::string name;
  std::vector<std::string> targets;  // empty = every target
  bool train = true;
  std::string train_file, test_file;
};

json SetsToJson(const std::string &kind, const std::vector<FeatureSet> &sets) {
  json arr = json::array();
  for (const auto &s : sets)
    arr.push_back({{"name", s.name},
                   {"targets", s.targets},
                   {"train", s.train},
                   {"files", {{"train", s.train_file}, {"test", s.test_file}}}});
  return {{"kind", kind}, {"sets", arr}};
}

std::vector<FeatureSet> SetsFromJson(const json &j) {
  std::vector<FeatureSet> out;
  for (const auto &s : j.at("sets"))
    out.push_back({s.at("name").get<std::string>(),
                   s.at("targets").get<std::vector<std::string>>(), s.at("train").get<bool>(),
                   s.at("files").at("train").get<std::string>(),
                   s.at("files").at("test").get<std::string>()});
  return out;
}

class Runner {
 public:
  Runner(const fs::path &config, const std::optional<fs::path> &out_override)
      : config_path_(config) {
    if (!fs::exists(config)) throw ConfigError("config file '" + config.string() + "' not found");
    config_text_ = ReadBytes(config);
    try {
      tbl_ = toml::parse(config_text_, config.string());
    } catch (const toml::parse_error &e) {
      std::ostringstream ss;
      ss << "config: " << e.description() << " at " << e.source().begin;
      throw ConfigError(ss.str());
    }
    base_ = config.has_parent_path() ? config.parent_path() : fs::path(".");
    for (const auto &[k, v] : tbl_) {
      const std::string key(k.str());
      if (key != "run" && key != "stft" &&
          std::find(StageOrder().begin(), StageOrder().end(), key) == StageOrder().end())
        throw ConfigError("config: unknown table [" + key + "]");
      if (!v.is_table()) throw ConfigError("config: '" + key + "' must be a table");
    }
    Section run = S("run");
    run.AllowKeys({"out_dir", "seed", "record_timings", "stages"});
    if (out_override)
      root_ = *out_override;
    else if (run.Has("out_dir"))
      root_ = Resolve(run.Str("out_dir", ""));
    else
      throw ConfigError("config: [run].out_dir is required (or pass --out)");
    const int64_t seed = run.Int("seed", 0);
    if (seed < 0) throw ConfigError("config: [run].seed must be >= 0");
    master_ = static_cast<uint64_t>(seed);
    record_timings_ = run.Bool("record_timings", false);

    Section st = S("stft");
    st.AllowKeys({"sample_rate", "window_len", "hop_len", "fft_size"});
    stft_.sample_rate = static_cast<int>(st.Int("sample_rate", stft_.sample_rate));
    stft_.window_len = static_cast<int>(st.Int("window_len", stft_.window_len));
    stft_.hop_len = static_cast<int>(st.Int("hop_len", stft_.hop_len));
    stft_.fft_size = static_cast<int>(st.Int("fft_size", stft_.fft_size));
    stft_.Validate();

    std::vector<std::string> wanted;
    if (run.Has("stages")) {
      wanted = run.StrList("stages", {});
      for (const auto &s : wanted)
        if (std::find(StageOrder().begin(), StageOrder().end(), s) == StageOrder().end())
          throw ConfigError("config: unknown stage '" + s + "' in [run].stages");
    } else if (S("synth").Present()) {
      wanted = {"synth", "features", "train", "infer", "eval", "sv"};
    } else if (S("assemble").Present()) {
      wanted = {"assemble", "targets", "features", "train", "infer", "eval", "sv"};
    } else {
      throw ConfigError("config: no data source; add [synth] or [assemble], or list [run].stages");
    }
    if (std::count(wanted.begin(), wanted.end(), "synth") &&
        (std::count(wanted.begin(), wanted.end(), "assemble") ||
         std::count(wanted.begin(), wanted.end(), "targets")))
      throw ConfigError("config: synth replaces assemble and targets; do not combine them");
    for (const auto &s : StageOrder())
      if (std::count(wanted.begin(), wanted.end(), s)) stages_.push_back(s);
  }

  RunResult Run() {
    fs::create_directories(root_);
    {
      std::ofstream os(root_ / "config.toml", std::ios::binary | std::ios::trunc);
      os << config_text_;
    }
    json timings = json::object();
    for (const auto &stage : stages_) {
      spdlog::info("run: stage '{}'", stage);
      const auto t0 = std::chrono::steady_clock::now();
      if (stage == "assemble") Assemble();
      if (stage == "targets") Targets();
      if (stage == "synth") Synth();
      if (stage == "features") Features();
      if (stage == "train") Train();
      if (stage == "infer") Infer();
      if (stage == "eval") Eval();
      if (stage == "sv") Sv();
      timings[stage] = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0).count();
    }
    json outputs = json::array();
    std::vector<fs::path> files;
    for (const auto &e : fs::recursive_directory_iterator(root_))
      if (e.is_regular_file() && e.path().filename() != "run_manifest.json")
        files.push_back(fs::relative(e.path(), root_));
    std::sort(files.begin(), files.end());
    for (const auto &f : files)
      outputs.push_back({{"path", f.generic_string()}, {"sha256", Sha256File(root_ / f)}});

    json manifest = {
        {"tool", "maskprobe"},
        {"version", kVersion},
        {"config_sha256", Sha256Hex(config_text_)},
        {"master_seed", master_},
        {"stage_seeds", seeds_},
        {"stages", stages_},
        {"stft", StftToJson(stft_)},
        {"libraries",
         {{"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                                EIGEN_MINOR_VERSION)},
          {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR,
                                        NLOHMANN_JSON_VERSION_MINOR, NLOHMANN_JSON_VERSION_PATCH)},
          {"spdlog", fmt::format("{}.{}.{}", SPDLOG_VER_MAJOR, SPDLOG_VER_MINOR, SPDLOG_VER_PATCH)},
          {"fmt", FMT_VERSION},
          {"tomlplusplus", fmt::format("{}.{}.{}", TOML_LIB_MAJOR, TOML_LIB_MINOR, TOML_LIB_PATCH)}}},
        {"outputs", outputs}};
    if (record_timings_) manifest["timings_ms"] = timings;
    WriteJsonFile(manifest, root_ / "run_manifest.json");
    return {root_, stages_, manifest};
  }

 private:
  Section S(const std::string &name) const { return Section(tbl_[name].as_table(), name); }

  fs::path Resolve(const std::string &p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_ / path;
  }

  uint64_t StageSeed(const std::string &stage) {
    const uint64_t s = S(stage).Seed(master_);
    seeds_[stage] = s;
    return s;
  }

  void Need(const fs::path &rel, const std::string &stage, const std::string &producer) const {
    if (!fs::exists(root_ / rel))
      throw ConfigError("stage '" + stage + "' needs " + rel.generic_string() +
                        ", produced by the '" + producer + "' stage, which has not run in " +
                        root_.string());
  }

  FitConfig TrainConfig() const {
    Section t = S("train");
    FitConfig cfg;
    cfg.alpha = t.Double("alpha", cfg.alpha);
    cfg.max_iters = static_cast<int>(t.Int("max_iters", cfg.max_iters));
    cfg.grad_tol = t.Double("grad_tol", cfg.grad_tol);
    cfg.ftol = t.Double("ftol", cfg.ftol);
    cfg.seed = t.Seed(master_);
    cfg.Validate();
    return cfg;
  }

  void Assemble() {
    Section a = S("assemble");
    a.AllowKeys({"train_speech", "test_speech", "noise", "strata", "seed"});
    for (const char *k : {"train_speech", "test_speech", "noise"})
      if (!a.Has(k)) throw ConfigError(std::string("config: [assemble].") + k + " is required");
    const uint64_t seed = StageSeed("assemble");
    StreamManifest m[2];
    int i = 0;
    for (const char *split : {"train", "test"}) {
      AssembleOptions opt;
      opt.speech_csv = Resolve(a.Str(std::string(split) + "_speech", ""));
      opt.noise_csv = Resolve(a.Str("noise", ""));
      opt.split = split;
      opt.strata = a.StrList("strata", opt.strata);
      opt.stft = stft_;
      opt.seed = DeriveSeed(seed, split);
      opt.out_dir = root_ / "streams" / split;
      m[i++] = AssembleToDir(opt);
    }
    ValidateDisjointSpeakers(m[0], m[1]);
  }

  void Targets() {
    Section t = S("targets");
    t.AllowKeys({"enhanced_train", "enhanced_test", "external_train", "external_test",
                 "smooth_len", "threshold_db", "reference_percentile", "second_smooth_len",
                 "second_threshold"});
    StageSeed("targets");
    for (const std::string split : {"train", "test"}) {
      Need(fs::path("streams") / split / "manifest.json", "targets", "assemble");
      TargetsOptions opt;
      opt.stream_dir = root_ / "streams" / split;
      opt.out_dir = root_ / "targets" / split;
      if (t.Has("enhanced_" + split)) opt.enhanced_wav = Resolve(t.Str("enhanced_" + split, ""));
      for (const auto &[name, path] : t.StrTable("external_" + split))
        opt.external[name] = Resolve(path);
      opt.vad.smooth_len = static_cast<int>(t.Int("smooth_len", opt.vad.smooth_len));
      opt.vad.threshold_db = t.Double("threshold_db", opt.vad.threshold_db);
      opt.vad.reference_percentile = t.Double("reference_percentile", opt.vad.reference_percentile);
      opt.vad.second_smooth_len =
          static_cast<int>(t.Int("second_smooth_len", opt.vad.second_smooth_len));
      opt.vad.second_threshold = t.Double("second_threshold", opt.vad.second_threshold);
      ComputeTargets(opt);
    }
  }

  void Synth() {
    Section s = S("synth");
    s.AllowKeys({"train_frames", "test_frames", "train_speakers", "test_speakers",
                 "min_utterance_frames", "max_utterance_frames", "num_blocks",
                 "channels_per_block", "flip_prob", "constant_fraction", "ladder",
                 "binary_channels", "class_channels", "seed"});
    const uint64_t seed = StageSeed("synth");
    SynthStream streams[2];
    const char *splits[2] = {"train", "test"};
    for (int i = 0; i < 2; ++i) {
      const std::string split = splits[i];
      SynthStreamOptions opt;
      opt.num_frames = s.Int(split + "_frames", 10000);
      opt.speakers = static_cast<int>(s.Int(split + "_speakers", i == 0 ? 20 : 10));
      opt.min_utterance_frames = static_cast<int>(s.Int("min_utterance_frames", 60));
      opt.max_utterance_frames = static_cast<int>(s.Int("max_utterance_frames", 180));
      opt.speaker_prefix = split + "_spk";
      opt.stft = stft_;
      streams[i] = SynthTargetStream(opt, DeriveSeed(seed, split));
      streams[i].manifest.split = split;
      WriteManifest(streams[i].manifest, root_ / "streams" / split / "manifest.json");
      WriteTargetRegistry(streams[i].targets, root_ / "targets" / split,
                          {{"source", "synthetic"}});
    }
    LadderOptions lo;
    lo.ladder = static_cast<int>(s.Int("ladder", 16));
    lo.binary_channels = static_cast<int>(s.Int("binary_channels", lo.binary_channels));
    lo.class_channels = static_cast<int>(s.Int("class_channels", lo.class_channels));
    Codebook cb = DefaultCodebook(streams[0].targets, static_cast<int>(s.Int("num_blocks", 4)),
                                  static_cast<int>(s.Int("channels_per_block", 96)),
                                  s.Double("flip_prob", 0.05), DeriveSeed(seed, "codebook"), lo);
    cb.constant_fraction = s.Double("constant_fraction", cb.constant_fraction);
    cb.Validate();
    WriteJsonFile(CodebookToJson(cb), root_ / "synth" / "codebook.json");
    for (int i = 0; i < 2; ++i)
      WriteMaskFile(SynthMasks(streams[i].targets, cb, DeriveSeed(seed, splits[i])),
                    root_ / "masks" / (std::string(splits[i]) + ".dcpm"));
  }

  void Features() {
    Section f = S("features");
    f.AllowKeys({"kind", "masks_train", "masks_test", "tau", "blocks", "topk", "topk_mode",
                 "seed"});
    StageSeed("features");
    const FeatureKind kind = ParseFeatureKind(f.Str("kind", "masks"));
    std::vector<FeatureSet> sets;
    const fs::path dir = root_ / "features";
    if (kind == FeatureKind::kStftLogMag) {
      if (f.Has("blocks") || f.Has("topk"))
        throw ConfigError("config: blocks and topk apply to mask features only");
      for (const std::string split : {"train", "test"})
        Need(fs::path("streams") / split / "noisy.wav", "features", "assemble");
      const AudioStream tr = ReadWav(root_ / "streams/train/noisy.wav", AudioRole::kNoisy);
      const AudioStream te = ReadWav(root_ / "streams/test/noisy.wav", AudioRole::kNoisy);
      const BaselineFeatures ftr = StftLogMag(tr, stft_);
      const BaselineFeatures fte = StftLogMag(te, stft_, &*ftr.zscore);
      WriteBaselineFeatures(ftr, dir / "all/train.f32");
      WriteBaselineFeatures(fte, dir / "all/test.f32");
      sets.push_back({"all", {}, true, "features/all/train.f32", "features/all/test.f32"});
      WriteJsonFile(SetsToJson(FeatureKindName(kind), sets), dir / "sets.json");
      return;
    }
    if (kind != FeatureKind::kMasks)
      throw ConfigError("config: [features].kind must be 'masks' or 'stft-logmag'");

    fs::path mtr, mte;
    if (f.Has("masks_train") || f.Has("masks_test")) {
      if (!f.Has("masks_train") || !f.Has("masks_test"))
        throw ConfigError("config: set both [features].masks_train and masks_test");
      mtr = Resolve(f.Str("masks_train", ""));
      mte = Resolve(f.Str("masks_test", ""));
    } else if (fs::exists(root_ / "masks/train.dcpm")) {
      mtr = root_ / "masks/train.dcpm";
      mte = root_ / "masks/test.dcpm";
    } else {
      throw ConfigError(
          "stage 'features' needs pruning masks: set [features].masks_train and masks_test, "
          "or run the 'synth' stage");
    }
    for (const auto &p : {mtr, mte})
      if (!fs::exists(p)) throw ConfigError("stage 'features' needs masks file '" + p.string() + "'");
    const MaskTensor raw_tr = ReadMaskFile(mtr), raw_te = ReadMaskFile(mte);

    FeatureSelection sel;
    sel.tau = f.Double("tau", sel.tau);
    for (int64_t b : f.IntList("blocks", {})) sel.blocks.insert(static_cast<int>(b));
    const int topk = static_cast<int>(f.Int("topk", 0));
    const std::string mode = f.Str("topk_mode", "global");
    if (mode != "global" && mode != "per-task")
      throw ConfigError("config: [features].topk_mode must be 'global' or 'per-task'");

    const FilteredMasks base = SelectFeatures(raw_tr, sel, nullptr);
    std::vector<std::pair<FeatureSet, FilteredMasks>> chosen;
    if (topk <= 0) {
      chosen.push_back({{"all", {}, true, "", ""}, base});
    } else {
      Need("targets/train/targets.json", "features", "targets");
      const TargetRegistry reg = ReadTargetRegistry(root_ / "targets/train");
      const SuiteResult suite =
          TrainSuite(base.bits.ToDense(), reg, TrainConfig(), FeatureSpace::FromMasks(base));
      if (suite.models.empty()) throw DataError("features: no model could be trained for ranking");
      auto top = [&](const std::vector<ProbeModel> &ms) {
        std::vector<int> order = RankFeatures(ms, base.channel_std);
        order.resize(std::min<size_t>(order.size(), static_cast<size_t>(topk)));
        return base.Subset(order);
      };
      if (mode == "global") {
        chosen.push_back({{"all", {}, true, "", ""}, top(suite.models)});
      } else {
        chosen.push_back({{"all", {}, false, "", ""}, base});
        for (const auto &m : suite.models)
          chosen.push_back({{m.target, {m.target}, true, "", ""}, top({m})});
      }
    }
    for (auto &[set, fm] : chosen) {
      set.train_file = "features/" + set.name + "/train.dcpm";
      set.test_file = "features/" + set.name + "/test.dcpm";
      WriteFilteredMasks(fm, root_ / set.train_file);
      WriteFilteredMasks(ApplyChannelMap(raw_te, fm), root_ / set.test_file);
      sets.push_back(set);
    }
    json j = SetsToJson(FeatureKindName(kind), sets);
    j["tau"] = sel.tau;
    j["std"] = "population";
    j["blocks"] = std::vector<int>(sel.blocks.begin(), sel.blocks.end());
    j["topk"] = topk;
    j["topk_mode"] = mode;
    WriteJsonFile(j, dir / "sets.json");
  }

  std::vector<FeatureSet> ReadSets(const std::string &stage) const {
    Need("features/sets.json", stage, "features");
    return SetsFromJson(ReadJsonFile(root_ / "features/sets.json"));
  }

  void Train() {
    S("train").AllowKeys({"alpha", "max_iters", "grad_tol", "ftol", "seed"});
    StageSeed("train");
    const auto sets = ReadSets("train");
    Need("targets/train/targets.json", "train", "targets");
    const TargetRegistry reg = ReadTargetRegistry(root_ / "targets/train");
    const FitConfig cfg = TrainConfig();
    std::vector<ProbeModel> models;
    json failures = json::object(), assignment = json::object();
    for (const auto &set : sets) {
      if (!set.train) continue;
      const LoadedFeatures f = LoadFeatures(root_ / set.train_file);
      TargetRegistry sub;
      for (const auto &t : reg)
        if (set.targets.empty() ||
            std::count(set.targets.begin(), set.targets.end(), t.name))
          sub.push_back(t);
      SuiteResult r = TrainSuite(f.X, sub, cfg, f.space);
      for (auto &m : r.models) {
        assignment[m.target] = set.name;
        models.push_back(std::move(m));
      }
      for (const auto &[t, e] : r.failures) failures[t] = e;
    }
    if (models.empty()) throw DataError("train: every target failed");
    fs::remove_all(root_ / "models");
    WriteModels(models, root_ / "models");
    WriteJsonFile({{"assignment", assignment}, {"failures", failures}},
                  root_ / "models/summary.json");
  }

  // Models of each feature set, in set order.
  std::vector<std::pair<FeatureSet, std::vector<ProbeModel>>> ModelsBySet(
      const std::string &stage) const {
    const auto sets = ReadSets(stage);
    Need("models/summary.json", stage, "train");
    const auto models = ReadModels(root_ / "models");
    const json assignment = ReadJsonFile(root_ / "models/summary.json").at("assignment");
    std::vector<std::pair<FeatureSet, std::vector<ProbeModel>>> out;
    for (const auto &set : sets) {
      std::vector<ProbeModel> ms;
      for (const auto &m : models)
        if (assignment.value(m.target, std::string()) == set.name) ms.push_back(m);
      if (!ms.empty()) out.push_back({set, std::move(ms)});
    }
    return out;
  }

  void Infer() {
    Section s = S("infer");
    s.AllowKeys({"probabilities", "seed"});
    StageSeed("infer");
    const Postprocess post =
        s.Bool("probabilities", false) ? Postprocess::kProbabilities : Postprocess::kRaw;
    OutputTable table;
    json ops = json::array();
    for (const auto &[set, models] : ModelsBySet("infer")) {
      const LoadedFeatures f = LoadFeatures(root_ / set.test_file);
      if (f.masks) {
        std::vector<PredictorBank> banks;
        AppendTable(&table, InferMasks(models, *f.masks, post, &banks));
        for (size_t b = 0; b < banks.size(); ++b) {
          const PredictorBank &bank = banks[b];
          const std::string name = set.name + (banks.size() > 1 ? "_" + std::to_string(b) : "");
          WriteJsonFile(bank.ToJson(), root_ / "banks" / (name + ".json"));
          const BitMatrix frames = FramesForSpace(*f.masks, bank.Space());
          int64_t active = 0;
          for (uint8_t v : frames.Data()) active += v;
          const double mean_active =
              frames.Rows() ? static_cast<double>(active) / static_cast<double>(frames.Rows()) : 0.0;
          const OpCount worst = CountOps(bank, bank.ChannelCount());
          ops.push_back({{"bank", name},
                         {"outputs", bank.OutputCount()},
                         {"channels", bank.ChannelCount()},
                         {"worst_case_adds", worst.worst_case},
                         {"mean_active_channels", mean_active},
                         {"mean_adds", bank.OutputCount() * (mean_active + 1.0)}});
        }
      } else {
        AppendTable(&table, InferFeatures(models, f.X, post));
      }
    }
    WriteOutputTable(table, root_ / "predictions/test.csv");
    WriteJsonFile({{"banks", ops}}, root_ / "predictions/opcount.json");
  }

  void Eval() {
    Section s = S("eval");
    s.AllowKeys({"heatmap_topk", "pca_components", "pca_fraction", "seed"});
    const uint64_t seed = StageSeed("eval");
    Need("targets/test/targets.json", "eval", "targets");
    const TargetRegistry truth = ReadTargetRegistry(root_ / "targets/test");
    const auto by_set = ModelsBySet("eval");
    json metrics = json::object();
    for (const auto &[set, models] : by_set) {
      const LoadedFeatures f = LoadFeatures(root_ / set.test_file);
      json m = EvaluateModels(models, f, truth);
      for (auto &[k, v] : m.items()) {
        v["feature_set"] = set.name;
        metrics[k] = v;
      }
    }
    WriteJsonFile(metrics, root_ / "eval/metrics.json");

    // Heatmap and PCA on the shared set (the first set that trained every target).
    const auto shared = std::find_if(by_set.begin(), by_set.end(),
                                     [](const auto &p) { return p.first.targets.empty(); });
    if (shared == by_set.end()) {
      spdlog::info("eval: per-task feature sets, skipping the shared heatmap");
      return;
    }
    const auto &[set, models] = *shared;
    const LoadedFeatures ftr = LoadFeatures(root_ / set.train_file);
    const std::vector<double> &sd = ftr.space.channel_std;
    std::vector<int> order = RankFeatures(models, sd);
    order.resize(std::min<size_t>(order.size(), static_cast<size_t>(s.Int("heatmap_topk", 64))));
    const Heatmap h = HeatmapRows(models, sd, order);
    WriteHeatmapCsv(h, root_ / "eval/heatmap.csv");
    WriteJsonFile({{"zero_rows", h.zero_rows}, {"positions", order}},
                  root_ / "eval/heatmap_meta.json");

    const LoadedFeatures fte = LoadFeatures(root_ / set.test_file);
    const auto rows = SubsampleFrames(fte.X.rows(), s.Double("pca_fraction", 0.1), seed);
    const int k = static_cast<int>(std::min<int64_t>(
        {s.Int("pca_components", 32), fte.X.cols(), static_cast<int64_t>(rows.size()) - 1}));
    if (k < 1) {
      spdlog::warn("eval: too few frames for PCA");
      return;
    }
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), fte.X.cols());
    for (size_t i = 0; i < rows.size(); ++i) sub.row(i) = fte.X.row(rows[i]);
    const Pca pca = PcaFit(sub, k);
    TargetRegistry labels;
    for (const auto &t : truth)
      if (t.IsClassification()) labels.push_back(t);
    WritePcaCsv(pca, fte.X, rows, labels, root_ / "eval/pca.csv");
    WriteJsonFile({{"explained_variance", std::vector<double>(pca.explained_variance.data(),
                                                              pca.explained_variance.data() + k)},
                   {"degenerate_components", pca.degenerate},
                   {"frames", rows.size()}},
                  root_ / "eval/pca_meta.json");
  }

  void Sv() {
    Section s = S("sv");
    s.AllowKeys({"n_enr", "ratio", "lda_dims", "enroll_averaging", "seed"});
    const uint64_t seed = StageSeed("sv");
    const auto sets = ReadSets("sv");
    const auto shared = std::find_if(sets.begin(), sets.end(),
                                     [](const FeatureSet &f) { return f.targets.empty(); });
    if (shared == sets.end()) throw DataError("sv: no shared feature set");
    EmbeddingSet emb[2];
    const char *splits[2] = {"train", "test"};
    for (int i = 0; i < 2; ++i) {
      const std::string split = splits[i];
      Need(fs::path("streams") / split / "manifest.json", "sv", "assemble' or 'synth");
      Need(fs::path("targets") / split / "targets.json", "sv", "targets' or 'synth");
      const StreamManifest m = ReadManifest(root_ / "streams" / split / "manifest.json");
      const TargetRegistry reg = ReadTargetRegistry(root_ / "targets" / split);
      const LoadedFeatures f =
          LoadFeatures(root_ / (i == 0 ? shared->train_file : shared->test_file));
      emb[i] = UtteranceEmbeddings(f.X, FindTarget(reg, "vad"), m);
      WriteJsonFile(EmbeddingsToJson(emb[i]), root_ / "sv" / ("embeddings_" + split + ".json"));
    }
    const SvBackend backend = FitBackend(emb[0], static_cast<int>(s.Int("lda_dims", 16)));
    WriteJsonFile(BackendToJson(backend), root_ / "sv/backend.json");
    const EnrollAveraging avg = ParseEnrollAveraging(s.Str("enroll_averaging", "raw"));
    const int ratio = static_cast<int>(s.Int("ratio", 10));
    json report = {{"enroll_averaging", EnrollAveragingName(avg)},
                   {"lda_dims", backend.lda.rows()},
                   {"ratio", ratio},
                   {"results", json::array()}};
    for (int64_t n : s.IntList("n_enr", {1, 2, 3})) {
      const TrialList trials =
          MakeTrials(emb[1], static_cast<int>(n), ratio, DeriveSeed(seed, static_cast<uint64_t>(n)));
      const std::vector<double> scores = ScoreTrials(backend, emb[1], trials, avg);
      std::vector<uint8_t> tgt;
      for (const auto &t : trials.trials) tgt.push_back(t.is_target);
      const std::string tag = "nenr" + std::to_string(n);
      WriteTrials(trials, root_ / "sv" / ("trials_" + tag + ".csv"));
      WriteScores(trials, scores, root_ / "sv" / ("scores_" + tag + ".csv"));
      report["results"].push_back({{"n_enr", n},
                                   {"eer", Eer(scores, tgt)},
                                   {"target_trials", trials.TargetCount()},
                                   {"nontarget_trials", trials.NonTargetCount()},
                                   {"skipped_speakers", trials.skipped_speakers}});
    }
    WriteJsonFile(report, root_ / "sv/eer.json");
  }

  fs::path config_path_;
  std::string config_text_;
  toml::table tbl_;
  fs::path base_, root_;
  uint64_t master_ = 0;
  bool record_timings_ = false;
  StftConfig stft_;
  std::vector<std::string> stages_;
  json seeds_ = json::object();
};

}  // namespace

RunResult RunPipeline(const fs::path &config, const std::optional<fs::path> &out_dir) {
  Runner r(config, out_dir);
  return r.Run();
}

}  // namespace maskprobe
