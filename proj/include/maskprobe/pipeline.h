// maskprobe/pipeline.h

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

// File-level stage operations shared by the subcommands and by the
// config-driven runner.
//
// Run directory layout:
//   streams/<split>/   clean.wav noise.wav noisy.wav manifest.json
//   targets/<split>/   targets.json + one CSV per target
//   synth/codebook.json, masks/<split>.dcpm
//   features/<set>/<split>.dcpm (+ .json sidecar) or .f32, sets.json
//   models/, banks/, predictions/, eval/, sv/
//   run_manifest.json

#ifndef MASKPROBE_PIPELINE_H_
#define MASKPROBE_PIPELINE_H_

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "maskprobe/evalmetrics.h"
#include "maskprobe/inferbank.h"
#include "maskprobe/probes.h"
#include "maskprobe/sv.h"
#include "maskprobe/synth.h"
#include "maskprobe/targets.h"

namespace maskprobe {

namespace fs = std::filesystem;

std::string Sha256Hex(const std::string &bytes);
std::string Sha256File(const fs::path &path);

/// A probe input matrix with the description of its columns.
struct LoadedFeatures {
  Eigen::MatrixXd X;
  FeatureSpace space;
  std::optional<FilteredMasks> masks;  // set for binary mask features
};

/// ".dcpm" loads FilteredMasks (a raw mask file without sidecar is taken
/// as-is, every channel kept); anything else loads a feature matrix with its
/// "<path>.json" sidecar.
LoadedFeatures LoadFeatures(const fs::path &path);
void WriteBaselineFeatures(const BaselineFeatures &f, const fs::path &path);

// ---- assemble

struct AssembleOptions {
  fs::path speech_csv;
  fs::path noise_csv;
  std::string split = "train";
  std::vector<std::string> strata = {"gender", "accent"};
  StftConfig stft;
  uint64_t seed = 0;
  fs::path out_dir;
};

/// Writes clean/noise/noisy WAVs, manifest.json and noise_seams.json.
StreamManifest AssembleToDir(const AssembleOptions &opt);

// ---- targets

struct TargetsOptions {
  fs::path stream_dir;
  fs::path out_dir;
  std::optional<fs::path> enhanced_wav;     // enables snr_enh and sisdr_enh
  std::map<std::string, fs::path> external;  // f0, pesq_in, pesq_enh
  VadParams vad;
};

/// Computes every target the inputs allow and writes the registry.
/// External CSVs with a "window" column are per-window values aligned
/// with the target's window schedule; otherwise they are per-frame.
TargetRegistry ComputeTargets(const TargetsOptions &opt);

// ---- features

struct FeatureSelection {
  double tau = 0.005;
  std::set<int> blocks;  // empty = all
  int topk = 0;          // 0 = no ranking
};

/// Filters, restricts and (given models trained on the filtered set) keeps
/// the top-k ranked channels.
FilteredMasks SelectFeatures(const MaskTensor &masks, const FeatureSelection &sel,
                             const std::vector<ProbeModel> *models);

// ---- infer

/// The columns of `frames` that a feature space expects, in its order.
/// Throws DataError when a required channel is missing.
BitMatrix FramesForSpace(const FilteredMasks &frames, const FeatureSpace &space);

/// A raw mask tensor viewed as a filtered set that keeps every channel.
FilteredMasks KeepAll(const MaskTensor &masks);

/// Runs mask-feature models over binary frames, one compiled bank per
/// distinct feature space (in order of first appearance). Output columns
/// follow the banks.
OutputTable InferMasks(const std::vector<ProbeModel> &models, const FilteredMasks &frames,
                       Postprocess post, std::vector<PredictorBank> *banks = nullptr);
/// Dense evaluation for real-valued features in the models' feature space.
OutputTable InferFeatures(const std::vector<ProbeModel> &models, const Eigen::MatrixXd &X,
                          Postprocess post);

// ---- eval

nlohmann::json EvaluateModels(const std::vector<ProbeModel> &models, const LoadedFeatures &f,
                              const TargetRegistry &truth);
void WriteHeatmapCsv(const Heatmap &h, const fs::path &path);
/// Projection CSV: frame, pc1..pck, then one column per label series.
void WritePcaCsv(const Pca &pca, const Eigen::MatrixXd &X, const std::vector<int64_t> &rows,
                 const TargetRegistry &labels, const fs::path &path);

// ---- runner

struct RunResult {
  fs::path run_dir;
  std::vector<std::string> stages;
  nlohmann::json manifest;
};

/// Executes the stages configured in a TOML file. `out_dir` overrides
/// [run].out_dir. Throws ConfigError on schema violations and missing stage
/// inputs, DataError on bad data.
RunResult RunPipeline(const fs::path &config, const std::optional<fs::path> &out_dir = {});

/// Stage names in dependency order.
const std::vector<std::string> &StageOrder();

}  // namespace maskprobe

#endif  // MASKPROBE_PIPELINE_H_
