// tools/maskprobe.cc

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

#include <spdlog/spdlog.h>

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "maskprobe/features.h"
#include "maskprobe/pipeline.h"

using namespace maskprobe;
using nlohmann::json;

namespace {

std::set<int> ParseIntSet(const std::string &s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      size_t pos = 0;
      const int v = std::stoi(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.insert(v);
    } catch (const std::exception &) {
      throw ConfigError("'" + item + "' is not an integer");
    }
  }
  return out;
}

std::vector<std::string> SplitList(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void AddStftOptions(CLI::App *app, StftConfig *stft) {
  app->add_option("--sample-rate", stft->sample_rate, "Sample rate in Hz")->capture_default_str();
  app->add_option("--window-len", stft->window_len, "STFT window in samples")->capture_default_str();
  app->add_option("--hop-len", stft->hop_len, "STFT hop in samples")->capture_default_str();
  app->add_option("--fft-size", stft->fft_size, "FFT size")->capture_default_str();
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"maskprobe: auxiliary estimators read out from binary channel-pruning masks"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // assemble
  AssembleOptions asm_opt;
  std::string asm_strata = "gender,accent";
  auto *assemble = app.add_subcommand("assemble", "Concatenate utterances and noise into a stream");
  assemble->add_option("--speech", asm_opt.speech_csv, "Utterance pool CSV")->required();
  assemble->add_option("--noise", asm_opt.noise_csv, "Noise pool CSV")->required();
  assemble->add_option("--split", asm_opt.split, "Split to draw from the pool")->capture_default_str();
  assemble->add_option("--strata", asm_strata, "Comma-separated ordering strata")->capture_default_str();
  assemble->add_option("--seed", asm_opt.seed, "Seed")->capture_default_str();
  assemble->add_option("--out-dir", asm_opt.out_dir, "Output stream directory")->required();
  AddStftOptions(assemble, &asm_opt.stft);

  // targets
  TargetsOptions tg_opt;
  std::vector<std::string> tg_external;
  std::string tg_enhanced;
  auto *targets = app.add_subcommand("targets", "Compute per-frame targets for a stream");
  targets->add_option("--stream-dir", tg_opt.stream_dir, "Stream directory from assemble")->required();
  targets->add_option("--out-dir", tg_opt.out_dir, "Target registry directory")->required();
  targets->add_option("--enhanced", tg_enhanced, "Enhanced WAV (enables snr_enh, sisdr_enh)");
  targets->add_option("--external", tg_external,
                      "External target name=path (f0, pesq_in, pesq_enh); repeatable");
  targets->add_option("--vad-smooth", tg_opt.vad.smooth_len, "VAD envelope smoothing (frames)")
      ->capture_default_str();
  targets->add_option("--vad-threshold-db", tg_opt.vad.threshold_db,
                      "VAD threshold relative to the reference level")->capture_default_str();
  targets->add_option("--vad-percentile", tg_opt.vad.reference_percentile,
                      "Reference percentile of the envelope")->capture_default_str();
  targets->add_option("--vad-second-smooth", tg_opt.vad.second_smooth_len,
                      "Decision smoothing (frames)")->capture_default_str();
  targets->add_option("--vad-second-threshold", tg_opt.vad.second_threshold,
                      "Decision threshold after smoothing")->capture_default_str();

  // features
  std::string ft_masks, ft_blocks, ft_models, ft_out, ft_like, ft_kind = "masks", ft_audio, ft_stats;
  double ft_tau = 0.005;
  int ft_topk = 0;
  StftConfig ft_stft;
  auto *features = app.add_subcommand("features", "Filter masks or compute baseline features");
  features->add_option("--kind", ft_kind, "masks or stft-logmag")->capture_default_str();
  features->add_option("--masks", ft_masks, "Mask file (.dcpm)");
  features->add_option("--tau", ft_tau, "Standard-deviation threshold")->capture_default_str();
  features->add_option("--blocks", ft_blocks, "Comma-separated blocks to keep");
  features->add_option("--topk", ft_topk, "Keep the k top-ranked channels (needs --models)");
  features->add_option("--models", ft_models, "Models trained on the filtered set, for --topk");
  features->add_option("--like", ft_like,
                       "Reuse the channel selection of a filtered mask file instead of fitting");
  features->add_option("--audio", ft_audio, "WAV input for stft-logmag");
  features->add_option("--stats-from", ft_stats,
                       "stft-logmag feature file whose z-score statistics are reused");
  features->add_option("--out", ft_out, "Output feature file")->required();
  AddStftOptions(features, &ft_stft);

  // train
  std::string tr_features, tr_targets, tr_out, tr_only;
  FitConfig tr_cfg;
  auto *train = app.add_subcommand("train", "Fit one probe per target");
  train->add_option("--features", tr_features, "Feature file")->required();
  train->add_option("--targets", tr_targets, "Target registry directory")->required();
  train->add_option("--alpha", tr_cfg.alpha, "L2 regularization")->capture_default_str();
  train->add_option("--max-iters", tr_cfg.max_iters, "Logistic solver iterations")->capture_default_str();
  train->add_option("--grad-tol", tr_cfg.grad_tol, "Logistic gradient tolerance")->capture_default_str();
  train->add_option("--ftol", tr_cfg.ftol, "Relative objective decrease that stops the solver")
      ->capture_default_str();
  train->add_option("--seed", tr_cfg.seed, "Seed")->capture_default_str();
  train->add_option("--only", tr_only, "Comma-separated subset of targets");
  train->add_option("--out", tr_out, "Model directory")->required();

  // infer
  std::string in_bank, in_models, in_masks, in_features, in_out, in_bank_out;
  bool in_prob = false;
  auto *infer = app.add_subcommand("infer", "Run probes over frames");
  auto *in_bank_opt = infer->add_option("--bank", in_bank, "Compiled bank JSON");
  auto *in_models_opt = infer->add_option("--models", in_models, "Model directory");
  in_bank_opt->excludes(in_models_opt);
  infer->add_option("--masks", in_masks, "Mask file (.dcpm)");
  infer->add_option("--features", in_features, "Real-valued feature file (with --models)");
  infer->add_flag("--probabilities", in_prob, "Emit class probabilities instead of raw scores");
  infer->add_option("--bank-out", in_bank_out, "Write the compiled bank (with --models)");
  infer->add_option("--out", in_out, "Output CSV")->required();

  // eval
  std::string ev_models, ev_features, ev_targets, ev_out, ev_heatmap;
  int ev_topk = 64;
  auto *eval = app.add_subcommand("eval", "Score probes against ground truth");
  eval->add_option("--models", ev_models, "Model directory")->required();
  eval->add_option("--features", ev_features, "Feature file")->required();
  eval->add_option("--targets", ev_targets, "Target registry directory")->required();
  eval->add_option("--out", ev_out, "Metrics JSON")->required();
  eval->add_option("--heatmap", ev_heatmap, "Write a coefficient heatmap CSV");
  eval->add_option("--heatmap-topk", ev_topk, "Heatmap columns")->capture_default_str();

  // sv
  std::string sv_emb, sv_train, sv_out = ".", sv_feat, sv_stream, sv_tg, sv_avg = "raw";
  std::vector<int> sv_nenr = {1};
  int sv_ratio = 10, sv_lda = 16;
  uint64_t sv_seed = 0;
  auto *sv = app.add_subcommand("sv", "Speaker verification from mask embeddings");
  sv->add_option("--embeddings", sv_emb,
                 "Test embeddings JSON (written here when --features is given)")->required();
  sv->add_option("--features", sv_feat, "Compute embeddings from this feature file");
  sv->add_option("--stream-dir", sv_stream, "Stream directory (manifest), with --features");
  sv->add_option("--targets", sv_tg, "Target registry (vad), with --features");
  sv->add_option("--train", sv_train, "Training embeddings JSON for the backend");
  sv->add_option("--nenr", sv_nenr, "Enrollment utterances per speaker")->capture_default_str();
  sv->add_option("--ratio", sv_ratio, "Non-target trials per target trial")->capture_default_str();
  sv->add_option("--lda-dims", sv_lda, "LDA output dimension")->capture_default_str();
  sv->add_option("--enroll-averaging", sv_avg, "raw or projected")->capture_default_str();
  sv->add_option("--seed", sv_seed, "Trial seed")->capture_default_str();
  sv->add_option("--out", sv_out, "Output directory for trials, scores and EER")->capture_default_str();

  // synth
  std::string sy_targets, sy_codebook, sy_out, sy_stream_out;
  uint64_t sy_stream = 0, sy_seed = 0;
  int sy_blocks = 4, sy_cpb = 96;
  double sy_flip = 0.0;
  LadderOptions sy_ladder;
  SynthStreamOptions sy_sopt;
  auto *synth = app.add_subcommand("synth", "Synthetic masks from targets and a codebook");
  synth->add_option("--targets", sy_targets, "Target registry directory");
  synth->add_option("--codebook", sy_codebook,
                    "Codebook JSON (created from --targets when missing)")->required();
  synth->add_option("--out", sy_out, "Output mask file");
  synth->add_option("--stream", sy_stream, "Noise stream index")->capture_default_str();
  synth->add_option("--seed", sy_seed, "Seed for new codebooks and streams")->capture_default_str();
  synth->add_option("--blocks", sy_blocks, "Blocks of a new codebook")->capture_default_str();
  synth->add_option("--channels-per-block", sy_cpb, "Channels per block of a new codebook")
      ->capture_default_str();
  synth->add_option("--flip-prob", sy_flip, "Bit-flip probability of a new codebook")
      ->capture_default_str();
  synth->add_option("--ladder", sy_ladder.ladder, "Thresholds per continuous target")
      ->capture_default_str();
  synth->add_option("--make-stream", sy_stream_out,
                    "Write a synthetic stream (manifest + targets) to this directory first");
  synth->add_option("--frames", sy_sopt.num_frames, "Frames of a synthetic stream")
      ->capture_default_str();
  synth->add_option("--speakers", sy_sopt.speakers, "Speakers of a synthetic stream")
      ->capture_default_str();
  synth->add_option("--speaker-prefix", sy_sopt.speaker_prefix, "Speaker id prefix")
      ->capture_default_str();

  // run
  std::string run_config, run_out;
  auto *run = app.add_subcommand("run", "Execute the stages of a TOML config");
  run->add_option("--config", run_config, "Config file")->required();
  run->add_option("--out", run_out, "Run directory (overrides [run].out_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*assemble) {
      asm_opt.strata = SplitList(asm_strata);
      AssembleToDir(asm_opt);
    } else if (*targets) {
      if (!tg_enhanced.empty()) tg_opt.enhanced_wav = tg_enhanced;
      for (const auto &e : tg_external) {
        const auto eq = e.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == e.size())
          throw ConfigError("--external expects name=path, got '" + e + "'");
        tg_opt.external[e.substr(0, eq)] = e.substr(eq + 1);
      }
      ComputeTargets(tg_opt);
    } else if (*features) {
      const FeatureKind kind = ParseFeatureKind(ft_kind);
      if (kind == FeatureKind::kStftLogMag) {
        if (ft_audio.empty()) throw ConfigError("--kind stft-logmag needs --audio");
        const AudioStream a = ReadWav(ft_audio, AudioRole::kNoisy);
        std::optional<ZscoreStats> stats;
        if (!ft_stats.empty()) {
          const LoadedFeatures ref = LoadFeatures(ft_stats);
          if (!ref.space.zscore) throw DataError("'" + ft_stats + "' carries no z-score statistics");
          stats = ref.space.zscore;
        }
        WriteBaselineFeatures(StftLogMag(a, ft_stft, stats ? &*stats : nullptr), ft_out);
      } else {
        if (ft_masks.empty()) throw ConfigError("--kind masks needs --masks");
        const MaskTensor raw = ReadMaskFile(ft_masks);
        if (!ft_like.empty()) {
          WriteFilteredMasks(ApplyChannelMap(raw, ReadFilteredMasks(ft_like)), ft_out);
        } else {
          FeatureSelection sel;
          sel.tau = ft_tau;
          sel.blocks = ParseIntSet(ft_blocks);
          sel.topk = ft_topk;
          std::vector<ProbeModel> models;
          if (!ft_models.empty()) models = ReadModels(ft_models);
          WriteFilteredMasks(SelectFeatures(raw, sel, ft_models.empty() ? nullptr : &models),
                             ft_out);
        }
      }
    } else if (*train) {
      tr_cfg.Validate();
      const LoadedFeatures f = LoadFeatures(tr_features);
      TargetRegistry reg = ReadTargetRegistry(tr_targets);
      if (!tr_only.empty()) {
        TargetRegistry sub;
        for (const auto &name : SplitList(tr_only)) sub.push_back(FindTarget(reg, name));
        reg = sub;
      }
      const SuiteResult r = TrainSuite(f.X, reg, tr_cfg, f.space);
      for (const auto &[t, e] : r.failures) spdlog::warn("train: '{}' failed: {}", t, e);
      if (r.models.empty()) throw DataError("train: every target failed");
      WriteModels(r.models, tr_out);
    } else if (*infer) {
      const Postprocess post = in_prob ? Postprocess::kProbabilities : Postprocess::kRaw;
      OutputTable table;
      if (!in_bank.empty()) {
        if (in_masks.empty()) throw ConfigError("--bank needs --masks");
        const PredictorBank bank = PredictorBank::FromJson(ReadJsonFile(in_bank));
        const LoadedFeatures f = LoadFeatures(in_masks);
        table = StreamInfer(bank, FramesForSpace(*f.masks, bank.Space()), post);
      } else if (!in_models.empty()) {
        const auto models = ReadModels(in_models);
        if (!in_masks.empty()) {
          const LoadedFeatures f = LoadFeatures(in_masks);
          std::vector<PredictorBank> banks;
          table = InferMasks(models, *f.masks, post, &banks);
          if (!in_bank_out.empty()) {
            if (banks.size() != 1)
              throw ConfigError("--bank-out needs models sharing one feature space");
            WriteJsonFile(banks.front().ToJson(), in_bank_out);
          }
        } else if (!in_features.empty()) {
          table = InferFeatures(models, LoadFeatures(in_features).X, post);
        } else {
          throw ConfigError("infer needs --masks or --features");
        }
      } else {
        throw ConfigError("infer needs --bank or --models");
      }
      WriteOutputTable(table, in_out);
    } else if (*eval) {
      const auto models = ReadModels(ev_models);
      const LoadedFeatures f = LoadFeatures(ev_features);
      WriteJsonFile(EvaluateModels(models, f, ReadTargetRegistry(ev_targets)), ev_out);
      if (!ev_heatmap.empty()) {
        std::vector<int> order = RankFeatures(models, f.space.channel_std);
        order.resize(std::min<size_t>(order.size(), static_cast<size_t>(std::max(ev_topk, 0))));
        WriteHeatmapCsv(HeatmapRows(models, f.space.channel_std, order), ev_heatmap);
      }
    } else if (*sv) {
      EmbeddingSet test;
      if (!sv_feat.empty()) {
        if (sv_stream.empty() || sv_tg.empty())
          throw ConfigError("--features needs --stream-dir and --targets");
        const LoadedFeatures f = LoadFeatures(sv_feat);
        const StreamManifest m = ReadManifest(fs::path(sv_stream) / "manifest.json");
        test = UtteranceEmbeddings(f.X, FindTarget(ReadTargetRegistry(sv_tg), "vad"), m);
        WriteJsonFile(EmbeddingsToJson(test), sv_emb);
      } else {
        test = EmbeddingsFromJson(ReadJsonFile(sv_emb));
      }
      if (!sv_train.empty()) {
        const SvBackend backend = FitBackend(EmbeddingsFromJson(ReadJsonFile(sv_train)), sv_lda);
        const EnrollAveraging avg = ParseEnrollAveraging(sv_avg);
        const fs::path out(sv_out);
        WriteJsonFile(BackendToJson(backend), out / "backend.json");
        json report = json::array();
        for (int n : sv_nenr) {
          const TrialList trials = MakeTrials(test, n, sv_ratio, DeriveSeed(sv_seed, n));
          const auto scores = ScoreTrials(backend, test, trials, avg);
          std::vector<uint8_t> tgt;
          for (const auto &t : trials.trials) tgt.push_back(t.is_target);
          const std::string tag = "nenr" + std::to_string(n);
          WriteTrials(trials, out / ("trials_" + tag + ".csv"));
          WriteScores(trials, scores, out / ("scores_" + tag + ".csv"));
          const double eer = Eer(scores, tgt);
          std::cout << "n_enr=" << n << " eer=" << FormatDouble(eer) << "\n";
          report.push_back({{"n_enr", n}, {"eer", eer}, {"target_trials", trials.TargetCount()},
                            {"nontarget_trials", trials.NonTargetCount()}});
        }
        WriteJsonFile({{"results", report}}, out / "eer.json");
      } else if (sv_feat.empty()) {
        throw ConfigError("sv needs --train to score trials");
      }
    } else if (*synth) {
      if (!sy_stream_out.empty()) {
        const SynthStream s = SynthTargetStream(sy_sopt, sy_seed);
        WriteManifest(s.manifest, fs::path(sy_stream_out) / "manifest.json");
        WriteTargetRegistry(s.targets, fs::path(sy_stream_out) / "targets", {{"source", "synthetic"}});
        if (sy_targets.empty()) sy_targets = (fs::path(sy_stream_out) / "targets").string();
      }
      if (sy_targets.empty()) throw ConfigError("synth needs --targets or --make-stream");
      const TargetRegistry reg = ReadTargetRegistry(sy_targets);
      Codebook cb;
      if (fs::exists(sy_codebook)) {
        cb = CodebookFromJson(ReadJsonFile(sy_codebook));
      } else {
        cb = DefaultCodebook(reg, sy_blocks, sy_cpb, sy_flip, sy_seed, sy_ladder);
        WriteJsonFile(CodebookToJson(cb), sy_codebook);
      }
      if (!sy_out.empty()) WriteMaskFile(SynthMasks(reg, cb, sy_stream), sy_out);
    } else if (*run) {
      std::optional<fs::path> out;
      if (!run_out.empty()) out = run_out;
      const RunResult r = RunPipeline(run_config, out);
      std::cout << r.run_dir.string() << "\n";
    }
  } catch (const ConfigError &e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const DataError &e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception &e) {
    spdlog::error("{}", e.what());
    return 3;
  }
  return 0;
}
