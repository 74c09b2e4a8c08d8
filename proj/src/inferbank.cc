// src/inferbank.cc

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

#include "maskprobe/inferbank.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "maskprobe/targets.h"

namespace maskprobe {

using nlohmann::json;

PredictorBank PredictorBank::Compile(const std::vector<ProbeModel> &models) {
  if (models.empty()) throw DataError("compile_bank: no models");
  std::vector<size_t> order(models.size());
  std::iota(order.begin(), order.end(), 0);
  auto rank = [&](size_t i) {
    int r = RosterRank(models[i].target);
    return r < 0 ? static_cast<int>(TargetRoster().size()) : r;
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return rank(a) < rank(b); });

  PredictorBank bank;
  bank.space_ = models[order[0]].feature_space;
  bank.channels_ = models[order[0]].Dim();
  for (size_t i : order) {
    const ProbeModel &m = models[i];
    if (!m.feature_space.SameAs(bank.space_) || m.Dim() != bank.channels_)
      throw DataError("compile_bank: model '" + m.target +
                      "' uses a different feature space from '" +
                      models[order[0]].target + "'");
  }

  std::vector<const ProbeModel *> stacked;
  for (size_t i : order) {
    const ProbeModel &m = models[i];
    const int mi = static_cast<int>(bank.headers_.size());
    ProbeModel header = m;
    header.weights.resize(0, 0);
    header.bias.resize(0);
    bank.headers_.push_back(std::move(header));
    for (int k = 0; k < m.OutputCount(); ++k) {
      BankOutput o;
      o.target = m.target;
      o.kind = m.kind;
      o.model_index = mi;
      if (m.OutputCount() > 1) {
        o.class_index = k;
        o.column = m.target + "." +
                   (k < static_cast<int>(m.class_names.size()) ? m.class_names[k]
                                                               : std::to_string(k));
      } else {
        o.column = m.target;
      }
      bank.outputs_.push_back(o);
      bank.bias_.push_back(m.bias(k));
    }
    stacked.push_back(&m);
  }

  const int K = bank.OutputCount();
  bank.columns_.assign(static_cast<size_t>(K) * bank.channels_, 0.0);
  int row = 0;
  for (const ProbeModel *m : stacked)
    for (int k = 0; k < m->OutputCount(); ++k, ++row)
      for (int c = 0; c < bank.channels_; ++c)
        bank.columns_[static_cast<size_t>(c) * K + row] = m->weights(k, c);
  return bank;
}

void PredictorBank::InferFrame(std::span<const int> active, std::span<double> out) const {
  const int K = OutputCount();
  if (static_cast<int>(out.size()) != K)
    throw DataError("infer_frame: output buffer has wrong size");
  std::copy(bias_.begin(), bias_.end(), out.begin());
  int prev = -1;
  for (int c : active) {
    if (c < 0 || c >= channels_)
      throw DataError("infer_frame: channel " + std::to_string(c) + " out of range [0, " +
                      std::to_string(channels_) + ")");
    if (c <= prev)
      throw DataError("infer_frame: active channels must be strictly increasing");
    prev = c;
    const double *col = columns_.data() + static_cast<size_t>(c) * K;
    for (int k = 0; k < K; ++k) out[k] += col[k];
  }
}

std::vector<double> PredictorBank::InferFrame(std::span<const int> active) const {
  std::vector<double> out(OutputCount());
  InferFrame(active, out);
  return out;
}

std::vector<ProbeModel> PredictorBank::Split() const {
  std::vector<ProbeModel> models = headers_;
  const int K = OutputCount();
  int row = 0;
  for (size_t mi = 0; mi < models.size(); ++mi) {
    int rows = 0;
    for (const auto &o : outputs_) rows += o.model_index == static_cast<int>(mi);
    ProbeModel &m = models[mi];
    m.weights.resize(rows, channels_);
    m.bias.resize(rows);
    for (int k = 0; k < rows; ++k, ++row) {
      m.bias(k) = bias_[row];
      for (int c = 0; c < channels_; ++c)
        m.weights(k, c) = columns_[static_cast<size_t>(c) * K + row];
    }
  }
  return models;
}

json PredictorBank::ToJson() const {
  json models = json::array();
  for (const auto &h : headers_) {
    json j = ModelToJson(h);
    j.erase("weights");
    j.erase("bias");
    j.erase("outputs");
    j.erase("dim");
    j.erase("feature_space");
    models.push_back(j);
  }
  json outputs = json::array();
  for (const auto &o : outputs_)
    outputs.push_back({{"column", o.column},
                       {"target", o.target},
                       {"kind", TargetKindName(o.kind)},
                       {"model_index", o.model_index},
                       {"class_index", o.class_index}});
  const int K = OutputCount();
  std::vector<double> w;  // row-major K x C*
  w.reserve(columns_.size());
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < channels_; ++c) w.push_back(Weight(k, c));
  return {{"outputs_total", K},
          {"channels", channels_},
          {"feature_space", FeatureSpaceToJson(space_)},
          {"outputs", outputs},
          {"models", models},
          {"bias", bias_},
          {"weights", w}};
}

PredictorBank PredictorBank::FromJson(const json &j) {
  PredictorBank bank;
  try {
    const int K = j.at("outputs_total").get<int>();
    bank.channels_ = j.at("channels").get<int>();
    bank.space_ = FeatureSpaceFromJson(j.at("feature_space"));
    bank.bias_ = j.at("bias").get<std::vector<double>>();
    auto w = j.at("weights").get<std::vector<double>>();
    if (static_cast<int>(bank.bias_.size()) != K ||
        w.size() != static_cast<size_t>(K) * bank.channels_)
      throw DataError("bank: coefficient sizes do not match header");
    bank.columns_.resize(w.size());
    for (int k = 0; k < K; ++k)
      for (int c = 0; c < bank.channels_; ++c)
        bank.columns_[static_cast<size_t>(c) * K + k] = w[static_cast<size_t>(k) * bank.channels_ + c];
    for (const auto &o : j.at("outputs"))
      bank.outputs_.push_back({o.at("target").get<std::string>(),
                               ParseTargetKind(o.at("kind").get<std::string>()),
                               o.at("model_index").get<int>(),
                               o.at("class_index").get<int>(),
                               o.at("column").get<std::string>()});
    for (auto m : j.at("models")) {
      int rows = 0;
      for (const auto &o : bank.outputs_)
        rows += o.model_index == static_cast<int>(bank.headers_.size());
      m["outputs"] = rows;
      m["dim"] = bank.channels_;
      m["weights"] = std::vector<double>(static_cast<size_t>(rows) * bank.channels_, 0.0);
      m["bias"] = std::vector<double>(rows, 0.0);
      m["feature_space"] = FeatureSpaceToJson(bank.space_);
      ProbeModel h = ModelFromJson(m);
      h.weights.resize(0, 0);
      h.bias.resize(0);
      bank.headers_.push_back(std::move(h));
    }
    if (static_cast<int>(bank.outputs_.size()) != K)
      throw DataError("bank: output directory does not match outputs_total");
  } catch (const json::exception &e) {
    throw DataError(std::string("bank file: ") + e.what());
  }
  return bank;
}

OpCount CountOps(const PredictorBank &bank, int64_t n_active) {
  if (n_active < 0 || n_active > bank.ChannelCount())
    throw DataError("op_count: n_active outside [0, C*]");
  OpCount ops;
  ops.adds = int64_t{bank.OutputCount()} * (n_active + 1);
  ops.worst_case = int64_t{bank.OutputCount()} * bank.ChannelCount();
  return ops;
}

OutputTable StreamInfer(const PredictorBank &bank, const BitMatrix &frames,
                        Postprocess post) {
  if (frames.Cols() != bank.ChannelCount())
    throw DataError("stream_infer: frames have " + std::to_string(frames.Cols()) +
                    " channels, bank expects " + std::to_string(bank.ChannelCount()));
  const auto &outs = bank.Outputs();
  const int K = bank.OutputCount();

  // Per model: first bank row, row count, and the class column position.
  struct Group {
    int first = 0, count = 0;
    bool classification = false;
  };
  std::vector<Group> groups;
  for (int k = 0; k < K; ++k) {
    if (groups.empty() || outs[k].model_index != outs[k - 1].model_index)
      groups.push_back({k, 0, outs[k].kind != TargetKind::kContinuous});
    ++groups.back().count;
  }

  OutputTable t;
  for (const auto &o : outs) t.columns.push_back(o.column);
  for (const auto &g : groups)
    if (g.classification) t.columns.push_back(outs[g.first].target + ".class");

  std::vector<int> active;
  std::vector<double> raw(K);
  t.rows.reserve(frames.Rows());
  for (int64_t l = 0; l < frames.Rows(); ++l) {
    active.clear();
    auto row = frames.Row(l);
    for (int c = 0; c < frames.Cols(); ++c)
      if (row[c]) active.push_back(c);
    bank.InferFrame(active, raw);
    std::vector<double> out = raw;
    std::vector<double> classes;
    for (const auto &g : groups) {
      if (!g.classification) continue;
      int label;
      if (g.count == 1) {
        label = raw[g.first] > 0.0 ? 1 : 0;
        if (post == Postprocess::kProbabilities)
          out[g.first] = 1.0 / (1.0 + std::exp(-raw[g.first]));
      } else {
        int best = 0;
        for (int j = 1; j < g.count; ++j)
          if (raw[g.first + j] > raw[g.first + best]) best = j;
        label = best;
        if (post == Postprocess::kProbabilities) {
          const double mx = raw[g.first + best];
          double sum = 0.0;
          for (int j = 0; j < g.count; ++j) sum += std::exp(raw[g.first + j] - mx);
          for (int j = 0; j < g.count; ++j)
            out[g.first + j] = std::exp(raw[g.first + j] - mx) / sum;
        }
      }
      classes.push_back(label);
    }
    out.insert(out.end(), classes.begin(), classes.end());
    t.rows.push_back(std::move(out));
  }
  return t;
}

void WriteOutputTable(const OutputTable &t, const std::filesystem::path &path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os << "frame";
  for (const auto &c : t.columns) os << ',' << c;
  os << '\n';
  for (size_t l = 0; l < t.rows.size(); ++l) {
    os << l;
    for (double v : t.rows[l]) os << ',' << FormatDouble(v);
    os << '\n';
  }
}

}  // namespace maskprobe
