// src/io.cc

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

#include "maskprobe/io.h"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace maskprobe {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'D', 'C', 'P', 'M'};
constexpr uint8_t kVersion = 1;
constexpr size_t kHeaderBytes = 17;

void PutU32(std::vector<char> *buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf->push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint32_t GetU32(const unsigned char *p) {
  return uint32_t{p[0]} | (uint32_t{p[1]} << 8) | (uint32_t{p[2]} << 16) |
         (uint32_t{p[3]} << 24);
}

void PutU16(std::vector<char> *buf, uint16_t v) {
  buf->push_back(static_cast<char>(v & 0xFF));
  buf->push_back(static_cast<char>(v >> 8));
}

std::vector<unsigned char> ReadAll(const fs::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "' for reading");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), {});
}

void WriteAll(const fs::path &path, const std::vector<char> &buf) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

void WriteText(const fs::path &path, const std::string &text) {
  WriteAll(path, std::vector<char>(text.begin(), text.end()));
}

uint32_t CheckedU32(int64_t v, const char *what) {
  if (v < 0 || v > int64_t{UINT32_MAX})
    throw DataError(std::string(what) + " does not fit in u32");
  return static_cast<uint32_t>(v);
}

}  // namespace

std::vector<uint8_t> PackBits(std::span<const uint8_t> row) {
  std::vector<uint8_t> out((row.size() + 7) / 8, 0);
  for (size_t c = 0; c < row.size(); ++c)
    if (row[c]) out[c / 8] |= static_cast<uint8_t>(1u << (c % 8));
  return out;
}

void UnpackBits(std::span<const uint8_t> packed, int64_t width,
                std::span<uint8_t> row) {
  for (int64_t c = 0; c < width; ++c)
    row[c] = (packed[c / 8] >> (c % 8)) & 1u;
}

void WriteMaskFile(const MaskTensor &masks, const fs::path &path) {
  const int64_t width = masks.NumChannels();
  if (masks.bits.Cols() != width)
    throw DataError("mask tensor width does not match I * C_res");
  std::vector<char> buf(kMagic, kMagic + 4);
  buf.push_back(static_cast<char>(kVersion));
  PutU32(&buf, CheckedU32(masks.NumFrames(), "L"));
  PutU32(&buf, CheckedU32(masks.num_blocks, "I"));
  PutU32(&buf, CheckedU32(masks.channels_per_block, "C_res"));
  buf.reserve(kHeaderBytes + masks.NumFrames() * ((width + 7) / 8));
  for (int64_t l = 0; l < masks.NumFrames(); ++l) {
    auto packed = PackBits(masks.bits.Row(l));
    buf.insert(buf.end(), packed.begin(), packed.end());
  }
  WriteAll(path, buf);
}

MaskTensor ReadMaskFile(const fs::path &path) {
  auto bytes = ReadAll(path);
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError("'" + path.string() + "': bad magic, not a DCPM file");
  if (bytes[4] != kVersion)
    throw DataError("'" + path.string() + "': unsupported DCPM version " +
                    std::to_string(bytes[4]));
  const uint32_t frames = GetU32(&bytes[5]);
  MaskTensor m;
  m.num_blocks = static_cast<int>(GetU32(&bytes[9]));
  m.channels_per_block = static_cast<int>(GetU32(&bytes[13]));
  const int64_t width = int64_t{m.num_blocks} * m.channels_per_block;
  const int64_t row_bytes = (width + 7) / 8;
  const int64_t payload = static_cast<int64_t>(bytes.size() - kHeaderBytes);
  if (payload < int64_t{frames} * row_bytes)
    throw DataError("'" + path.string() + "': truncated payload, header says " +
                    std::to_string(frames) + " rows of " +
                    std::to_string(row_bytes) + " bytes, found " +
                    std::to_string(payload) + " bytes");
  if (payload > int64_t{frames} * row_bytes)
    throw DataError("'" + path.string() +
                    "': payload larger than header dimensions");
  m.bits = BitMatrix(frames, width);
  const uint8_t *p = bytes.data() + kHeaderBytes;
  for (int64_t l = 0; l < frames; ++l, p += row_bytes)
    UnpackBits({p, static_cast<size_t>(row_bytes)}, width, m.bits.Row(l));
  return m;
}

void WriteFilteredMasks(const FilteredMasks &masks, const fs::path &path) {
  MaskTensor flat;
  flat.num_blocks = 1;
  flat.channels_per_block = masks.NumKept();
  flat.bits = masks.bits;
  WriteMaskFile(flat, path);
  json side;
  side["channel_map"] = masks.channel_map;
  side["channel_std"] = masks.channel_std;
  side["tau"] = masks.tau;
  side["std_convention"] = "population";
  side["source_blocks"] = masks.source_blocks;
  side["source_channels_per_block"] = masks.source_channels_per_block;
  WriteJsonFile(side, fs::path(path.string() + ".json"));
}

FilteredMasks ReadFilteredMasks(const fs::path &path) {
  MaskTensor flat = ReadMaskFile(path);
  json side = ReadJsonFile(fs::path(path.string() + ".json"));
  FilteredMasks f;
  f.channel_map = side.at("channel_map").get<std::vector<int>>();
  f.channel_std = side.at("channel_std").get<std::vector<double>>();
  f.tau = side.at("tau").get<double>();
  f.source_blocks = side.at("source_blocks").get<int>();
  f.source_channels_per_block = side.at("source_channels_per_block").get<int>();
  if (static_cast<int64_t>(f.channel_map.size()) != flat.bits.Cols() ||
      f.channel_std.size() != f.channel_map.size())
    throw DataError("'" + path.string() +
                    "': channel_map sidecar does not match container width");
  f.bits = std::move(flat.bits);
  return f;
}

json StftToJson(const StftConfig &cfg) {
  return {{"sample_rate", cfg.sample_rate},
          {"window_len", cfg.window_len},
          {"hop_len", cfg.hop_len},
          {"fft_size", cfg.fft_size}};
}

StftConfig StftFromJson(const json &j) {
  StftConfig cfg;
  cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
  cfg.window_len = j.value("window_len", cfg.window_len);
  cfg.hop_len = j.value("hop_len", cfg.hop_len);
  cfg.fft_size = j.value("fft_size", cfg.fft_size);
  cfg.Validate();
  return cfg;
}

json ManifestToJson(const StreamManifest &m) {
  json segs = json::array();
  for (const auto &s : m.segments)
    segs.push_back({{"utterance_id", s.utterance_id},
                    {"speaker_id", s.speaker_id},
                    {"gender", s.gender},
                    {"accent", s.accent},
                    {"noise_category", s.noise_category},
                    {"start_frame", s.start_frame},
                    {"end_frame", s.end_frame}});
  json noise = json::array();
  for (const auto &n : m.noise_track)
    noise.push_back({{"excerpt_id", n.excerpt_id},
                     {"noise_category", n.noise_category},
                     {"start_sample", n.start_sample},
                     {"end_sample", n.end_sample},
                     {"loop", n.loop}});
  return {{"split", m.split},
          {"seed", m.seed},
          {"stft", StftToJson(m.stft)},
          {"num_samples", m.num_samples},
          {"segments", segs},
          {"noise_track", noise}};
}

StreamManifest ManifestFromJson(const json &j) {
  StreamManifest m;
  try {
    m.split = j.at("split").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.stft = StftFromJson(j.at("stft"));
    m.num_samples = j.value("num_samples", int64_t{0});
    for (const auto &s : j.at("segments"))
      m.segments.push_back({s.at("utterance_id").get<std::string>(),
                            s.at("speaker_id").get<std::string>(),
                            s.at("gender").get<std::string>(),
                            s.at("accent").get<std::string>(),
                            s.at("noise_category").get<std::string>(),
                            s.at("start_frame").get<int64_t>(),
                            s.at("end_frame").get<int64_t>()});
    if (j.contains("noise_track"))
      for (const auto &n : j.at("noise_track"))
        m.noise_track.push_back({n.at("excerpt_id").get<std::string>(),
                                 n.at("noise_category").get<std::string>(),
                                 n.at("start_sample").get<int64_t>(),
                                 n.at("end_sample").get<int64_t>(),
                                 n.value("loop", 0)});
  } catch (const json::exception &e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  m.Validate();
  return m;
}

void WriteManifest(const StreamManifest &m, const fs::path &path) {
  WriteJsonFile(ManifestToJson(m), path);
}

StreamManifest ReadManifest(const fs::path &path) {
  return ManifestFromJson(ReadJsonFile(path));
}

std::string FormatDouble(double v) {
  if (v == 0.0) return "0";  // also folds -0
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double ParseDouble(const std::string &s, const std::string &context) {
  std::string t = Trim(s);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw DataError(context + ": non-numeric cell '" + s + "'");
  return v;
}

void WriteTargetCsv(const TargetSeries &ts, const fs::path &path) {
  std::string out = "frame,value,valid\n";
  for (size_t l = 0; l < ts.values.size(); ++l) {
    out += std::to_string(l);
    out += ',';
    out += FormatDouble(ts.values[l]);
    out += ',';
    out += ts.valid[l] ? '1' : '0';
    out += '\n';
  }
  WriteText(path, out);
}

int CsvTable::Column(const std::string &name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable ReadCsv(const fs::path &path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "' for reading");
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) continue;
    auto cells = SplitString(line, ',');
    for (auto &c : cells) c = Trim(c);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw DataError("'" + path.string() + "': row " +
                        std::to_string(t.rows.size() + 1) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw DataError("'" + path.string() + "': empty CSV");
  return t;
}

void ReadTargetCsv(const fs::path &path, int64_t expected_frames,
                   std::vector<double> *values, std::vector<uint8_t> *valid) {
  CsvTable t = ReadCsv(path);
  const int fcol = t.Column("frame"), vcol = t.Column("value"),
            okcol = t.Column("valid");
  if (fcol < 0 || vcol < 0)
    throw DataError("'" + path.string() + "': header must contain frame,value");
  const int64_t n = static_cast<int64_t>(t.rows.size());
  if (expected_frames >= 0 && n != expected_frames)
    throw DataError("'" + path.string() + "': length mismatch, " +
                    std::to_string(n) + " frames but the stream has " +
                    std::to_string(expected_frames));
  values->assign(n, 0.0);
  valid->assign(n, 1);
  const std::string ctx = path.string();
  for (int64_t l = 0; l < n; ++l) {
    const auto &row = t.rows[l];
    double f = ParseDouble(row[fcol], ctx);
    if (f != static_cast<double>(l))
      throw DataError(ctx + ": frame index " + row[fcol] + " at row " +
                      std::to_string(l) + " (frames must be 0..L-1, no gaps)");
    (*values)[l] = ParseDouble(row[vcol], ctx);
    if (okcol >= 0) {
      double ok = ParseDouble(row[okcol], ctx);
      if (ok != 0.0 && ok != 1.0)
        throw DataError(ctx + ": valid column must be 0 or 1");
      (*valid)[l] = ok != 0.0;
    }
  }
}

void WriteTargetRegistry(const TargetRegistry &reg, const fs::path &dir,
                         const json &metadata) {
  fs::create_directories(dir);
  json index = json::array();
  for (const auto &ts : reg) {
    ts.Validate();
    const std::string file = ts.name + ".csv";
    WriteTargetCsv(ts, dir / file);
    json e = {{"name", ts.name},
              {"kind", TargetKindName(ts.kind)},
              {"num_classes", ts.num_classes},
              {"class_names", ts.class_names},
              {"file", file}};
    e["iqr"] = ts.iqr ? json::array({ts.iqr->first, ts.iqr->second}) : json();
    index.push_back(e);
  }
  WriteJsonFile({{"targets", index}, {"metadata", metadata}},
                dir / "targets.json");
}

TargetRegistry ReadTargetRegistry(const fs::path &dir) {
  json index = ReadJsonFile(dir / "targets.json");
  TargetRegistry reg;
  int64_t frames = -1;
  for (const auto &e : index.at("targets")) {
    TargetSeries ts;
    ts.name = e.at("name").get<std::string>();
    ts.kind = ParseTargetKind(e.at("kind").get<std::string>());
    ts.num_classes = e.at("num_classes").get<int>();
    ts.class_names = e.value("class_names", std::vector<std::string>{});
    if (e.contains("iqr") && !e["iqr"].is_null())
      ts.iqr = std::make_pair(e["iqr"][0].get<double>(), e["iqr"][1].get<double>());
    ReadTargetCsv(dir / e.at("file").get<std::string>(), frames, &ts.values,
                  &ts.valid);
    frames = ts.Length();
    ts.Validate();
    reg.push_back(std::move(ts));
  }
  return reg;
}

const TargetSeries &FindTarget(const TargetRegistry &reg,
                               const std::string &name) {
  for (const auto &t : reg)
    if (t.name == name) return t;
  throw DataError("target '" + name + "' not found");
}

void WriteFeatureMatrix(const Eigen::MatrixXd &m, const fs::path &path) {
  std::vector<char> buf;
  PutU32(&buf, CheckedU32(m.rows(), "L"));
  PutU32(&buf, CheckedU32(m.cols(), "D"));
  buf.reserve(8 + 4 * m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      float f = static_cast<float>(m(r, c));
      uint32_t u;
      std::memcpy(&u, &f, 4);
      PutU32(&buf, u);
    }
  WriteAll(path, buf);
}

Eigen::MatrixXd ReadFeatureMatrix(const fs::path &path) {
  auto bytes = ReadAll(path);
  if (bytes.size() < 8)
    throw DataError("'" + path.string() + "': truncated feature header");
  const uint32_t rows = GetU32(&bytes[0]), cols = GetU32(&bytes[4]);
  if (bytes.size() != 8 + uint64_t{4} * rows * cols)
    throw DataError("'" + path.string() + "': payload size does not match " +
                    std::to_string(rows) + " x " + std::to_string(cols));
  Eigen::MatrixXd m(rows, cols);
  const unsigned char *p = bytes.data() + 8;
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c, p += 4) {
      uint32_t u = GetU32(p);
      float f;
      std::memcpy(&f, &u, 4);
      m(r, c) = f;
    }
  return m;
}

AudioStream ReadWav(const fs::path &path, AudioRole role) {
  auto b = ReadAll(path);
  const std::string name = path.string();
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw DataError("'" + name + "': not a RIFF/WAVE file");
  size_t pos = 12;
  int format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char *data = nullptr;
  uint32_t data_len = 0;
  while (pos + 8 <= b.size()) {
    const unsigned char *ck = b.data() + pos;
    uint32_t len = GetU32(ck + 4);
    if (pos + 8 + len > b.size()) len = static_cast<uint32_t>(b.size() - pos - 8);
    if (std::memcmp(ck, "fmt ", 4) == 0 && len >= 16) {
      format = ck[8] | (ck[9] << 8);
      channels = ck[10] | (ck[11] << 8);
      rate = GetU32(ck + 12);
      bits = ck[22] | (ck[23] << 8);
      if (format == 0xFFFE && len >= 40) format = ck[32] | (ck[33] << 8);
    } else if (std::memcmp(ck, "data", 4) == 0) {
      data = ck + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (!data || format == 0) throw DataError("'" + name + "': missing fmt or data chunk");
  if (channels != 1)
    throw DataError("'" + name + "': " + std::to_string(channels) +
                    " channels, only mono is supported");
  AudioStream a;
  a.role = role;
  a.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    a.samples.resize(data_len / 2);
    for (size_t i = 0; i < a.samples.size(); ++i) {
      int16_t v = static_cast<int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
      a.samples[i] = v / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    a.samples.resize(data_len / 4);
    for (size_t i = 0; i < a.samples.size(); ++i) {
      uint32_t u = GetU32(data + 4 * i);
      float f;
      std::memcpy(&f, &u, 4);
      if (!std::isfinite(f))
        throw DataError("'" + name + "': non-finite sample at " + std::to_string(i));
      a.samples[i] = f;
    }
  } else {
    throw DataError("'" + name + "': unsupported encoding (format " +
                    std::to_string(format) + ", " + std::to_string(bits) +
                    " bits); expected PCM16 or float32");
  }
  return a;
}

void WriteWav(const AudioStream &audio, const fs::path &path) {
  const uint32_t n = static_cast<uint32_t>(audio.samples.size());
  std::vector<char> buf;
  buf.reserve(44 + 4 * n);
  auto tag = [&](const char *t) { buf.insert(buf.end(), t, t + 4); };
  tag("RIFF");
  PutU32(&buf, 36 + 4 * n);
  tag("WAVE");
  tag("fmt ");
  PutU32(&buf, 16);
  PutU16(&buf, 3);  // IEEE float
  PutU16(&buf, 1);
  PutU32(&buf, static_cast<uint32_t>(audio.sample_rate));
  PutU32(&buf, static_cast<uint32_t>(audio.sample_rate) * 4);
  PutU16(&buf, 4);
  PutU16(&buf, 32);
  tag("data");
  PutU32(&buf, 4 * n);
  for (double s : audio.samples) {
    float f = static_cast<float>(s);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    PutU32(&buf, u);
  }
  WriteAll(path, buf);
}

json ReadJsonFile(const fs::path &path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "' for reading");
  try {
    return json::parse(is);
  } catch (const json::parse_error &e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

void WriteJsonFile(const json &j, const fs::path &path) {
  WriteText(path, j.dump(2) + "\n");
}

}  // namespace maskprobe
