// features.cc
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "seqvc/features.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace seqvc {

namespace {

std::string AtLine(int line_no) {
  return " at line " + std::to_string(line_no);
}

void WriteU32(std::ostream &os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char *>(b), 4);
}

uint32_t ReadU32(std::istream &is, const std::string &what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char *>(b), 4))
    throw ParseError("truncated track file while reading " + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void FeatureTrack::Validate() const {
  if (frames.rows() < 1) throw std::invalid_argument("track has no frames");
  if (frames.cols() < 2)
    throw std::invalid_argument("track needs at least two channels");
  if (!(hop_ms > 0)) throw std::invalid_argument("hop_ms must be positive");
  if (!frames.allFinite())
    throw std::invalid_argument("track contains non-finite values");
}

void SegmentSeq::Validate() const {
  if (segments.empty()) throw std::invalid_argument("empty segment sequence");
  if (segments.front().start_ms != 0)
    throw std::invalid_argument("first segment must start at 0");
  int prev_end = 0;
  for (const Segment &s : segments) {
    if (s.start_ms != prev_end)
      throw std::invalid_argument("segments are not contiguous");
    if (s.end_ms <= s.start_ms)
      throw std::invalid_argument("segment has non-positive duration");
    if (s.phoneme_id < 0 || s.phoneme_id >= inventory_size)
      throw std::invalid_argument("phoneme id out of inventory");
    if (s.tone_id < 0 || s.tone_id >= tone_count)
      throw std::invalid_argument("tone id out of range");
    if (s.is_silence() && s.tone_id != kNoToneId)
      throw std::invalid_argument("silence must carry the no-tone id");
    prev_end = s.end_ms;
  }
}

std::vector<std::pair<int, int>> SegmentSeq::NonSilenceSequence() const {
  std::vector<std::pair<int, int>> out;
  for (const Segment &s : segments)
    if (!s.is_silence()) out.emplace_back(s.phoneme_id, s.tone_id);
  return out;
}

void UtterancePair::Validate() const {
  src.Validate();
  tgt.Validate();
  src_lab.Validate();
  tgt_lab.Validate();
  if (src_lab.NonSilenceSequence() != tgt_lab.NonSilenceSequence())
    throw std::invalid_argument(
        "pair " + id + ": source and target non-silence labels differ");
}

PhonemeInventory::PhonemeInventory() {
  names_.push_back("sil");
  ids_["sil"] = 0;
}

int PhonemeInventory::GetOrAdd(const std::string &name) {
  auto it = ids_.find(name);
  if (it != ids_.end()) return it->second;
  int id = static_cast<int>(names_.size());
  names_.push_back(name);
  ids_[name] = id;
  return id;
}

int PhonemeInventory::Find(const std::string &name) const {
  auto it = ids_.find(name);
  return it == ids_.end() ? -1 : it->second;
}

const std::string &PhonemeInventory::Name(int id) const {
  if (id < 0 || id >= static_cast<int>(names_.size()))
    throw std::out_of_range("phoneme id " + std::to_string(id) +
                            " not in inventory");
  return names_[id];
}

void PhonemeInventory::NoteTone(int tone_id) {
  if (tone_id + 1 > tone_count_) tone_count_ = tone_id + 1;
}

SegmentSeq ParseLab(const std::string &text, PhonemeInventory *inventory) {
  SegmentSeq seq;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  int prev_end = 0;
  bool saw_segment = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long start, end;
    std::string label;
    if (!(ls >> start >> end >> label))
      throw ParseError("malformed label line" + AtLine(line_no));
    std::string extra;
    if (ls >> extra)
      throw ParseError("trailing content" + AtLine(line_no));
    if (start < 0 || end < 0)
      throw ParseError("negative time" + AtLine(line_no));
    if (end <= start)
      throw ParseError("empty span" + AtLine(line_no));
    if (!saw_segment && start != 0)
      throw ParseError("first segment must start at 0" + AtLine(line_no));
    if (saw_segment && start != prev_end) {
      if (start > prev_end)
        throw ParseError("gap" + AtLine(line_no));
      throw ParseError("overlap" + AtLine(line_no));
    }
    Segment seg;
    seg.start_ms = static_cast<int>(start);
    seg.end_ms = static_cast<int>(end);
    if (label == "sil") {
      seg.phoneme_id = kSilencePhonemeId;
      seg.tone_id = kNoToneId;
    } else {
      auto at = label.find('@');
      if (at == std::string::npos || at == 0 || at + 1 >= label.size())
        throw ParseError("bad label '" + label + "'" + AtLine(line_no));
      std::string name = label.substr(0, at);
      int tone;
      try {
        size_t pos;
        tone = std::stoi(label.substr(at + 1), &pos);
        if (pos != label.size() - at - 1) throw std::invalid_argument("");
      } catch (const std::exception &) {
        throw ParseError("bad tone in label '" + label + "'" + AtLine(line_no));
      }
      if (tone <= 0)
        throw ParseError("tone must be positive, id 0 is reserved" +
                         AtLine(line_no));
      seg.phoneme_id = inventory->GetOrAdd(name);
      seg.tone_id = tone;
      inventory->NoteTone(tone);
    }
    seq.segments.push_back(seg);
    prev_end = seg.end_ms;
    saw_segment = true;
  }
  if (!saw_segment) throw ParseError("empty label file");
  seq.inventory_size = inventory->size();
  seq.tone_count = inventory->tone_count();
  return seq;
}

std::string FormatLab(const SegmentSeq &lab,
                      const PhonemeInventory &inventory) {
  std::ostringstream out;
  for (const Segment &s : lab.segments) {
    out << s.start_ms << ' ' << s.end_ms << ' ';
    if (s.is_silence())
      out << "sil";
    else
      out << inventory.Name(s.phoneme_id) << '@' << s.tone_id;
    out << '\n';
  }
  return out.str();
}

FrameLabels MakeFrameLabels(const SegmentSeq &lab, double hop_ms, int T) {
  if (T < 1) throw std::invalid_argument("frame count must be >= 1");
  double needed = (T - 1) * hop_ms;
  if (lab.total_ms() <= needed - 1e-9 ||
      (lab.total_ms() < needed && lab.total_ms() + 1e-9 < needed))
    throw std::invalid_argument("labels cover " +
                                std::to_string(lab.total_ms()) +
                                " ms but the track needs " +
                                std::to_string(needed) + " ms");
  FrameLabels out;
  out.phoneme.resize(T);
  out.tone.resize(T);
  size_t k = 0;
  for (int t = 0; t < T; ++t) {
    double time = t * hop_ms;
    // Boundary times belong to the later segment.
    while (k + 1 < lab.segments.size() && time >= lab.segments[k].end_ms) ++k;
    out.phoneme[t] = lab.segments[k].phoneme_id;
    out.tone[t] = lab.segments[k].tone_id;
  }
  return out;
}

Eigen::MatrixXf UpsampleRepeat(const Eigen::MatrixXf &frames, int r) {
  if (r <= 0) throw std::invalid_argument("rate divisor must be >= 1");
  if (r == 1) return frames;
  Eigen::MatrixXf out(frames.rows() * r, frames.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i) = frames.row(i / r);
  return out;
}

Eigen::MatrixXf UpsampledBottleneck(const BottleneckTrack &bn, int T) {
  Eigen::MatrixXf up = UpsampleRepeat(bn.frames, bn.rate_divisor);
  if (up.rows() < T)
    throw std::invalid_argument(
        "bottleneck too short: upsampled " + std::to_string(up.rows()) +
        " frames, need " + std::to_string(T));
  return up.topRows(T);
}

void WriteTrack(const std::string &path, const FeatureTrack &track) {
  track.Validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("SCNT", 4);
  WriteU32(os, 1);
  WriteU32(os, static_cast<uint32_t>(track.num_frames()));
  WriteU32(os, static_cast<uint32_t>(track.dim()));
  WriteU32(os, static_cast<uint32_t>(std::lround(track.hop_ms * 1000.0)));
  // Row-major frame data.
  for (int t = 0; t < track.num_frames(); ++t) {
    for (int d = 0; d < track.dim(); ++d) {
      float v = track.frames(t, d);
      static_assert(sizeof(float) == 4);
      os.write(reinterpret_cast<const char *>(&v), 4);
    }
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

FeatureTrack ReadTrack(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SCNT", 4) != 0)
    throw ParseError(path + ": bad magic, not a track file");
  uint32_t version = ReadU32(is, "version");
  if (version != 1)
    throw ParseError(path + ": unsupported track version " +
                     std::to_string(version));
  uint32_t T = ReadU32(is, "frame count");
  uint32_t D = ReadU32(is, "dimension");
  uint32_t hop_us = ReadU32(is, "hop");
  if (T == 0 || D == 0) throw ParseError(path + ": empty track");
  FeatureTrack track;
  track.hop_ms = hop_us / 1000.0;
  track.frames.resize(T, D);
  for (uint32_t t = 0; t < T; ++t) {
    for (uint32_t d = 0; d < D; ++d) {
      float v;
      if (!is.read(reinterpret_cast<char *>(&v), 4))
        throw ParseError(path + ": truncated, header says " +
                         std::to_string(T) + " frames");
      track.frames(t, d) = v;
    }
  }
  return track;
}

void WriteLabFile(const std::string &path, const SegmentSeq &lab,
                  const PhonemeInventory &inventory) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << FormatLab(lab, inventory);
  if (!os) throw std::runtime_error("write failed for " + path);
}

SegmentSeq ReadLabFile(const std::string &path, PhonemeInventory *inventory) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  try {
    return ParseLab(buf.str(), inventory);
  } catch (const ParseError &e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::vector<ManifestEntry> ReadManifest(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open manifest " + path);
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&base](const std::string &p) {
    std::filesystem::path fp(p);
    if (fp.is_absolute()) return p;
    return (base / fp).string();
  };
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t pos = 0;
    while (true) {
      size_t tab = line.find('\t', pos);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(pos));
        break;
      }
      fields.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    if (fields.size() != 6)
      throw ParseError("manifest " + path + ": expected 6 fields" +
                       AtLine(line_no));
    ManifestEntry e;
    e.id = fields[0];
    e.src_track = resolve(fields[1]);
    e.tgt_track = resolve(fields[2]);
    e.src_lab = resolve(fields[3]);
    e.tgt_lab = resolve(fields[4]);
    e.src_bn = resolve(fields[5]);
    entries.push_back(std::move(e));
  }
  return entries;
}

void WriteManifest(const std::string &path,
                   const std::vector<ManifestEntry> &entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const ManifestEntry &e : entries) {
    os << e.id << '\t' << e.src_track << '\t' << e.tgt_track << '\t'
       << e.src_lab << '\t' << e.tgt_lab << '\t' << e.src_bn << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

UtterancePair LoadPair(const ManifestEntry &entry,
                       PhonemeInventory *inventory) {
  UtterancePair pair;
  pair.id = entry.id;
  pair.src = ReadTrack(entry.src_track);
  pair.tgt = ReadTrack(entry.tgt_track);
  pair.src_lab = ReadLabFile(entry.src_lab, inventory);
  pair.tgt_lab = ReadLabFile(entry.tgt_lab, inventory);
  FeatureTrack bn_raw = ReadTrack(entry.src_bn);
  pair.src_bn.frames = bn_raw.frames;
  double ratio = bn_raw.hop_ms / pair.src.hop_ms;
  int r = static_cast<int>(std::lround(ratio));
  if (r < 1 || std::abs(ratio - r) > 1e-6)
    throw ParseError(entry.src_bn + ": bottleneck hop " +
                     std::to_string(bn_raw.hop_ms) +
                     " ms is not an integer multiple of the track hop");
  pair.src_bn.rate_divisor = r;
  // Refresh inventory bounds after both labs are read.
  pair.src_lab.inventory_size = inventory->size();
  pair.src_lab.tone_count = inventory->tone_count();
  pair.tgt_lab.inventory_size = inventory->size();
  pair.tgt_lab.tone_count = inventory->tone_count();
  pair.Validate();
  if (pair.src_bn.num_frames() * pair.src_bn.rate_divisor <
      pair.src.num_frames())
    throw ParseError(entry.id + ": bottleneck track too short for source");
  return pair;
}

}  // namespace seqvc
