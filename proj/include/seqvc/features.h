// features.h
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

#ifndef SEQVC_FEATURES_H_
#define SEQVC_FEATURES_H_

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqvc {

// Thrown by the label/track/manifest readers on malformed input.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string &msg) : std::runtime_error(msg) {}
};

// Time-major feature matrix. Rows are frames, columns are channels; the last
// column is the pitch channel by convention.
struct FeatureTrack {
  Eigen::MatrixXf frames;   // [T x D]
  double hop_ms = 10.0;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
  int pitch_channel() const { return dim() - 1; }

  void Validate() const;
};

// One aligned span. Phoneme id 0 is reserved for silence and carries the
// reserved no-tone id 0.
struct Segment {
  int start_ms = 0;
  int end_ms = 0;
  int phoneme_id = 0;
  int tone_id = 0;

  bool is_silence() const { return phoneme_id == 0; }
  bool operator==(const Segment &) const = default;
};

constexpr int kSilencePhonemeId = 0;
constexpr int kNoToneId = 0;

// Contiguous forced-alignment label sequence covering an utterance.
struct SegmentSeq {
  std::vector<Segment> segments;
  int inventory_size = 1;  // number of phoneme ids incl. silence
  int tone_count = 1;      // number of tone ids incl. the reserved no-tone

  int total_ms() const {
    return segments.empty() ? 0 : segments.back().end_ms;
  }
  void Validate() const;

  // (phoneme_id, tone_id) pairs of the non-silence segments, in order.
  std::vector<std::pair<int, int>> NonSilenceSequence() const;
};

// Low-frame-rate linguistic features; frames are rate_divisor times sparser
// than the paired FeatureTrack.
struct BottleneckTrack {
  Eigen::MatrixXf frames;  // [T_b x D_b]
  int rate_divisor = 4;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
};

// Parallel source/target utterance with alignments and source bottleneck
// features. Non-silence label sequences of both sides are identical.
struct UtterancePair {
  std::string id;
  FeatureTrack src;
  FeatureTrack tgt;
  SegmentSeq src_lab;
  SegmentSeq tgt_lab;
  BottleneckTrack src_bn;

  void Validate() const;
};

// Maps phoneme names to ids. Id 0 is always "sil".
class PhonemeInventory {
 public:
  PhonemeInventory();

  // Returns the id for a name, assigning a fresh one if unseen.
  int GetOrAdd(const std::string &name);
  // Returns -1 if the name is unknown.
  int Find(const std::string &name) const;
  const std::string &Name(int id) const;
  int size() const { return static_cast<int>(names_.size()); }

  int tone_count() const { return tone_count_; }
  void NoteTone(int tone_id);

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
  int tone_count_ = 1;
};

// Parses label-file content: lines of `start_ms end_ms label` where label is
// `sil` or `phoneme@tone`. Unknown phoneme names get fresh ids from the
// inventory. Throws ParseError naming the offending line.
SegmentSeq ParseLab(const std::string &text, PhonemeInventory *inventory);

// Inverse of ParseLab for valid sequences.
std::string FormatLab(const SegmentSeq &lab, const PhonemeInventory &inventory);

// Per-frame (phoneme_id, tone_id) targets of length T. Frame t takes the
// label of the segment containing time t*hop_ms; a boundary time belongs to
// the later segment. Throws if the labels do not cover (T-1)*hop_ms.
struct FrameLabels {
  std::vector<int> phoneme;
  std::vector<int> tone;
};
FrameLabels MakeFrameLabels(const SegmentSeq &lab, double hop_ms, int T);

// Repeats every bottleneck row r times. Output row i equals input row
// floor(i/r). Throws on r <= 0.
Eigen::MatrixXf UpsampleRepeat(const Eigen::MatrixXf &frames, int r);

// Upsampled bottleneck rows truncated to T mel frames. Throws if the
// upsampled track is shorter than T.
Eigen::MatrixXf UpsampledBottleneck(const BottleneckTrack &bn, int T);

// Binary track container: magic "SCNT", u32 version=1, u32 T, u32 D,
// u32 hop_microseconds, then T*D little-endian f32 row-major.
void WriteTrack(const std::string &path, const FeatureTrack &track);
FeatureTrack ReadTrack(const std::string &path);

void WriteLabFile(const std::string &path, const SegmentSeq &lab,
                  const PhonemeInventory &inventory);
SegmentSeq ReadLabFile(const std::string &path, PhonemeInventory *inventory);

// Corpus manifest: UTF-8 lines
// id<TAB>src_track<TAB>tgt_track<TAB>src_lab<TAB>tgt_lab<TAB>src_bn
// Relative paths are resolved against the manifest's directory.
struct ManifestEntry {
  std::string id;
  std::string src_track;
  std::string tgt_track;
  std::string src_lab;
  std::string tgt_lab;
  std::string src_bn;
};
std::vector<ManifestEntry> ReadManifest(const std::string &path);
void WriteManifest(const std::string &path,
                   const std::vector<ManifestEntry> &entries);

// Loads one utterance pair from a manifest entry. The bottleneck rate divisor
// is derived from the hop ratio of the two files.
UtterancePair LoadPair(const ManifestEntry &entry, PhonemeInventory *inventory);

}  // namespace seqvc

#endif  // SEQVC_FEATURES_H_
