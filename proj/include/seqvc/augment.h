// augment.h
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
//
// Fragment-based data augmentation. An alignment point is a common silence
// fragment of a parallel pair; every unordered pair of alignment points
// delimits a parallel fragment carrying identical linguistic content, and
// training draws one fragment per visit instead of the whole utterance.

#ifndef SEQVC_AUGMENT_H_
#define SEQVC_AUGMENT_H_

#include <vector>

#include "seqvc/features.h"
#include "seqvc/rng.h"

namespace seqvc {

// Raised when a pair's silences cannot be matched up; callers fall back to
// the whole utterance.
class AlignmentError : public std::runtime_error {
 public:
  explicit AlignmentError(const std::string &msg) : std::runtime_error(msg) {}
};

struct SilenceSpan {
  int start_ms = 0;
  int end_ms = 0;
};

// The k-th silence of the source paired with the k-th silence of the target.
// cut_ms is where a fragment boundary falls: the silence midpoint, except
// that an utterance-initial silence cuts at time 0 and an utterance-final
// silence cuts at the utterance end, so the first-to-last fragment is the
// whole utterance.
struct AlignmentPoint {
  int index = 0;
  SilenceSpan src_silence;
  SilenceSpan tgt_silence;
  double src_cut_ms = 0.0;
  double tgt_cut_ms = 0.0;
};

// Frame ranges [start, end) of one parallel fragment on both sides.
struct FragmentSpec {
  int src_begin = 0;
  int src_end = 0;
  int tgt_begin = 0;
  int tgt_end = 0;
  int start_point = 0;
  int end_point = 0;

  bool operator==(const FragmentSpec &) const = default;
};

// Pairs up the silences of a parallel pair in temporal order. Throws
// AlignmentError if the non-silence sequences differ or the silence counts
// do not match.
std::vector<AlignmentPoint> FindAlignmentPoints(const SegmentSeq &src_lab,
                                                const SegmentSeq &tgt_lab);

// All C(N,2) fragments, one per unordered point pair, ordered by
// (start_point, end_point). Returns an empty list for N < 2.
std::vector<FragmentSpec> EnumerateFragments(
    const std::vector<AlignmentPoint> &points, const SegmentSeq &src_lab,
    const SegmentSeq &tgt_lab, double hop_ms);

// One training visit's worth of data: feature slices plus per-frame
// classifier targets.
struct TrainSample {
  std::string id;
  Eigen::MatrixXf src;      // [T_src x D] mel slice
  Eigen::MatrixXf src_bn;   // [T_src x D_b] upsampled bottleneck slice
  Eigen::MatrixXf tgt;      // [T_tgt x D]
  FrameLabels src_labels;   // length T_src
  FrameLabels tgt_labels;   // length T_tgt
  double hop_ms = 10.0;
  bool whole_utterance = true;
};

// A pair with its fragment inventory precomputed. When the silences cannot
// be aligned, the pair is used whole and `alignment_failed` is set.
struct PreparedPair {
  UtterancePair pair;
  std::vector<AlignmentPoint> points;
  std::vector<FragmentSpec> fragments;
  bool alignment_failed = false;

  int num_points() const { return static_cast<int>(points.size()); }
};

PreparedPair PreparePair(UtterancePair pair);

// The baseline sample: the whole utterance.
TrainSample BuildWholeSample(const UtterancePair &pair);

// The slice delimited by one fragment.
TrainSample BuildFragmentSample(const UtterancePair &pair,
                                const FragmentSpec &frag);

// Uniform draw over the C(N,2) fragments; the whole utterance when N < 2 or
// alignment failed.
TrainSample SampleFragment(const PreparedPair &prepared, Rng *rng);

// Summary printed by the `augment --stats` command.
struct AugmentStats {
  int pairs = 0;
  int alignment_failures = 0;
  double mean_points = 0.0;
  long long total_fragments = 0;
  std::vector<int> point_histogram;  // index = N
};

AugmentStats CollectAugmentStats(const std::vector<PreparedPair> &prepared);

}  // namespace seqvc

#endif  // SEQVC_AUGMENT_H_
