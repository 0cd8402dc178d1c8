// augment.cc
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

#include "seqvc/augment.h"

#include <algorithm>
#include <cmath>

namespace seqvc {

namespace {

double CutTime(const SegmentSeq &lab, size_t seg_index) {
  const Segment &s = lab.segments[seg_index];
  if (seg_index == 0) return 0.0;
  if (seg_index + 1 == lab.segments.size())
    return static_cast<double>(s.end_ms);
  return 0.5 * (s.start_ms + s.end_ms);
}

int NearestFrame(double time_ms, double hop_ms) {
  return static_cast<int>(std::lround(time_ms / hop_ms));
}

}  // namespace

std::vector<AlignmentPoint> FindAlignmentPoints(const SegmentSeq &src_lab,
                                                const SegmentSeq &tgt_lab) {
  if (src_lab.NonSilenceSequence() != tgt_lab.NonSilenceSequence())
    throw AlignmentError("non-silence label sequences differ");

  std::vector<size_t> src_sils, tgt_sils;
  for (size_t i = 0; i < src_lab.segments.size(); ++i)
    if (src_lab.segments[i].is_silence()) src_sils.push_back(i);
  for (size_t i = 0; i < tgt_lab.segments.size(); ++i)
    if (tgt_lab.segments[i].is_silence()) tgt_sils.push_back(i);
  if (src_sils.size() != tgt_sils.size())
    throw AlignmentError("silence counts differ: source has " +
                         std::to_string(src_sils.size()) + ", target has " +
                         std::to_string(tgt_sils.size()));

  std::vector<AlignmentPoint> points;
  points.reserve(src_sils.size());
  for (size_t k = 0; k < src_sils.size(); ++k) {
    const Segment &ss = src_lab.segments[src_sils[k]];
    const Segment &ts = tgt_lab.segments[tgt_sils[k]];
    AlignmentPoint p;
    p.index = static_cast<int>(k);
    p.src_silence = {ss.start_ms, ss.end_ms};
    p.tgt_silence = {ts.start_ms, ts.end_ms};
    p.src_cut_ms = CutTime(src_lab, src_sils[k]);
    p.tgt_cut_ms = CutTime(tgt_lab, tgt_sils[k]);
    points.push_back(p);
  }
  return points;
}

std::vector<FragmentSpec> EnumerateFragments(
    const std::vector<AlignmentPoint> &points, const SegmentSeq &src_lab,
    const SegmentSeq &tgt_lab, double hop_ms) {
  (void)src_lab;
  (void)tgt_lab;
  std::vector<FragmentSpec> frags;
  int n = static_cast<int>(points.size());
  if (n < 2) return frags;
  frags.reserve(n * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      FragmentSpec f;
      f.start_point = i;
      f.end_point = j;
      f.src_begin = NearestFrame(points[i].src_cut_ms, hop_ms);
      f.src_end = NearestFrame(points[j].src_cut_ms, hop_ms);
      f.tgt_begin = NearestFrame(points[i].tgt_cut_ms, hop_ms);
      f.tgt_end = NearestFrame(points[j].tgt_cut_ms, hop_ms);
      frags.push_back(f);
    }
  }
  return frags;
}

PreparedPair PreparePair(UtterancePair pair) {
  PreparedPair prepared;
  prepared.pair = std::move(pair);
  try {
    prepared.points = FindAlignmentPoints(prepared.pair.src_lab,
                                          prepared.pair.tgt_lab);
    prepared.fragments =
        EnumerateFragments(prepared.points, prepared.pair.src_lab,
                           prepared.pair.tgt_lab, prepared.pair.src.hop_ms);
  } catch (const AlignmentError &) {
    prepared.alignment_failed = true;
    prepared.points.clear();
    prepared.fragments.clear();
  }
  return prepared;
}

namespace {

TrainSample BuildSample(const UtterancePair &pair, int src_begin, int src_end,
                        int tgt_begin, int tgt_end, bool whole) {
  TrainSample s;
  s.id = pair.id;
  s.hop_ms = pair.src.hop_ms;
  s.whole_utterance = whole;
  int T_src = pair.src.num_frames();
  Eigen::MatrixXf bn_up = UpsampledBottleneck(pair.src_bn, T_src);
  s.src = pair.src.frames.middleRows(src_begin, src_end - src_begin);
  s.src_bn = bn_up.middleRows(src_begin, src_end - src_begin);
  s.tgt = pair.tgt.frames.middleRows(tgt_begin, tgt_end - tgt_begin);

  FrameLabels src_all = MakeFrameLabels(pair.src_lab, pair.src.hop_ms, T_src);
  FrameLabels tgt_all =
      MakeFrameLabels(pair.tgt_lab, pair.tgt.hop_ms, pair.tgt.num_frames());
  s.src_labels.phoneme.assign(src_all.phoneme.begin() + src_begin,
                              src_all.phoneme.begin() + src_end);
  s.src_labels.tone.assign(src_all.tone.begin() + src_begin,
                           src_all.tone.begin() + src_end);
  s.tgt_labels.phoneme.assign(tgt_all.phoneme.begin() + tgt_begin,
                              tgt_all.phoneme.begin() + tgt_end);
  s.tgt_labels.tone.assign(tgt_all.tone.begin() + tgt_begin,
                           tgt_all.tone.begin() + tgt_end);
  return s;
}

}  // namespace

TrainSample BuildWholeSample(const UtterancePair &pair) {
  return BuildSample(pair, 0, pair.src.num_frames(), 0,
                     pair.tgt.num_frames(), true);
}

TrainSample BuildFragmentSample(const UtterancePair &pair,
                                const FragmentSpec &frag) {
  // Labels may run a fraction of a hop past the last frame; keep the slice
  // inside the tracks.
  int src_end = std::min(frag.src_end, pair.src.num_frames());
  int tgt_end = std::min(frag.tgt_end, pair.tgt.num_frames());
  if (src_end <= frag.src_begin || tgt_end <= frag.tgt_begin)
    throw std::invalid_argument("empty fragment range");
  bool whole = frag.src_begin == 0 && src_end == pair.src.num_frames() &&
               frag.tgt_begin == 0 && tgt_end == pair.tgt.num_frames();
  return BuildSample(pair, frag.src_begin, src_end, frag.tgt_begin, tgt_end,
                     whole);
}

TrainSample SampleFragment(const PreparedPair &prepared, Rng *rng) {
  if (prepared.fragments.empty()) return BuildWholeSample(prepared.pair);
  size_t pick = rng->Below(prepared.fragments.size());
  return BuildFragmentSample(prepared.pair, prepared.fragments[pick]);
}

AugmentStats CollectAugmentStats(const std::vector<PreparedPair> &prepared) {
  AugmentStats stats;
  stats.pairs = static_cast<int>(prepared.size());
  long long point_total = 0;
  for (const PreparedPair &p : prepared) {
    if (p.alignment_failed) {
      stats.alignment_failures++;
      continue;
    }
    int n = p.num_points();
    point_total += n;
    stats.total_fragments += static_cast<long long>(p.fragments.size());
    if (n >= static_cast<int>(stats.point_histogram.size()))
      stats.point_histogram.resize(n + 1, 0);
    stats.point_histogram[n]++;
  }
  int counted = stats.pairs - stats.alignment_failures;
  if (counted > 0)
    stats.mean_points = static_cast<double>(point_total) / counted;
  return stats;
}

}  // namespace seqvc
