// synth.h
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
// Synthetic parallel-corpus generator. Two rendering specs stand in for a
// recorded speaker pair: each phoneme has a per-speaker spectral prototype
// and mean duration, utterances are piecewise-linear prototype trajectories
// plus noise, and the pitch channel follows per-tone contours.

#ifndef SEQVC_SYNTH_H_
#define SEQVC_SYNTH_H_

#include <cstdint>
#include <string>
#include <vector>

#include "seqvc/features.h"
#include "seqvc/rng.h"

namespace seqvc {

// Per-tone pitch contour: pitch = base + offset + slope * (pos - 0.5).
struct ToneContour {
  double offset_hz = 0.0;
  double slope_hz = 0.0;
};

// How one synthetic speaker renders phoneme sequences.
struct SpeakerRenderSpec {
  Eigen::MatrixXd prototypes;          // [P x (D-1)] spectral prototypes
  std::vector<double> mean_duration_ms;  // [P], > 0
  double duration_jitter = 0.2;        // fraction of the mean
  double pitch_base_hz = 150.0;
  std::vector<ToneContour> tones;      // [tone_count]
  double noise_sigma = 0.05;
  uint64_t seed = 0;                   // stream id for this speaker's draws

  void Validate() const;
};

// Token of a phoneme sequence; (0, 0) is silence.
struct PhonemeToken {
  int phoneme_id = 0;
  int tone_id = 0;
};

// Renders a parallel pair from one phoneme sequence. The sequence must be
// non-empty and begin and end with silence. Same seed gives bit-identical
// output. Durations are quantized to whole hops and recorded in the labels.
UtterancePair GenSyntheticPair(const std::vector<PhonemeToken> &phoneme_seq,
                               const SpeakerRenderSpec &src_spec,
                               const SpeakerRenderSpec &tgt_spec,
                               uint64_t seed, double hop_ms = 10.0,
                               int bn_dim = 8, int bn_rate_divisor = 4,
                               double bn_noise_sigma = 0.05,
                               const std::string &id = "pair");

// Speaker-independent linguistic embedding of a phoneme, used for the
// synthetic bottleneck features.
Eigen::VectorXd BottleneckEmbedding(int phoneme_id, int dim);

// Desk-scale synthetic corpus configuration.
struct CorpusConfig {
  int n_train = 200;
  int n_val = 12;
  int n_test = 12;
  int feat_dim = 20;   // spectral channels + 1 pitch channel
  int bn_dim = 8;
  int phonemes = 12;   // non-silence inventory size
  int tones = 4;       // tone ids 1..tones
  double hop_ms = 10.0;
  int bn_rate_divisor = 4;
  // Clause-count distribution; index i is the probability of i+1 clauses.
  // Tuned so the mean alignment-point count (silences per utterance) lands
  // near 3.15.
  std::vector<double> clause_probs = {0.25, 0.45, 0.20, 0.10};
  int min_phones_per_clause = 2;
  int max_phones_per_clause = 5;
  double sil_dur_lo_ms = 60.0;
  double sil_dur_hi_ms = 120.0;
  double phone_dur_lo_ms = 70.0;
  double phone_dur_hi_ms = 150.0;
  double duration_jitter = 0.2;
  double noise_sigma = 0.05;
  double bn_noise_sigma = 0.05;
  // Pulls the source speaker's non-silence prototypes toward their mean
  // (1 = unchanged, 0 = identical). Low values make source phonemes hard to
  // tell apart without label supervision while target rendering stays
  // distinct, which is the regime the auxiliary classifiers are for.
  double src_proto_shrink = 1.0;
  double src_pitch_base_hz = 120.0;
  double tgt_pitch_base_hz = 220.0;
  uint64_t seed = 1;
};

// Builds the rendering spec of one corpus speaker.
SpeakerRenderSpec MakeSpeakerSpec(const CorpusConfig &config,
                                  uint64_t speaker_stream, double pitch_base);

// Draws a random phoneme sequence (clauses separated by silences, silence at
// both ends).
std::vector<PhonemeToken> GenPhonemeSequence(const CorpusConfig &config,
                                             Rng *rng);

// In-memory corpus generation: `count` pairs drawn from the config's
// distribution, ids prefixed with `prefix`.
std::vector<UtterancePair> GenerateCorpusPairs(const CorpusConfig &config,
                                               uint64_t stream, int count,
                                               const std::string &prefix);

struct CorpusStats {
  int pairs = 0;
  double mean_alignment_points = 0.0;
  std::vector<int> alignment_point_histogram;  // index = N
};

// Writes tracks, labels, bottlenecks and the three manifests under out_dir.
// Returns stats over the training portion. A phoneme inventory file and a
// stats JSON are written alongside.
CorpusStats GenerateCorpusFiles(const CorpusConfig &config,
                                const std::string &out_dir);

// Silence-count statistics of already generated pairs.
CorpusStats CollectStats(const std::vector<UtterancePair> &pairs);

// The inventory implied by a corpus config: "sil" plus p01..pNN.
PhonemeInventory MakeInventory(const CorpusConfig &config);

}  // namespace seqvc

#endif  // SEQVC_SYNTH_H_
