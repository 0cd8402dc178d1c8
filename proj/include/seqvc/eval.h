// eval.h
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
// Objective metrics over converted tracks: DTW-aligned mel-cepstral
// distortion, voiced-only F0 RMSE, and attention-matrix diagnostics that
// proxy alignment failures (skips, repeats, dropped coverage).

#ifndef SEQVC_EVAL_H_
#define SEQVC_EVAL_H_

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "seqvc/features.h"

namespace seqvc {

// Monotonic alignment with steps (1,0), (0,1), (1,1) from (0,0) to the last
// cell of both sequences.
struct DtwPath {
  std::vector<std::pair<int, int>> points;

  void Validate(int rows_a, int rows_b) const;
};

struct DtwResult {
  DtwPath path;
  double cost = 0.0;
};

// Minimal-cost path under Euclidean local cost; ties prefer the diagonal
// step, then advancing the first sequence. Throws on dimension mismatch or
// empty inputs.
DtwResult DtwAlign(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b);

// Collects non-fatal metric conditions (truncated cepstral order, no voiced
// frames) for the caller to surface.
struct Warnings {
  std::vector<std::string> messages;
  void Add(std::string m) { messages.push_back(std::move(m)); }
};

// DCT-II cepstra of the log spectral channels (the pitch channel, last
// column, is excluded). Returns coefficients 1..order per frame; order is
// lowered to the available count when the track is narrow.
Eigen::MatrixXd Cepstra(const Eigen::MatrixXd &spectral, int order);

// Mel-cepstral distortion in dB, averaged over the DTW path of the two
// cepstral sequences: (10/ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2), d >= 1.
// Tracks must share width and hop.
double Mcd(const FeatureTrack &conv, const FeatureTrack &ref,
           Warnings *warn = nullptr);

// RMSE of the pitch channel over DTW-aligned frames where both sides are
// voiced (pitch > 0); 0 with a warning when no frame qualifies. The path is
// computed on cepstra so pitch errors cannot bend the alignment.
double F0Rmse(const FeatureTrack &conv, const FeatureTrack &ref,
              Warnings *warn = nullptr);

struct AttnDiagnostics {
  // Fraction of decoder steps whose argmax encoder index moves backward by
  // more than 2 frames.
  double monotonicity_violation_rate = 0.0;
  // Fraction of (non-silence) encoder frames receiving total attention
  // below 0.2.
  double coverage_deficit = 0.0;
  // Fraction of decoder steps inside argmax runs longer than 3x the
  // expected frames-per-encoder-step ratio.
  double repeat_score = 0.0;
};

// `nonsilence`, when given, restricts the coverage statistic to encoder
// frames with a nonzero entry; it must have one entry per encoder frame.
AttnDiagnostics ComputeAttnDiagnostics(
    const Eigen::MatrixXd &attention,
    const std::vector<uint8_t> *nonsilence = nullptr);

}  // namespace seqvc

#endif  // SEQVC_EVAL_H_
