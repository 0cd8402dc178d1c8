// multitask.cc
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

#include "seqvc/multitask.h"

#include <stdexcept>

namespace seqvc {

using ad::Graph;
using ad::Mat;
using ad::Var;

ClassifierHead EncoderHead(double dropout) {
  return ClassifierHead{"cls.enc.ph.w", "cls.enc.ph.b", "cls.enc.tone.w",
                        "cls.enc.tone.b", dropout, 0};
}

ClassifierHead DecoderHead(double dropout) {
  return ClassifierHead{"cls.dec.ph.w", "cls.dec.ph.b", "cls.dec.tone.w",
                        "cls.dec.tone.b", dropout, 1};
}

void LossWeights::Validate() const {
  if (lambda_phoneme < 0 || lambda_tone < 0)
    throw std::invalid_argument("loss weights must be >= 0");
}

ClassifierLogits Classify(Graph &g, const BoundParams &p, Var hidden,
                          const ClassifierHead &head, bool training,
                          uint64_t seed, uint64_t step) {
  if (!hidden.value().allFinite())
    throw std::invalid_argument("non-finite classifier input");
  Var h = ApplyDropout(g, hidden, head.dropout, training,
                       StreamSeed(seed, "cls", step, head.head_id));
  ClassifierLogits out;
  out.phoneme =
      g.AddRowBroadcast(g.MatMul(h, p[head.ph_w]), p[head.ph_b]);
  out.tone =
      g.AddRowBroadcast(g.MatMul(h, p[head.tone_w]), p[head.tone_b]);
  return out;
}

Var MaskedCrossEntropy(Graph &g, Var logits, const std::vector<int> &targets,
                       const std::vector<uint8_t> &mask) {
  const int T = static_cast<int>(logits.rows());
  const int C = static_cast<int>(logits.cols());
  if (static_cast<int>(targets.size()) != T ||
      static_cast<int>(mask.size()) != T)
    throw std::invalid_argument("targets and mask must have one entry per row");

  int count = 0;
  std::vector<int> picked(targets.size());
  for (int t = 0; t < T; ++t) {
    if (!mask[t]) {
      // Never read; keep the gather in range whatever the padding holds.
      picked[t] = 0;
      continue;
    }
    if (targets[t] < 0 || targets[t] >= C)
      throw std::invalid_argument("class target out of range");
    picked[t] = targets[t];
    count++;
  }
  if (count == 0) throw std::invalid_argument("empty mask");

  Mat m = Mat::Zero(T, 1);
  for (int t = 0; t < T; ++t) m(t, 0) = mask[t] ? 1.0 : 0.0;
  Var ls = g.PickColsPerRow(g.LogSoftmaxRows(logits), picked);
  return g.Scale(g.SumAll(g.CMul(ls, m)), -1.0 / count);
}

Var TotalLoss(Graph &g, Var mel_loss, Var stop_loss, Var enc_ph,
              Var enc_tone, Var dec_ph, Var dec_tone,
              const LossWeights &w) {
  w.Validate();
  Var total = g.Add(mel_loss, stop_loss);
  total = g.Add(total, g.Scale(g.Add(enc_ph, dec_ph), w.lambda_phoneme));
  return g.Add(total, g.Scale(g.Add(enc_tone, dec_tone), w.lambda_tone));
}

double MaskedAccuracy(const Eigen::MatrixXd &logits,
                      const std::vector<int> &targets,
                      const std::vector<uint8_t> &mask) {
  int count = 0, hits = 0;
  for (int t = 0; t < logits.rows(); ++t) {
    if (t >= static_cast<int>(mask.size()) || !mask[t]) continue;
    Eigen::Index best;
    logits.row(t).maxCoeff(&best);
    count++;
    if (static_cast<int>(best) == targets[t]) hits++;
  }
  return count == 0 ? 0.0 : static_cast<double>(hits) / count;
}

}  // namespace seqvc
