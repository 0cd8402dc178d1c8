// multitask.h
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
// Auxiliary linguistic supervision: dropout-plus-projection classifier heads
// over the encoder output and the decoder RNN input, masked cross-entropy
// against frame-level phoneme and tone targets, and the weighted total loss.

#ifndef SEQVC_MULTITASK_H_
#define SEQVC_MULTITASK_H_

#include <cstdint>
#include <string>
#include <vector>

#include "seqvc/model.h"

namespace seqvc {

// Names the projection tensors of one classifier head. The weights live in
// the model's parameter store under the classifier kind, so stripping them
// cannot change conversion.
struct ClassifierHead {
  std::string ph_w, ph_b;
  std::string tone_w, tone_b;
  double dropout = 0.5;
  int head_id = 0;  // dropout stream component
};

ClassifierHead EncoderHead(double dropout);
ClassifierHead DecoderHead(double dropout);

struct LossWeights {
  double lambda_phoneme = 0.1;
  double lambda_tone = 0.05;

  void Validate() const;
};

struct ClassifierLogits {
  ad::Var phoneme;  // [T x P]
  ad::Var tone;     // [T x C_tone]
};

// Shared dropout on the hidden block, then the two projections. The mask
// stream is (seed, step, head id), so two heads on one sample and the same
// head across samples draw independent masks.
ClassifierLogits Classify(ad::Graph &g, const BoundParams &p, ad::Var hidden,
                          const ClassifierHead &head, bool training,
                          uint64_t seed, uint64_t step);

// Mean of -log softmax(logits)[t, targets[t]] over frames with mask set.
// Throws "empty mask" when no frame is selected.
ad::Var MaskedCrossEntropy(ad::Graph &g, ad::Var logits,
                           const std::vector<int> &targets,
                           const std::vector<uint8_t> &mask);

// mel + stop + lambda_ph * (enc_ph + dec_ph) + lambda_tone * (enc_tone +
// dec_tone). Zero weights reduce to the baseline loss exactly.
ad::Var TotalLoss(ad::Graph &g, ad::Var mel_loss, ad::Var stop_loss,
                  ad::Var enc_ph, ad::Var enc_tone, ad::Var dec_ph,
                  ad::Var dec_tone, const LossWeights &w);

// Fraction of masked frames whose argmax matches the target; for logs.
double MaskedAccuracy(const Eigen::MatrixXd &logits,
                      const std::vector<int> &targets,
                      const std::vector<uint8_t> &mask);

}  // namespace seqvc

#endif  // SEQVC_MULTITASK_H_
