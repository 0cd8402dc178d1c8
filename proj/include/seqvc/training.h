// training.h
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
// The optimization loop: padded batching, Adam with gradient-norm clipping,
// the warm-then-decay learning-rate schedule, per-epoch checkpointing with
// exact resumption, and JSONL metrics.

#ifndef SEQVC_TRAINING_H_
#define SEQVC_TRAINING_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seqvc/augment.h"
#include "seqvc/checkpoint.h"
#include "seqvc/config.h"
#include "seqvc/model.h"
#include "seqvc/multitask.h"

namespace seqvc {

struct TrainConfig {
  int batch_size = 4;
  double base_lr = 0.001;
  int warm_epochs = 20;   // 40 when augmentation is on
  double decay = 0.95;
  int extra_epochs = 50;
  uint64_t seed = 1;
  bool augment = false;
  bool multitask = false;
  LossWeights weights;
  double classifier_dropout = 0.5;
  int pairs = 0;  // take the first N training pairs; 0 = all
  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  int total_epochs() const { return warm_epochs + extra_epochs; }
  void Validate() const;
};

// Paper-scale training-set size to its desk-scale pair count.
int DeskSize(int paper_size);

// base_lr during the warm epochs, then base_lr * decay^(epoch - warm).
// epoch is 1-based; throws below 1.
double LrSchedule(int epoch, int warm_epochs, double base_lr = 0.001,
                  double decay = 0.95);

// Mode presets: "baseline", "mt", "mt-da".
void ApplyMode(const std::string &mode, TrainConfig *cfg);

// `key = value` overrides; see the README for the key list.
void ApplyModelConfig(const KeyValueConfig &kv, ModelConfig *cfg);
void ApplyTrainConfig(const KeyValueConfig &kv, TrainConfig *cfg);

std::string ConfigJson(const ModelConfig &mcfg, const TrainConfig &tcfg);
ModelConfig ModelConfigFromJson(const std::string &json_text);

// One padded batch. Per-sample matrices share the batch-wide padded length;
// masks and lengths mark the real frames. Inputs hold features and
// bottlenecks concatenated.
struct Batch {
  std::vector<Eigen::MatrixXd> src;  // [B] of [padded_src x (D + D_b)]
  std::vector<Eigen::MatrixXd> tgt;  // [B] of [padded_tgt x D]
  std::vector<int> src_len, tgt_len;
  std::vector<std::vector<uint8_t>> src_mask, tgt_mask;
  std::vector<FrameLabels> src_labels, tgt_labels;  // padded with zeros
  int padded_src = 0, padded_tgt = 0;

  int size() const { return static_cast<int>(src.size()); }
};

// Throws on an empty sample list or inconsistent dimensions.
Batch MakeBatch(const std::vector<TrainSample> &samples);

struct AdamState {
  std::map<std::string, Eigen::MatrixXd> m, v;
  int64_t t = 0;
};

// Global-norm clip, then one Adam update over every entry of `grads`.
// Returns the pre-clip gradient norm.
double AdamStep(ParamStore *params,
                std::map<std::string, Eigen::MatrixXd> *grads,
                AdamState *state, const TrainConfig &cfg, double lr);

// Forward pass of one batch slot, including classifier terms when the
// config asks for them. Exposed so tests can compare padded batch slots
// against single-sample runs.
struct SampleForward {
  ForwardResult fr;
  ad::Var total;
  bool has_classifiers = false;
  ClassifierLogits enc_logits, dec_logits;
};
SampleForward ForwardBatchSample(const AcousticModel &model, ad::Graph &g,
                                 const BoundParams &p, const Batch &batch,
                                 int b, const TrainConfig &cfg, bool training,
                                 uint64_t dropout_seed, uint64_t cls_seed);

struct StepStats {
  double total = 0, mel = 0, stop = 0, nll = 0;
  double grad_norm = 0;
  double enc_ph_acc = 0, enc_tone_acc = 0, dec_ph_acc = 0, dec_tone_acc = 0;
};

// One optimizer step over a batch; means over the batch. Throws
// "training diverged at step N" when the loss is not finite.
StepStats TrainStep(AcousticModel *model, const Batch &batch,
                    const TrainConfig &cfg, AdamState *adam, double lr,
                    int64_t step_index);

struct EvalLosses {
  double total = 0, mel = 0, stop = 0, nll = 0;
  double enc_ph_acc = 0, enc_tone_acc = 0, dec_ph_acc = 0, dec_tone_acc = 0;
};

// Dropout-free losses averaged over whole-utterance samples.
EvalLosses EvaluateSamples(const AcousticModel &model,
                           const std::vector<TrainSample> &samples,
                           const TrainConfig &cfg);

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double train_total = 0, train_mel = 0, train_stop = 0;
  double val_total = 0, val_mel = 0, val_stop = 0;
  double val_enc_ph_acc = 0, val_enc_tone_acc = 0;
  double val_dec_ph_acc = 0, val_dec_tone_acc = 0;

  std::string ToJsonLine(bool multitask) const;
};

struct TrainOptions {
  std::string out_dir;      // receives epoch_NNN.ckpt, best.ckpt, metrics.jsonl
  std::string resume_from;  // checkpoint path; empty = fresh start
  int stop_after_epoch = 0; // 0 = run the full schedule
  // When off, only a rolling last.ckpt is kept next to best.ckpt.
  bool keep_epoch_checkpoints = true;
};

struct TrainResult {
  std::vector<EpochLog> logs;  // this invocation's epochs only
  std::string best_checkpoint;
  std::string last_checkpoint;
  double best_val = 0;
  int last_epoch = 0;
};

// Per-channel whitening statistics over whole training utterances.
void ComputeNormalization(const std::vector<UtterancePair> &pairs,
                          AcousticModel *model);

// The full loop. Deterministic for a fixed seed/config; resuming from an
// epoch checkpoint continues the interrupted run exactly.
TrainResult Train(const ModelConfig &mcfg, const TrainConfig &cfg,
                  const std::vector<UtterancePair> &train_pairs,
                  const std::vector<UtterancePair> &val_pairs,
                  const TrainOptions &opts);

}  // namespace seqvc

#endif  // SEQVC_TRAINING_H_
