// model.h
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
// The sequence-to-sequence acoustic model: bidirectional recurrent encoder
// over concatenated spectra and bottleneck features, PreNet on the fed-back
// frame, attention RNN, additive location-sensitive attention, decoder RNN,
// mixture-density output with a stop predictor, and a residual PostNet.

#ifndef SEQVC_MODEL_H_
#define SEQVC_MODEL_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seqvc/autodiff.h"
#include "seqvc/features.h"
#include "seqvc/rng.h"

namespace seqvc {

struct ModelConfig {
  int feat_dim = 20;        // D, includes the pitch channel
  int bottleneck_dim = 8;   // D_b
  int encoder_hidden = 128; // H, split evenly across the two directions
  int attn_rnn_size = 128;  // R
  int decoder_rnn_size = 128;
  int attn_dim = 64;        // additive attention projection
  int attn_filters = 8;     // location feature filters
  int attn_kernel = 15;     // location convolution width, odd
  int prenet_hidden = 64;   // both PreNet layers
  double prenet_dropout = 0.5;
  int postnet_channels = 64;
  int postnet_layers = 3;
  int postnet_kernel = 5;   // odd
  int mdn_mixtures = 2;     // K
  double log_sigma_floor = -7.0;
  double max_decode_ratio = 3.0;
  int phoneme_classes = 13; // P, includes silence
  int tone_classes = 5;     // includes the reserved no-tone id

  int input_dim() const { return feat_dim + bottleneck_dim; }
  void Validate() const;
};

enum class ParamKind {
  kModel,       // trainable, needed at conversion
  kClassifier,  // trainable, training-only; stripped for deployment
  kConstant,    // not trainable (normalization statistics)
};

// Named tensor collection with a stable creation order. The order fixes both
// the checkpoint layout and the optimizer's reduction order.
class ParamStore {
 public:
  Eigen::MatrixXd &Create(const std::string &name, int rows, int cols,
                          ParamKind kind = ParamKind::kModel);
  bool Has(const std::string &name) const;
  Eigen::MatrixXd &Get(const std::string &name);
  const Eigen::MatrixXd &Get(const std::string &name) const;
  ParamKind Kind(const std::string &name) const;
  const std::vector<std::string> &Names() const { return order_; }
  int size() const { return static_cast<int>(order_.size()); }

  void RemoveClassifiers();
  bool HasClassifiers() const;

  // Order-sensitive content hash, used by determinism tests.
  uint64_t Fingerprint() const;

 private:
  struct Entry {
    Eigen::MatrixXd value;
    ParamKind kind;
  };
  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
};

// Registers every tensor of a store on one graph: trainable kinds as Param
// nodes, constants as Input nodes.
class BoundParams {
 public:
  BoundParams(ad::Graph &g, const ParamStore &store);
  ad::Var operator[](const std::string &name) const;
  bool Has(const std::string &name) const;
  const std::vector<std::pair<std::string, ad::Var>> &items() const {
    return items_;
  }

 private:
  std::vector<std::pair<std::string, ad::Var>> items_;
  std::map<std::string, int> index_;
};

// Inverted dropout mask: entries are 0 with probability `rate`, else
// 1/(1-rate). Deterministic in `stream`.
Eigen::MatrixXd DropoutMask(int rows, int cols, double rate, uint64_t stream);

// Identity when not training or rate is 0.
ad::Var ApplyDropout(ad::Graph &g, ad::Var v, double rate, bool training,
                     uint64_t stream);

// Per-frame mixture parameters for a [T x Dec] block of decoder outputs.
struct MdnOutput {
  ad::Var logits;      // [T x K]
  ad::Var means;       // [T x K*D]
  ad::Var log_sigmas;  // [T x K*D], floored
};

struct StepOutput {
  ad::Var dec_out;     // [1 x Dec]
  ad::Var dec_tap;     // [1 x (H + R)], concat(context, attention RNN out)
  ad::Var stop_logit;  // [1 x 1]
  ad::Var alpha;       // [1 x T_enc]
};

// Recurrent decoding state across steps of one utterance.
struct DecoderState {
  ad::Var memory;    // [T_enc x H]
  ad::Var mem_proj;  // [T_enc x A]
  ad::Var attn_h;    // [1 x R]
  ad::Var dec_h;     // [1 x Dec]
  ad::Var context;   // [1 x H]
  ad::Var alpha;     // [1 x T_enc]
  int step = 0;
  bool initialized = false;
};

struct ForwardResult {
  ad::Var mel_loss;           // scalar: mean over frames of nll + L1
  ad::Var stop_loss;          // scalar: mean BCE on the stop flag
  ad::Var nll_mean;           // scalar, likelihood part alone
  ad::Var enc_tap;            // [T_enc x H] encoder output
  ad::Var dec_tap;            // [T_dec x (H + R)] decoder RNN inputs
  Eigen::MatrixXd attention;  // [T_dec x T_enc] weights
};

struct ConvertResult {
  FeatureTrack track;         // de-normalized output frames
  Eigen::MatrixXd attention;  // [T_dec x T_enc]
  bool stopped_early = false;
};

class AcousticModel {
 public:
  explicit AcousticModel(const ModelConfig &config);

  // Fresh deterministic parameters. Classifier heads are created only when
  // requested; without them the store carries no training-only tensors.
  void Init(uint64_t seed, bool include_classifiers);

  const ModelConfig &config() const { return config_; }
  ParamStore &params() { return params_; }
  const ParamStore &params() const { return params_; }

  // Per-channel statistics used to whiten inputs and targets. scale is the
  // inverse standard deviation.
  void SetNormalization(const Eigen::RowVectorXd &in_mean,
                        const Eigen::RowVectorXd &in_scale,
                        const Eigen::RowVectorXd &tgt_mean,
                        const Eigen::RowVectorXd &tgt_scale);

  Eigen::MatrixXd NormalizeInput(const Eigen::MatrixXd &raw) const;
  Eigen::MatrixXd NormalizeTarget(const Eigen::MatrixXd &raw) const;
  Eigen::MatrixXd DenormalizeTarget(const Eigen::MatrixXd &normed) const;

  // Encoder over the first `len` rows of the (normalized) input. Throws on
  // non-finite input.
  ad::Var Encode(ad::Graph &g, const BoundParams &p,
                 const Eigen::MatrixXd &input_normed, int len) const;

  DecoderState InitDecoder(ad::Graph &g, const BoundParams &p,
                           ad::Var memory) const;

  // One autoregressive step; `prev_frame` is the previous (normalized)
  // output or target frame, [1 x D]. Throws if the state was not produced
  // by InitDecoder.
  StepOutput DecoderStep(ad::Graph &g, const BoundParams &p,
                         DecoderState *state, ad::Var prev_frame,
                         bool training, uint64_t dropout_seed) const;

  // Mixture head over stacked decoder outputs [T x Dec].
  MdnOutput MdnHead(ad::Graph &g, const BoundParams &p, ad::Var dec_out) const;

  // Negative log-likelihood per frame, [T x 1].
  ad::Var MdnNll(ad::Graph &g, const MdnOutput &mdn, ad::Var targets) const;

  // Mixture expectation per frame, [T x D]; the PostNet input.
  ad::Var MdnExpectation(ad::Graph &g, const MdnOutput &mdn) const;

  // Mean of the highest-weight component (ties break toward the lower
  // index) for one row of an MdnOutput. Value-level, used at conversion.
  Eigen::RowVectorXd MdnPoint(const MdnOutput &mdn, int row) const;

  // Residual refinement, [T x D] -> [T x D].
  ad::Var Postnet(ad::Graph &g, const BoundParams &p, ad::Var coarse) const;

  // nll + per-frame L1 between the refined output and the target, [T x 1].
  ad::Var MelLossPerFrame(ad::Graph &g, const MdnOutput &mdn,
                          ad::Var postnet_out, ad::Var targets) const;

  // Teacher-forced pass over one (possibly padded) sample; rows at or past
  // the lengths are never read, so padding cannot leak into the losses.
  ForwardResult ForwardTeacherForced(ad::Graph &g, const BoundParams &p,
                                     const Eigen::MatrixXd &src_input_raw,
                                     const Eigen::MatrixXd &tgt_raw,
                                     int enc_len, int dec_len, bool training,
                                     uint64_t dropout_seed) const;

  // Deterministic autoregressive conversion; dropout off, classifier
  // parameters unused.
  ConvertResult Convert(const FeatureTrack &src,
                        const BottleneckTrack &src_bn) const;

 private:
  ad::Var GruSequence(ad::Graph &g, const BoundParams &p,
                      const std::string &prefix, ad::Var inputs, int hidden,
                      bool backward) const;
  ad::Var GruStep(ad::Graph &g, const BoundParams &p,
                  const std::string &prefix, ad::Var x, ad::Var h,
                  int hidden) const;
  ad::Var Prenet(ad::Graph &g, const BoundParams &p, ad::Var frame,
                 bool training, uint64_t dropout_seed, int step) const;

  ModelConfig config_;
  ParamStore params_;
};

}  // namespace seqvc

#endif  // SEQVC_MODEL_H_
