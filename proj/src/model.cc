// model.cc
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

#include "seqvc/model.h"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace seqvc {

using ad::Graph;
using ad::Mat;
using ad::Var;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// One gated recurrent update. pre = x*Wx + bx packed [z|r|candidate],
// each block `hidden` wide.
Var GruGate(Graph &g, Var pre, Var uzr, Var uh, Var h, int hidden) {
  Var hu = g.MatMul(h, uzr);
  Var z = g.Sigmoid(
      g.Add(g.SliceCols(pre, 0, hidden), g.SliceCols(hu, 0, hidden)));
  Var r = g.Sigmoid(
      g.Add(g.SliceCols(pre, hidden, hidden), g.SliceCols(hu, hidden, hidden)));
  Var cand = g.Tanh(g.Add(g.SliceCols(pre, 2 * hidden, hidden),
                          g.MatMul(g.Mul(r, h), uh)));
  return g.Add(h, g.Mul(z, g.Sub(cand, h)));
}

}  // namespace

void ModelConfig::Validate() const {
  if (feat_dim < 2) throw std::invalid_argument("feat_dim must be >= 2");
  if (bottleneck_dim < 1)
    throw std::invalid_argument("bottleneck_dim must be >= 1");
  if (encoder_hidden < 2 || encoder_hidden % 2 != 0)
    throw std::invalid_argument("encoder_hidden must be even and >= 2");
  if (attn_rnn_size < 1 || decoder_rnn_size < 1 || attn_dim < 1 ||
      attn_filters < 1 || prenet_hidden < 1 || postnet_channels < 1)
    throw std::invalid_argument("all sizes must be >= 1");
  if (postnet_layers < 1)
    throw std::invalid_argument("postnet_layers must be >= 1");
  if (attn_kernel < 1 || attn_kernel % 2 == 0)
    throw std::invalid_argument("attn_kernel must be odd");
  if (postnet_kernel < 1 || postnet_kernel % 2 == 0)
    throw std::invalid_argument("postnet_kernel must be odd");
  if (mdn_mixtures < 1) throw std::invalid_argument("mdn_mixtures must be >= 1");
  if (!(max_decode_ratio > 0))
    throw std::invalid_argument("max_decode_ratio must be > 0");
  if (prenet_dropout < 0 || prenet_dropout >= 1)
    throw std::invalid_argument("prenet_dropout must be in [0, 1)");
  if (phoneme_classes < 1 || tone_classes < 1)
    throw std::invalid_argument("class counts must be >= 1");
}

Eigen::MatrixXd &ParamStore::Create(const std::string &name, int rows,
                                    int cols, ParamKind kind) {
  if (entries_.count(name))
    throw std::invalid_argument("duplicate parameter " + name);
  order_.push_back(name);
  Entry &e = entries_[name];
  e.value = Eigen::MatrixXd::Zero(rows, cols);
  e.kind = kind;
  return e.value;
}

bool ParamStore::Has(const std::string &name) const {
  return entries_.count(name) != 0;
}

Eigen::MatrixXd &ParamStore::Get(const std::string &name) {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("no parameter named " + name);
  return it->second.value;
}

const Eigen::MatrixXd &ParamStore::Get(const std::string &name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("no parameter named " + name);
  return it->second.value;
}

ParamKind ParamStore::Kind(const std::string &name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("no parameter named " + name);
  return it->second.kind;
}

void ParamStore::RemoveClassifiers() {
  std::vector<std::string> keep;
  for (const std::string &name : order_) {
    if (entries_.at(name).kind == ParamKind::kClassifier)
      entries_.erase(name);
    else
      keep.push_back(name);
  }
  order_ = std::move(keep);
}

bool ParamStore::HasClassifiers() const {
  for (const auto &[name, e] : entries_)
    if (e.kind == ParamKind::kClassifier) return true;
  return false;
}

uint64_t ParamStore::Fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void *data, size_t n) {
    const unsigned char *b = static_cast<const unsigned char *>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const std::string &name : order_) {
    mix_bytes(name.data(), name.size());
    const Eigen::MatrixXd &m = entries_.at(name).value;
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        double v = m(r, c);
        mix_bytes(&v, sizeof(v));
      }
  }
  return h;
}

BoundParams::BoundParams(Graph &g, const ParamStore &store) {
  for (const std::string &name : store.Names()) {
    Var v = store.Kind(name) == ParamKind::kConstant
                ? g.Input(store.Get(name))
                : g.Param(store.Get(name));
    index_[name] = static_cast<int>(items_.size());
    items_.emplace_back(name, v);
  }
}

Var BoundParams::operator[](const std::string &name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::out_of_range("parameter " + name + " not bound");
  return items_[it->second].second;
}

bool BoundParams::Has(const std::string &name) const {
  return index_.count(name) != 0;
}

Eigen::MatrixXd DropoutMask(int rows, int cols, double rate,
                            uint64_t stream) {
  if (rate < 0 || rate >= 1)
    throw std::invalid_argument("dropout rate must be in [0, 1)");
  Rng rng(stream);
  double keep = 1.0 - rate;
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      m(i, j) = rng.Uniform() < rate ? 0.0 : 1.0 / keep;
  return m;
}

Var ApplyDropout(Graph &g, Var v, double rate, bool training,
                 uint64_t stream) {
  if (!training || rate <= 0) return v;
  return g.CMul(v, DropoutMask(static_cast<int>(v.rows()),
                               static_cast<int>(v.cols()), rate, stream));
}

AcousticModel::AcousticModel(const ModelConfig &config) : config_(config) {
  config_.Validate();
}

void AcousticModel::Init(uint64_t seed, bool include_classifiers) {
  params_ = ParamStore();
  const int D = config_.feat_dim;
  const int I = config_.input_dim();
  const int Hh = config_.encoder_hidden / 2;
  const int H = config_.encoder_hidden;
  const int R = config_.attn_rnn_size;
  const int Dec = config_.decoder_rnn_size;
  const int A = config_.attn_dim;
  const int F = config_.attn_filters;
  const int P1 = config_.prenet_hidden;
  const int K = config_.mdn_mixtures;

  auto glorot = [&](const std::string &name, int r, int c,
                    ParamKind kind = ParamKind::kModel) {
    Eigen::MatrixXd &m = params_.Create(name, r, c, kind);
    double limit = std::sqrt(6.0 / (r + c));
    Rng rng(StreamSeed(seed, "init", HashString(name)));
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = rng.Uniform(-limit, limit);
  };
  auto zeros = [&](const std::string &name, int r, int c,
                   ParamKind kind = ParamKind::kModel) {
    params_.Create(name, r, c, kind);
  };

  for (const std::string dir : {"enc.fwd", "enc.bwd"}) {
    glorot(dir + ".wx", I, 3 * Hh);
    zeros(dir + ".bx", 1, 3 * Hh);
    glorot(dir + ".uzr", Hh, 2 * Hh);
    glorot(dir + ".uh", Hh, Hh);
  }

  glorot("prenet.w1", D, P1);
  zeros("prenet.b1", 1, P1);
  glorot("prenet.w2", P1, P1);
  zeros("prenet.b2", 1, P1);

  glorot("arnn.wx", P1 + H, 3 * R);
  zeros("arnn.bx", 1, 3 * R);
  glorot("arnn.uzr", R, 2 * R);
  glorot("arnn.uh", R, R);

  glorot("attn.wm", H, A);
  glorot("attn.wq", R, A);
  glorot("attn.wf", F, A);
  zeros("attn.b", 1, A);
  glorot("attn.v", A, 1);
  glorot("attn.loc", F, config_.attn_kernel);

  glorot("drnn.wx", H + R, 3 * Dec);
  zeros("drnn.bx", 1, 3 * Dec);
  glorot("drnn.uzr", Dec, 2 * Dec);
  glorot("drnn.uh", Dec, Dec);

  glorot("mdn.w_logit", Dec, K);
  zeros("mdn.b_logit", 1, K);
  glorot("mdn.w_mu", Dec, K * D);
  zeros("mdn.b_mu", 1, K * D);
  glorot("mdn.w_ls", Dec, K * D);
  zeros("mdn.b_ls", 1, K * D);

  glorot("stop.w", Dec, 1);
  zeros("stop.b", 1, 1);

  const int C = config_.postnet_channels;
  const int L = config_.postnet_layers;
  for (int j = 0; j < L; ++j) {
    int cin = j == 0 ? D : C;
    int cout = j == L - 1 ? D : C;
    std::string w = "postnet.w" + std::to_string(j);
    std::string b = "postnet.b" + std::to_string(j);
    if (j == L - 1) {
      // Residual identity at initialization.
      zeros(w, config_.postnet_kernel * cin, cout);
    } else {
      glorot(w, config_.postnet_kernel * cin, cout);
    }
    zeros(b, 1, cout);
  }

  if (include_classifiers) {
    const int P = config_.phoneme_classes;
    const int Tn = config_.tone_classes;
    glorot("cls.enc.ph.w", H, P, ParamKind::kClassifier);
    zeros("cls.enc.ph.b", 1, P, ParamKind::kClassifier);
    glorot("cls.enc.tone.w", H, Tn, ParamKind::kClassifier);
    zeros("cls.enc.tone.b", 1, Tn, ParamKind::kClassifier);
    glorot("cls.dec.ph.w", H + R, P, ParamKind::kClassifier);
    zeros("cls.dec.ph.b", 1, P, ParamKind::kClassifier);
    glorot("cls.dec.tone.w", H + R, Tn, ParamKind::kClassifier);
    zeros("cls.dec.tone.b", 1, Tn, ParamKind::kClassifier);
  }

  zeros("norm.in.mean", 1, I, ParamKind::kConstant);
  params_.Create("norm.in.scale", 1, I, ParamKind::kConstant).setOnes();
  zeros("norm.tgt.mean", 1, D, ParamKind::kConstant);
  params_.Create("norm.tgt.scale", 1, D, ParamKind::kConstant).setOnes();
}

void AcousticModel::SetNormalization(const Eigen::RowVectorXd &in_mean,
                                     const Eigen::RowVectorXd &in_scale,
                                     const Eigen::RowVectorXd &tgt_mean,
                                     const Eigen::RowVectorXd &tgt_scale) {
  if (in_mean.size() != config_.input_dim() ||
      in_scale.size() != config_.input_dim() ||
      tgt_mean.size() != config_.feat_dim ||
      tgt_scale.size() != config_.feat_dim)
    throw std::invalid_argument("normalization dimension mismatch");
  if ((in_scale.array() <= 0).any() || (tgt_scale.array() <= 0).any())
    throw std::invalid_argument("normalization scales must be positive");
  params_.Get("norm.in.mean").row(0) = in_mean;
  params_.Get("norm.in.scale").row(0) = in_scale;
  params_.Get("norm.tgt.mean").row(0) = tgt_mean;
  params_.Get("norm.tgt.scale").row(0) = tgt_scale;
}

Eigen::MatrixXd AcousticModel::NormalizeInput(
    const Eigen::MatrixXd &raw) const {
  Mat out = raw.rowwise() - params_.Get("norm.in.mean").row(0);
  out.array().rowwise() *= params_.Get("norm.in.scale").row(0).array();
  return out;
}

Eigen::MatrixXd AcousticModel::NormalizeTarget(
    const Eigen::MatrixXd &raw) const {
  Mat out = raw.rowwise() - params_.Get("norm.tgt.mean").row(0);
  out.array().rowwise() *= params_.Get("norm.tgt.scale").row(0).array();
  return out;
}

Eigen::MatrixXd AcousticModel::DenormalizeTarget(
    const Eigen::MatrixXd &normed) const {
  Mat out = normed;
  out.array().rowwise() /= params_.Get("norm.tgt.scale").row(0).array();
  out.rowwise() += params_.Get("norm.tgt.mean").row(0);
  return out;
}

Var AcousticModel::GruStep(Graph &g, const BoundParams &p,
                           const std::string &prefix, Var x, Var h,
                           int hidden) const {
  Var pre = g.AddRowBroadcast(g.MatMul(x, p[prefix + ".wx"]),
                              p[prefix + ".bx"]);
  return GruGate(g, pre, p[prefix + ".uzr"], p[prefix + ".uh"], h, hidden);
}

Var AcousticModel::GruSequence(Graph &g, const BoundParams &p,
                               const std::string &prefix, Var inputs,
                               int hidden, bool backward) const {
  const int T = static_cast<int>(inputs.rows());
  Var pre = g.AddRowBroadcast(g.MatMul(inputs, p[prefix + ".wx"]),
                              p[prefix + ".bx"]);
  Var uzr = p[prefix + ".uzr"];
  Var uh = p[prefix + ".uh"];
  Var h = g.Input(Mat::Zero(1, hidden));
  std::vector<Var> states(T);
  for (int i = 0; i < T; ++i) {
    int t = backward ? T - 1 - i : i;
    h = GruGate(g, g.Row(pre, t), uzr, uh, h, hidden);
    states[t] = h;
  }
  return g.ConcatRows(states);
}

Var AcousticModel::Encode(Graph &g, const BoundParams &p,
                          const Eigen::MatrixXd &input_normed,
                          int len) const {
  if (len < 1 || len > input_normed.rows())
    throw std::invalid_argument("encoder length out of range");
  Mat sub = input_normed.topRows(len);
  if (!sub.allFinite())
    throw std::invalid_argument("non-finite encoder input");
  if (sub.cols() != config_.input_dim())
    throw std::invalid_argument("encoder input dimension mismatch");
  Var x = g.Input(std::move(sub));
  const int Hh = config_.encoder_hidden / 2;
  Var fwd = GruSequence(g, p, "enc.fwd", x, Hh, false);
  Var bwd = GruSequence(g, p, "enc.bwd", x, Hh, true);
  return g.ConcatCols(fwd, bwd);
}

DecoderState AcousticModel::InitDecoder(Graph &g, const BoundParams &p,
                                        Var memory) const {
  DecoderState st;
  const int T = static_cast<int>(memory.rows());
  st.memory = memory;
  st.mem_proj = g.MatMul(memory, p["attn.wm"]);
  Mat alpha0 = Mat::Zero(1, T);
  alpha0(0, 0) = 1.0;
  st.alpha = g.Input(std::move(alpha0));
  st.context = g.MatMul(st.alpha, memory);
  st.attn_h = g.Input(Mat::Zero(1, config_.attn_rnn_size));
  st.dec_h = g.Input(Mat::Zero(1, config_.decoder_rnn_size));
  st.step = 0;
  st.initialized = true;
  return st;
}

Var AcousticModel::Prenet(Graph &g, const BoundParams &p, Var frame,
                          bool training, uint64_t dropout_seed,
                          int step) const {
  Var h1 = g.Relu(g.AddRowBroadcast(g.MatMul(frame, p["prenet.w1"]),
                                    p["prenet.b1"]));
  h1 = ApplyDropout(g, h1, config_.prenet_dropout, training,
                    StreamSeed(dropout_seed, "prenet", step, 0));
  Var h2 = g.Relu(g.AddRowBroadcast(g.MatMul(h1, p["prenet.w2"]),
                                    p["prenet.b2"]));
  return ApplyDropout(g, h2, config_.prenet_dropout, training,
                      StreamSeed(dropout_seed, "prenet", step, 1));
}

StepOutput AcousticModel::DecoderStep(Graph &g, const BoundParams &p,
                                      DecoderState *state, Var prev_frame,
                                      bool training,
                                      uint64_t dropout_seed) const {
  if (state == nullptr || !state->initialized)
    throw std::logic_error("decoder state not initialized");
  Var pre = Prenet(g, p, prev_frame, training, dropout_seed, state->step);
  Var arnn_in = g.ConcatCols(pre, state->context);
  state->attn_h =
      GruStep(g, p, "arnn", arnn_in, state->attn_h, config_.attn_rnn_size);

  Var loc = g.LocationConv(state->alpha, p["attn.loc"]);
  Var feats = g.Add(state->mem_proj, g.MatMul(loc, p["attn.wf"]));
  Var query =
      g.Add(g.MatMul(state->attn_h, p["attn.wq"]), p["attn.b"]);
  Var scores =
      g.MatMul(g.Tanh(g.AddRowBroadcast(feats, query)), p["attn.v"]);
  state->alpha = g.SoftmaxRows(g.Transpose(scores));
  state->context = g.MatMul(state->alpha, state->memory);

  Var dec_in = g.ConcatCols(state->context, state->attn_h);
  state->dec_h =
      GruStep(g, p, "drnn", dec_in, state->dec_h, config_.decoder_rnn_size);

  StepOutput out;
  out.dec_out = state->dec_h;
  out.dec_tap = dec_in;
  out.stop_logit =
      g.Add(g.MatMul(state->dec_h, p["stop.w"]), p["stop.b"]);
  out.alpha = state->alpha;
  state->step++;
  return out;
}

MdnOutput AcousticModel::MdnHead(Graph &g, const BoundParams &p,
                                 Var dec_out) const {
  MdnOutput mdn;
  mdn.logits = g.AddRowBroadcast(g.MatMul(dec_out, p["mdn.w_logit"]),
                                 p["mdn.b_logit"]);
  mdn.means = g.AddRowBroadcast(g.MatMul(dec_out, p["mdn.w_mu"]),
                                p["mdn.b_mu"]);
  mdn.log_sigmas =
      g.ClampMin(g.AddRowBroadcast(g.MatMul(dec_out, p["mdn.w_ls"]),
                                   p["mdn.b_ls"]),
                 config_.log_sigma_floor);
  return mdn;
}

Var AcousticModel::MdnNll(Graph &g, const MdnOutput &mdn,
                          Var targets) const {
  const int D = config_.feat_dim;
  const int K = config_.mdn_mixtures;
  if (targets.cols() != D)
    throw std::invalid_argument("target dimension mismatch");
  Var logw = g.LogSoftmaxRows(mdn.logits);
  Var cat;
  for (int k = 0; k < K; ++k) {
    Var mu = g.SliceCols(mdn.means, k * D, D);
    Var ls = g.SliceCols(mdn.log_sigmas, k * D, D);
    Var d = g.Mul(g.Sub(targets, mu), g.Exp(g.Scale(ls, -1.0)));
    Var comp = g.Scale(g.RowSum(g.Mul(d, d)), -0.5);
    comp = g.Sub(comp, g.RowSum(ls));
    comp = g.AddConst(comp, -0.5 * D * kLog2Pi);
    comp = g.Add(comp, g.SliceCols(logw, k, 1));
    cat = k == 0 ? comp : g.ConcatCols(cat, comp);
  }
  return g.Scale(g.LogSumExpRows(cat), -1.0);
}

Var AcousticModel::MdnExpectation(Graph &g, const MdnOutput &mdn) const {
  const int D = config_.feat_dim;
  const int K = config_.mdn_mixtures;
  Var w = g.SoftmaxRows(mdn.logits);
  Var acc;
  for (int k = 0; k < K; ++k) {
    Var term = g.MulColBroadcast(g.SliceCols(mdn.means, k * D, D),
                                 g.SliceCols(w, k, 1));
    acc = k == 0 ? term : g.Add(acc, term);
  }
  return acc;
}

Eigen::RowVectorXd AcousticModel::MdnPoint(const MdnOutput &mdn,
                                           int row) const {
  const int D = config_.feat_dim;
  const Mat &logits = mdn.logits.value();
  if (row < 0 || row >= logits.rows())
    throw std::invalid_argument("mdn row out of range");
  int best = 0;
  for (int k = 1; k < config_.mdn_mixtures; ++k)
    if (logits(row, k) > logits(row, best)) best = k;
  return mdn.means.value().row(row).segment(best * D, D);
}

Var AcousticModel::Postnet(Graph &g, const BoundParams &p,
                           Var coarse) const {
  const int L = config_.postnet_layers;
  Var x = coarse;
  for (int j = 0; j < L; ++j) {
    Var y = g.Conv1dTime(x, p["postnet.w" + std::to_string(j)],
                         config_.postnet_kernel);
    y = g.AddRowBroadcast(y, p["postnet.b" + std::to_string(j)]);
    if (j < L - 1) y = g.Tanh(y);
    x = y;
  }
  return g.Add(coarse, x);
}

Var AcousticModel::MelLossPerFrame(Graph &g, const MdnOutput &mdn,
                                   Var postnet_out, Var targets) const {
  Var nll = MdnNll(g, mdn, targets);
  Var l1 = g.RowSum(g.Abs(g.Sub(postnet_out, targets)));
  return g.Add(nll, l1);
}

ForwardResult AcousticModel::ForwardTeacherForced(
    Graph &g, const BoundParams &p, const Eigen::MatrixXd &src_input_raw,
    const Eigen::MatrixXd &tgt_raw, int enc_len, int dec_len, bool training,
    uint64_t dropout_seed) const {
  if (dec_len < 1) throw std::invalid_argument("length-0 target");
  if (enc_len < 1) throw std::invalid_argument("length-0 source");
  if (dec_len > tgt_raw.rows() || enc_len > src_input_raw.rows())
    throw std::invalid_argument("length exceeds provided frames");

  Mat in_n = NormalizeInput(src_input_raw.topRows(enc_len));
  Mat tgt_n = NormalizeTarget(tgt_raw.topRows(dec_len));

  Var memory = Encode(g, p, in_n, enc_len);
  DecoderState st = InitDecoder(g, p, memory);
  Var tgt = g.Input(tgt_n);
  Var zero_frame = g.Input(Mat::Zero(1, config_.feat_dim));

  std::vector<Var> dec_outs, taps, stops;
  dec_outs.reserve(dec_len);
  taps.reserve(dec_len);
  stops.reserve(dec_len);
  Eigen::MatrixXd attention(dec_len, enc_len);
  for (int t = 0; t < dec_len; ++t) {
    Var prev = t == 0 ? zero_frame : g.Row(tgt, t - 1);
    StepOutput so = DecoderStep(g, p, &st, prev, training, dropout_seed);
    dec_outs.push_back(so.dec_out);
    taps.push_back(so.dec_tap);
    stops.push_back(so.stop_logit);
    attention.row(t) = so.alpha.value().row(0);
  }

  Var dec_stack = g.ConcatRows(dec_outs);
  MdnOutput mdn = MdnHead(g, p, dec_stack);
  Var nll = MdnNll(g, mdn, tgt);
  Var coarse = MdnExpectation(g, mdn);
  Var post = Postnet(g, p, coarse);
  Var l1 = g.RowSum(g.Abs(g.Sub(post, tgt)));

  Mat stop_tgt = Mat::Zero(dec_len, 1);
  stop_tgt(dec_len - 1, 0) = 1.0;
  Var stop_stack = g.ConcatRows(stops);

  ForwardResult out;
  out.mel_loss = g.Scale(g.SumAll(g.Add(nll, l1)), 1.0 / dec_len);
  out.stop_loss =
      g.Scale(g.SumAll(g.BceLogits(stop_stack, stop_tgt)), 1.0 / dec_len);
  out.nll_mean = g.Scale(g.SumAll(nll), 1.0 / dec_len);
  out.enc_tap = memory;
  out.dec_tap = g.ConcatRows(taps);
  out.attention = std::move(attention);
  return out;
}

ConvertResult AcousticModel::Convert(const FeatureTrack &src,
                                     const BottleneckTrack &src_bn) const {
  src.Validate();
  const int T_src = src.num_frames();
  const int D = config_.feat_dim;
  if (src.dim() != D)
    throw std::invalid_argument("source track dimension mismatch");

  Mat raw_in(T_src, config_.input_dim());
  raw_in.leftCols(D) = src.frames.cast<double>();
  raw_in.rightCols(config_.bottleneck_dim) =
      UpsampledBottleneck(src_bn, T_src).cast<double>();

  Graph g(false);
  BoundParams p(g, params_);
  Var memory = Encode(g, p, NormalizeInput(raw_in), T_src);
  DecoderState st = InitDecoder(g, p, memory);

  int max_frames = static_cast<int>(
      std::floor(config_.max_decode_ratio * T_src));
  if (max_frames < 1) max_frames = 1;

  ConvertResult result;
  std::vector<Eigen::RowVectorXd> coarse_rows, alpha_rows;
  Eigen::RowVectorXd prev = Eigen::RowVectorXd::Zero(D);
  for (int t = 0; t < max_frames; ++t) {
    Var prev_var = g.Input(prev);
    StepOutput so = DecoderStep(g, p, &st, prev_var, false, 0);
    MdnOutput mdn = MdnHead(g, p, so.dec_out);
    // Normalized features live within a few standard deviations; clamping
    // the emitted frame and the feedback keeps a drifting rollout inside
    // the range the decoder was trained on instead of compounding.
    coarse_rows.push_back(MdnExpectation(g, mdn)
                              .value()
                              .row(0)
                              .cwiseMax(-4.0)
                              .cwiseMin(4.0)
                              .eval());
    alpha_rows.push_back(so.alpha.value().row(0));
    // Feed back the same expectation PostNet refines during training; the
    // blend stays continuous when the mixture is uncertain, where the
    // best-component mean can jump between components across frames.
    prev = coarse_rows.back();
    double stop = 1.0 / (1.0 + std::exp(-so.stop_logit.scalar()));
    if (stop > 0.5) {
      result.stopped_early = true;
      break;
    }
  }

  const int T_out = static_cast<int>(coarse_rows.size());
  Mat coarse(T_out, D);
  result.attention.resize(T_out, T_src);
  for (int t = 0; t < T_out; ++t) {
    coarse.row(t) = coarse_rows[t];
    result.attention.row(t) = alpha_rows[t];
  }
  Var refined = Postnet(g, p, g.Input(coarse));
  result.track.frames = DenormalizeTarget(refined.value()).cast<float>();
  result.track.hop_ms = src.hop_ms;
  return result;
}

}  // namespace seqvc
