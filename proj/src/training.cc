// training.cc
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

#include "seqvc/training.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace seqvc {

using ad::Graph;
using ad::Mat;
using ad::Var;
using nlohmann::json;

void TrainConfig::Validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(base_lr > 0)) throw std::invalid_argument("base_lr must be > 0");
  if (warm_epochs < 0 || extra_epochs < 0)
    throw std::invalid_argument("epoch counts must be >= 0");
  if (!(decay > 0) || decay > 1)
    throw std::invalid_argument("decay must be in (0, 1]");
  if (pairs < 0) throw std::invalid_argument("pairs must be >= 0");
  if (!(grad_clip > 0)) throw std::invalid_argument("grad_clip must be > 0");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
    throw std::invalid_argument("adam betas must be in [0, 1)");
  if (!(adam_eps > 0)) throw std::invalid_argument("adam_eps must be > 0");
  if (classifier_dropout < 0 || classifier_dropout >= 1)
    throw std::invalid_argument("classifier_dropout must be in [0, 1)");
  weights.Validate();
}

int DeskSize(int paper_size) {
  switch (paper_size) {
    case 50: return 10;
    case 100: return 25;
    case 200: return 50;
    case 400: return 100;
    case 1000: return 200;
    default:
      throw std::invalid_argument("no desk mapping for training size " +
                                  std::to_string(paper_size));
  }
}

double LrSchedule(int epoch, int warm_epochs, double base_lr, double decay) {
  if (epoch < 1) throw std::invalid_argument("epoch must be >= 1");
  if (epoch <= warm_epochs) return base_lr;
  return base_lr * std::pow(decay, epoch - warm_epochs);
}

void ApplyMode(const std::string &mode, TrainConfig *cfg) {
  if (mode == "baseline") {
    cfg->augment = false;
    cfg->multitask = false;
    cfg->warm_epochs = 20;
  } else if (mode == "mt") {
    cfg->augment = false;
    cfg->multitask = true;
    cfg->warm_epochs = 20;
  } else if (mode == "mt-da") {
    cfg->augment = true;
    cfg->multitask = true;
    cfg->warm_epochs = 40;
  } else {
    throw std::invalid_argument("unknown mode " + mode);
  }
}

void ApplyModelConfig(const KeyValueConfig &kv, ModelConfig *cfg) {
  cfg->feat_dim = kv.GetInt("model.feat_dim", cfg->feat_dim);
  cfg->bottleneck_dim = kv.GetInt("model.bottleneck_dim", cfg->bottleneck_dim);
  cfg->encoder_hidden = kv.GetInt("model.encoder_hidden", cfg->encoder_hidden);
  cfg->attn_rnn_size = kv.GetInt("model.attn_rnn_size", cfg->attn_rnn_size);
  cfg->decoder_rnn_size =
      kv.GetInt("model.decoder_rnn_size", cfg->decoder_rnn_size);
  cfg->attn_dim = kv.GetInt("model.attn_dim", cfg->attn_dim);
  cfg->attn_filters = kv.GetInt("model.attn_filters", cfg->attn_filters);
  cfg->attn_kernel = kv.GetInt("model.attn_kernel", cfg->attn_kernel);
  cfg->prenet_hidden = kv.GetInt("model.prenet_hidden", cfg->prenet_hidden);
  cfg->prenet_dropout =
      kv.GetDouble("model.prenet_dropout", cfg->prenet_dropout);
  cfg->postnet_channels =
      kv.GetInt("model.postnet_channels", cfg->postnet_channels);
  cfg->postnet_layers = kv.GetInt("model.postnet_layers", cfg->postnet_layers);
  cfg->postnet_kernel = kv.GetInt("model.postnet_kernel", cfg->postnet_kernel);
  cfg->mdn_mixtures = kv.GetInt("model.mdn_mixtures", cfg->mdn_mixtures);
  cfg->log_sigma_floor =
      kv.GetDouble("model.log_sigma_floor", cfg->log_sigma_floor);
  cfg->max_decode_ratio =
      kv.GetDouble("model.max_decode_ratio", cfg->max_decode_ratio);
  cfg->phoneme_classes =
      kv.GetInt("model.phoneme_classes", cfg->phoneme_classes);
  cfg->tone_classes = kv.GetInt("model.tone_classes", cfg->tone_classes);
}

void ApplyTrainConfig(const KeyValueConfig &kv, TrainConfig *cfg) {
  cfg->batch_size = kv.GetInt("train.batch_size", cfg->batch_size);
  cfg->base_lr = kv.GetDouble("train.base_lr", cfg->base_lr);
  cfg->warm_epochs = kv.GetInt("train.warm_epochs", cfg->warm_epochs);
  cfg->decay = kv.GetDouble("train.decay", cfg->decay);
  cfg->extra_epochs = kv.GetInt("train.extra_epochs", cfg->extra_epochs);
  cfg->seed = static_cast<uint64_t>(
      kv.GetInt("train.seed", static_cast<int>(cfg->seed)));
  cfg->pairs = kv.GetInt("train.pairs", cfg->pairs);
  cfg->grad_clip = kv.GetDouble("train.grad_clip", cfg->grad_clip);
  cfg->weights.lambda_phoneme =
      kv.GetDouble("mt.lambda_phoneme", cfg->weights.lambda_phoneme);
  cfg->weights.lambda_tone =
      kv.GetDouble("mt.lambda_tone", cfg->weights.lambda_tone);
  cfg->classifier_dropout =
      kv.GetDouble("mt.dropout", cfg->classifier_dropout);
}

std::string ConfigJson(const ModelConfig &m, const TrainConfig &t) {
  json js;
  js["model"] = {{"feat_dim", m.feat_dim},
                 {"bottleneck_dim", m.bottleneck_dim},
                 {"encoder_hidden", m.encoder_hidden},
                 {"attn_rnn_size", m.attn_rnn_size},
                 {"decoder_rnn_size", m.decoder_rnn_size},
                 {"attn_dim", m.attn_dim},
                 {"attn_filters", m.attn_filters},
                 {"attn_kernel", m.attn_kernel},
                 {"prenet_hidden", m.prenet_hidden},
                 {"prenet_dropout", m.prenet_dropout},
                 {"postnet_channels", m.postnet_channels},
                 {"postnet_layers", m.postnet_layers},
                 {"postnet_kernel", m.postnet_kernel},
                 {"mdn_mixtures", m.mdn_mixtures},
                 {"log_sigma_floor", m.log_sigma_floor},
                 {"max_decode_ratio", m.max_decode_ratio},
                 {"phoneme_classes", m.phoneme_classes},
                 {"tone_classes", m.tone_classes}};
  js["train"] = {{"batch_size", t.batch_size},
                 {"base_lr", t.base_lr},
                 {"warm_epochs", t.warm_epochs},
                 {"decay", t.decay},
                 {"extra_epochs", t.extra_epochs},
                 {"seed", t.seed},
                 {"augment", t.augment},
                 {"multitask", t.multitask},
                 {"lambda_phoneme", t.weights.lambda_phoneme},
                 {"lambda_tone", t.weights.lambda_tone},
                 {"classifier_dropout", t.classifier_dropout},
                 {"pairs", t.pairs},
                 {"grad_clip", t.grad_clip}};
  return js.dump();
}

ModelConfig ModelConfigFromJson(const std::string &json_text) {
  json js = json::parse(json_text);
  const json &m = js.at("model");
  ModelConfig cfg;
  cfg.feat_dim = m.at("feat_dim");
  cfg.bottleneck_dim = m.at("bottleneck_dim");
  cfg.encoder_hidden = m.at("encoder_hidden");
  cfg.attn_rnn_size = m.at("attn_rnn_size");
  cfg.decoder_rnn_size = m.at("decoder_rnn_size");
  cfg.attn_dim = m.at("attn_dim");
  cfg.attn_filters = m.at("attn_filters");
  cfg.attn_kernel = m.at("attn_kernel");
  cfg.prenet_hidden = m.at("prenet_hidden");
  cfg.prenet_dropout = m.at("prenet_dropout");
  cfg.postnet_channels = m.at("postnet_channels");
  cfg.postnet_layers = m.at("postnet_layers");
  cfg.postnet_kernel = m.at("postnet_kernel");
  cfg.mdn_mixtures = m.at("mdn_mixtures");
  cfg.log_sigma_floor = m.at("log_sigma_floor");
  cfg.max_decode_ratio = m.at("max_decode_ratio");
  cfg.phoneme_classes = m.at("phoneme_classes");
  cfg.tone_classes = m.at("tone_classes");
  cfg.Validate();
  return cfg;
}

Batch MakeBatch(const std::vector<TrainSample> &samples) {
  if (samples.empty()) throw std::invalid_argument("empty batch");
  const int B = static_cast<int>(samples.size());
  const int D = static_cast<int>(samples[0].src.cols());
  const int Db = static_cast<int>(samples[0].src_bn.cols());

  Batch batch;
  for (const TrainSample &s : samples) {
    if (s.src.cols() != D || s.src_bn.cols() != Db || s.tgt.cols() != D)
      throw std::invalid_argument("inconsistent sample dimensions in batch");
    if (s.src.rows() < 1 || s.tgt.rows() < 1)
      throw std::invalid_argument("empty sample in batch");
    batch.padded_src =
        std::max(batch.padded_src, static_cast<int>(s.src.rows()));
    batch.padded_tgt =
        std::max(batch.padded_tgt, static_cast<int>(s.tgt.rows()));
  }

  for (const TrainSample &s : samples) {
    const int Ts = static_cast<int>(s.src.rows());
    const int Tt = static_cast<int>(s.tgt.rows());
    Mat src = Mat::Zero(batch.padded_src, D + Db);
    src.topLeftCorner(Ts, D) = s.src.cast<double>();
    src.block(0, D, Ts, Db) = s.src_bn.cast<double>();
    Mat tgt = Mat::Zero(batch.padded_tgt, D);
    tgt.topRows(Tt) = s.tgt.cast<double>();

    FrameLabels src_lab, tgt_lab;
    src_lab.phoneme.assign(batch.padded_src, 0);
    src_lab.tone.assign(batch.padded_src, 0);
    tgt_lab.phoneme.assign(batch.padded_tgt, 0);
    tgt_lab.tone.assign(batch.padded_tgt, 0);
    std::copy(s.src_labels.phoneme.begin(), s.src_labels.phoneme.end(),
              src_lab.phoneme.begin());
    std::copy(s.src_labels.tone.begin(), s.src_labels.tone.end(),
              src_lab.tone.begin());
    std::copy(s.tgt_labels.phoneme.begin(), s.tgt_labels.phoneme.end(),
              tgt_lab.phoneme.begin());
    std::copy(s.tgt_labels.tone.begin(), s.tgt_labels.tone.end(),
              tgt_lab.tone.begin());

    std::vector<uint8_t> sm(batch.padded_src, 0), tm(batch.padded_tgt, 0);
    std::fill(sm.begin(), sm.begin() + Ts, 1);
    std::fill(tm.begin(), tm.begin() + Tt, 1);

    batch.src.push_back(std::move(src));
    batch.tgt.push_back(std::move(tgt));
    batch.src_len.push_back(Ts);
    batch.tgt_len.push_back(Tt);
    batch.src_mask.push_back(std::move(sm));
    batch.tgt_mask.push_back(std::move(tm));
    batch.src_labels.push_back(std::move(src_lab));
    batch.tgt_labels.push_back(std::move(tgt_lab));
  }
  (void)B;
  return batch;
}

double AdamStep(ParamStore *params,
                std::map<std::string, Eigen::MatrixXd> *grads,
                AdamState *state, const TrainConfig &cfg, double lr) {
  double sq = 0.0;
  for (const auto &[name, g] : *grads) sq += g.squaredNorm();
  double norm = std::sqrt(sq);
  if (norm > cfg.grad_clip) {
    double scale = cfg.grad_clip / norm;
    for (auto &[name, g] : *grads) g *= scale;
  }

  state->t += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state->t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state->t));
  // Creation order fixes the reduction order.
  for (const std::string &name : params->Names()) {
    auto it = grads->find(name);
    if (it == grads->end()) continue;
    const Mat &g = it->second;
    Mat &m = state->m.try_emplace(name, Mat::Zero(g.rows(), g.cols()))
                 .first->second;
    Mat &v = state->v.try_emplace(name, Mat::Zero(g.rows(), g.cols()))
                 .first->second;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    Mat mhat = m / c1;
    Mat vhat = v / c2;
    params->Get(name).array() -=
        lr * mhat.array() / (vhat.array().sqrt() + cfg.adam_eps);
  }
  return norm;
}

namespace {

std::vector<int> SliceInts(const std::vector<int> &v, int len) {
  return std::vector<int>(v.begin(), v.begin() + len);
}

}  // namespace

SampleForward ForwardBatchSample(const AcousticModel &model, Graph &g,
                                 const BoundParams &p, const Batch &batch,
                                 int b, const TrainConfig &cfg, bool training,
                                 uint64_t dropout_seed, uint64_t cls_seed) {
  if (b < 0 || b >= batch.size())
    throw std::invalid_argument("batch slot out of range");
  SampleForward out;
  out.fr = model.ForwardTeacherForced(g, p, batch.src[b], batch.tgt[b],
                                      batch.src_len[b], batch.tgt_len[b],
                                      training, dropout_seed);
  if (!cfg.multitask) {
    out.total = g.Add(out.fr.mel_loss, out.fr.stop_loss);
    return out;
  }

  const int Ts = batch.src_len[b];
  const int Tt = batch.tgt_len[b];
  std::vector<uint8_t> src_ones(Ts, 1), tgt_ones(Tt, 1);
  out.has_classifiers = true;
  out.enc_logits = Classify(g, p, out.fr.enc_tap,
                            EncoderHead(cfg.classifier_dropout), training,
                            cls_seed, 0);
  out.dec_logits = Classify(g, p, out.fr.dec_tap,
                            DecoderHead(cfg.classifier_dropout), training,
                            cls_seed, 0);
  Var enc_ph = MaskedCrossEntropy(
      g, out.enc_logits.phoneme,
      SliceInts(batch.src_labels[b].phoneme, Ts), src_ones);
  Var enc_tone = MaskedCrossEntropy(
      g, out.enc_logits.tone, SliceInts(batch.src_labels[b].tone, Ts),
      src_ones);
  Var dec_ph = MaskedCrossEntropy(
      g, out.dec_logits.phoneme,
      SliceInts(batch.tgt_labels[b].phoneme, Tt), tgt_ones);
  Var dec_tone = MaskedCrossEntropy(
      g, out.dec_logits.tone, SliceInts(batch.tgt_labels[b].tone, Tt),
      tgt_ones);
  out.total = TotalLoss(g, out.fr.mel_loss, out.fr.stop_loss, enc_ph,
                        enc_tone, dec_ph, dec_tone, cfg.weights);
  return out;
}

StepStats TrainStep(AcousticModel *model, const Batch &batch,
                    const TrainConfig &cfg, AdamState *adam, double lr,
                    int64_t step_index) {
  const int B = batch.size();
  Graph g(true);
  BoundParams p(g, model->params());

  StepStats stats;
  Var batch_loss;
  for (int b = 0; b < B; ++b) {
    SampleForward sf = ForwardBatchSample(
        *model, g, p, batch, b, cfg, true,
        StreamSeed(cfg.seed, "dropout", static_cast<uint64_t>(step_index), b),
        StreamSeed(cfg.seed, "clsdrop", static_cast<uint64_t>(step_index),
                   b));
    batch_loss = b == 0 ? sf.total : g.Add(batch_loss, sf.total);
    stats.mel += sf.fr.mel_loss.scalar();
    stats.stop += sf.fr.stop_loss.scalar();
    stats.nll += sf.fr.nll_mean.scalar();
    if (sf.has_classifiers) {
      const int Ts = batch.src_len[b], Tt = batch.tgt_len[b];
      std::vector<uint8_t> so(Ts, 1), to(Tt, 1);
      stats.enc_ph_acc +=
          MaskedAccuracy(sf.enc_logits.phoneme.value(),
                         SliceInts(batch.src_labels[b].phoneme, Ts), so);
      stats.enc_tone_acc +=
          MaskedAccuracy(sf.enc_logits.tone.value(),
                         SliceInts(batch.src_labels[b].tone, Ts), so);
      stats.dec_ph_acc +=
          MaskedAccuracy(sf.dec_logits.phoneme.value(),
                         SliceInts(batch.tgt_labels[b].phoneme, Tt), to);
      stats.dec_tone_acc +=
          MaskedAccuracy(sf.dec_logits.tone.value(),
                         SliceInts(batch.tgt_labels[b].tone, Tt), to);
    }
  }
  batch_loss = g.Scale(batch_loss, 1.0 / B);
  stats.total = batch_loss.scalar();
  stats.mel /= B;
  stats.stop /= B;
  stats.nll /= B;
  stats.enc_ph_acc /= B;
  stats.enc_tone_acc /= B;
  stats.dec_ph_acc /= B;
  stats.dec_tone_acc /= B;

  if (!std::isfinite(stats.total))
    throw std::runtime_error("training diverged at step " +
                             std::to_string(step_index));

  g.Backward(batch_loss);
  std::map<std::string, Mat> grads;
  for (const auto &[name, var] : p.items()) {
    if (model->params().Kind(name) == ParamKind::kConstant) continue;
    grads[name] = g.Grad(var);
  }
  stats.grad_norm = AdamStep(&model->params(), &grads, adam, cfg, lr);
  return stats;
}

EvalLosses EvaluateSamples(const AcousticModel &model,
                           const std::vector<TrainSample> &samples,
                           const TrainConfig &cfg) {
  EvalLosses out;
  if (samples.empty()) return out;
  for (const TrainSample &s : samples) {
    Batch batch = MakeBatch({s});
    Graph g(false);
    BoundParams p(g, model.params());
    SampleForward sf =
        ForwardBatchSample(model, g, p, batch, 0, cfg, false, 0, 0);
    out.total += sf.total.scalar();
    out.mel += sf.fr.mel_loss.scalar();
    out.stop += sf.fr.stop_loss.scalar();
    out.nll += sf.fr.nll_mean.scalar();
    if (sf.has_classifiers) {
      const int Ts = batch.src_len[0], Tt = batch.tgt_len[0];
      std::vector<uint8_t> so(Ts, 1), to(Tt, 1);
      out.enc_ph_acc +=
          MaskedAccuracy(sf.enc_logits.phoneme.value(),
                         SliceInts(batch.src_labels[0].phoneme, Ts), so);
      out.enc_tone_acc +=
          MaskedAccuracy(sf.enc_logits.tone.value(),
                         SliceInts(batch.src_labels[0].tone, Ts), so);
      out.dec_ph_acc +=
          MaskedAccuracy(sf.dec_logits.phoneme.value(),
                         SliceInts(batch.tgt_labels[0].phoneme, Tt), to);
      out.dec_tone_acc +=
          MaskedAccuracy(sf.dec_logits.tone.value(),
                         SliceInts(batch.tgt_labels[0].tone, Tt), to);
    }
  }
  const double n = static_cast<double>(samples.size());
  out.total /= n;
  out.mel /= n;
  out.stop /= n;
  out.nll /= n;
  out.enc_ph_acc /= n;
  out.enc_tone_acc /= n;
  out.dec_ph_acc /= n;
  out.dec_tone_acc /= n;
  return out;
}

std::string EpochLog::ToJsonLine(bool multitask) const {
  json js;
  js["epoch"] = epoch;
  js["lr"] = lr;
  js["train_total"] = train_total;
  js["train_mel"] = train_mel;
  js["train_stop"] = train_stop;
  js["val_total"] = val_total;
  js["val_mel"] = val_mel;
  js["val_stop"] = val_stop;
  if (multitask) {
    js["val_enc_ph_acc"] = val_enc_ph_acc;
    js["val_enc_tone_acc"] = val_enc_tone_acc;
    js["val_dec_ph_acc"] = val_dec_ph_acc;
    js["val_dec_tone_acc"] = val_dec_tone_acc;
  }
  return js.dump();
}

void ComputeNormalization(const std::vector<UtterancePair> &pairs,
                          AcousticModel *model) {
  if (pairs.empty())
    throw std::invalid_argument("no pairs to compute statistics from");
  const ModelConfig &cfg = model->config();
  const int I = cfg.input_dim();
  const int D = cfg.feat_dim;
  Eigen::RowVectorXd in_sum = Eigen::RowVectorXd::Zero(I);
  Eigen::RowVectorXd in_sq = Eigen::RowVectorXd::Zero(I);
  Eigen::RowVectorXd tgt_sum = Eigen::RowVectorXd::Zero(D);
  Eigen::RowVectorXd tgt_sq = Eigen::RowVectorXd::Zero(D);
  long in_n = 0, tgt_n = 0;
  for (const UtterancePair &pair : pairs) {
    const int Ts = pair.src.num_frames();
    Mat input(Ts, I);
    input.leftCols(D) = pair.src.frames.cast<double>();
    input.rightCols(I - D) =
        UpsampledBottleneck(pair.src_bn, Ts).cast<double>();
    in_sum += input.colwise().sum();
    in_sq += input.array().square().colwise().sum().matrix();
    in_n += Ts;
    Mat tgt = pair.tgt.frames.cast<double>();
    tgt_sum += tgt.colwise().sum();
    tgt_sq += tgt.array().square().colwise().sum().matrix();
    tgt_n += pair.tgt.num_frames();
  }
  auto finish = [](const Eigen::RowVectorXd &sum,
                   const Eigen::RowVectorXd &sq, long n,
                   Eigen::RowVectorXd *mean, Eigen::RowVectorXd *scale) {
    *mean = sum / static_cast<double>(n);
    Eigen::RowVectorXd var =
        (sq / static_cast<double>(n)) - mean->cwiseProduct(*mean);
    *scale = (var.array().max(0.0).sqrt().max(1e-6)).inverse();
  };
  Eigen::RowVectorXd in_mean, in_scale, tgt_mean, tgt_scale;
  finish(in_sum, in_sq, in_n, &in_mean, &in_scale);
  finish(tgt_sum, tgt_sq, tgt_n, &tgt_mean, &tgt_scale);
  model->SetNormalization(in_mean, in_scale, tgt_mean, tgt_scale);
}

namespace {

std::vector<int> ShuffledOrder(int n, uint64_t stream) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(stream);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.Below(static_cast<uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

std::string EpochCheckpointName(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03d.ckpt", epoch);
  return buf;
}

Checkpoint MakeCheckpoint(const AcousticModel &model,
                          const std::string &config_json,
                          const AdamState &adam, int epoch, int64_t step,
                          double best_val) {
  Checkpoint ckpt;
  ckpt.config_json = config_json;
  ckpt.params = model.params();
  ckpt.has_train_state = true;
  ckpt.epoch = epoch;
  ckpt.step = step;
  ckpt.best_val = best_val;
  ckpt.adam_m = adam.m;
  ckpt.adam_v = adam.v;
  return ckpt;
}

}  // namespace

TrainResult Train(const ModelConfig &mcfg, const TrainConfig &cfg,
                  const std::vector<UtterancePair> &train_pairs,
                  const std::vector<UtterancePair> &val_pairs,
                  const TrainOptions &opts) {
  mcfg.Validate();
  cfg.Validate();
  if (train_pairs.empty())
    throw std::invalid_argument("no training pairs");
  if (cfg.pairs > static_cast<int>(train_pairs.size()))
    throw std::invalid_argument(
        "requested " + std::to_string(cfg.pairs) + " pairs, corpus has " +
        std::to_string(train_pairs.size()));
  const int N = cfg.pairs > 0 ? cfg.pairs
                              : static_cast<int>(train_pairs.size());

  const std::string config_json = ConfigJson(mcfg, cfg);
  AcousticModel model(mcfg);
  AdamState adam;
  int start_epoch = 1;
  int64_t step = 0;
  double best_val = std::numeric_limits<double>::infinity();

  model.Init(cfg.seed, cfg.multitask);
  if (!opts.resume_from.empty()) {
    Checkpoint ckpt = ReadCheckpoint(opts.resume_from);
    if (ckpt.config_json != config_json)
      throw std::invalid_argument(opts.resume_from +
                                  ": checkpoint config does not match");
    if (!ckpt.has_train_state)
      throw std::invalid_argument(opts.resume_from +
                                  ": checkpoint has no training state");
    if (ckpt.params.Names() != model.params().Names())
      throw std::invalid_argument(opts.resume_from +
                                  ": checkpoint tensors do not match");
    model.params() = ckpt.params;
    adam.m = ckpt.adam_m;
    adam.v = ckpt.adam_v;
    adam.t = ckpt.step;
    step = ckpt.step;
    start_epoch = ckpt.epoch + 1;
    best_val = ckpt.best_val;
  } else {
    ComputeNormalization(
        std::vector<UtterancePair>(train_pairs.begin(),
                                   train_pairs.begin() + N),
        &model);
  }

  // Fragment inventories for augmentation; whole-utterance caches otherwise.
  std::vector<PreparedPair> prepared;
  std::vector<TrainSample> whole;
  for (int i = 0; i < N; ++i) {
    if (cfg.augment)
      prepared.push_back(PreparePair(train_pairs[i]));
    else
      whole.push_back(BuildWholeSample(train_pairs[i]));
  }
  std::vector<TrainSample> val_samples;
  for (const UtterancePair &pair : val_pairs)
    val_samples.push_back(BuildWholeSample(pair));
  const bool has_val = !val_samples.empty();

  const bool to_disk = !opts.out_dir.empty();
  std::filesystem::path out(opts.out_dir);
  std::ofstream metrics;
  if (to_disk) {
    std::filesystem::create_directories(out);
    metrics.open(out / "metrics.jsonl", opts.resume_from.empty()
                                            ? std::ios::trunc
                                            : std::ios::app);
    if (!metrics)
      throw std::runtime_error("cannot write metrics under " + opts.out_dir);
  }

  int end_epoch = cfg.total_epochs();
  if (opts.stop_after_epoch > 0)
    end_epoch = std::min(end_epoch, opts.stop_after_epoch);

  TrainResult result;
  result.best_val = best_val;
  for (int epoch = start_epoch; epoch <= end_epoch; ++epoch) {
    const double lr =
        LrSchedule(epoch, cfg.warm_epochs, cfg.base_lr, cfg.decay);
    std::vector<int> order =
        ShuffledOrder(N, StreamSeed(cfg.seed, "shuffle", epoch));

    std::vector<TrainSample> epoch_samples;
    epoch_samples.reserve(N);
    for (int idx : order) {
      if (cfg.augment) {
        Rng rng(StreamSeed(cfg.seed, "frag", epoch, idx));
        epoch_samples.push_back(SampleFragment(prepared[idx], &rng));
      } else {
        epoch_samples.push_back(whole[idx]);
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    int samples_done = 0;
    for (int at = 0; at < N; at += cfg.batch_size) {
      int take = std::min(cfg.batch_size, N - at);
      Batch batch = MakeBatch(std::vector<TrainSample>(
          epoch_samples.begin() + at, epoch_samples.begin() + at + take));
      StepStats stats = TrainStep(&model, batch, cfg, &adam, lr, step);
      step++;
      log.train_total += stats.total * take;
      log.train_mel += stats.mel * take;
      log.train_stop += stats.stop * take;
      samples_done += take;
    }
    log.train_total /= samples_done;
    log.train_mel /= samples_done;
    log.train_stop /= samples_done;

    if (has_val) {
      EvalLosses val = EvaluateSamples(model, val_samples, cfg);
      log.val_total = val.total;
      log.val_mel = val.mel;
      log.val_stop = val.stop;
      log.val_enc_ph_acc = val.enc_ph_acc;
      log.val_enc_tone_acc = val.enc_tone_acc;
      log.val_dec_ph_acc = val.dec_ph_acc;
      log.val_dec_tone_acc = val.dec_tone_acc;
    }

    if (to_disk) {
      metrics << log.ToJsonLine(cfg.multitask) << "\n";
      metrics.flush();
    }
    result.logs.push_back(log);
    result.last_epoch = epoch;

    const double gate = has_val ? log.val_total : log.train_total;
    const bool improved = gate < best_val;
    if (improved) best_val = gate;
    result.best_val = best_val;

    if (to_disk) {
      Checkpoint ckpt =
          MakeCheckpoint(model, config_json, adam, epoch, step, best_val);
      std::string epoch_path =
          (out / (opts.keep_epoch_checkpoints ? EpochCheckpointName(epoch)
                                              : std::string("last.ckpt")))
              .string();
      WriteCheckpoint(epoch_path, ckpt);
      result.last_checkpoint = epoch_path;
      if (improved) {
        result.best_checkpoint = (out / "best.ckpt").string();
        WriteCheckpoint(result.best_checkpoint, ckpt);
      }
    }
  }
  if (to_disk && result.best_checkpoint.empty())
    result.best_checkpoint = (out / "best.ckpt").string();
  return result;
}

}  // namespace seqvc
