// acceptance.cc
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
// End-to-end acceptance gate. Prints one [PASS]/[FAIL] line per criterion;
// exits nonzero when anything fails. Optional arguments select a subset of
// criteria by number, e.g. `acceptance 2 7`.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "modelcheck.h"
#include "seqvc/experiment.h"
#include "seqvc/synth.h"
#include "testutil.h"

using namespace seqvc;
using namespace seqvc::test;
using ad::Graph;
using ad::Mat;
using ad::Var;

namespace {

namespace fs = std::filesystem;
using Outcome = std::pair<bool, std::string>;

std::string Fmt(const char *fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

fs::path WorkDir(const char *leaf) {
  fs::path dir = fs::temp_directory_path() / "seqvc_acceptance" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---- shared desk-scale configurations ----

// Short utterances keep the trend grid inside the runtime budget and keep
// fragment lengths close to whole-utterance lengths, so models trained on
// fragments face conversion rollouts they have seen.
CorpusConfig TrendCorpus() {
  CorpusConfig cfg;
  cfg.feat_dim = 10;
  cfg.bn_dim = 4;
  cfg.phonemes = 8;
  cfg.tones = 4;
  cfg.clause_probs = {0.6, 0.4};
  cfg.min_phones_per_clause = 2;
  cfg.max_phones_per_clause = 4;
  cfg.sil_dur_lo_ms = 40.0;
  cfg.sil_dur_hi_ms = 80.0;
  cfg.phone_dur_lo_ms = 40.0;
  cfg.phone_dur_hi_ms = 80.0;
  cfg.noise_sigma = 0.08;
  cfg.bn_noise_sigma = 0.08;
  cfg.seed = 11;
  return cfg;
}

ModelConfig TrendModel() {
  ModelConfig cfg;
  cfg.feat_dim = 10;
  cfg.bottleneck_dim = 4;
  cfg.encoder_hidden = 32;
  cfg.attn_rnn_size = 32;
  cfg.decoder_rnn_size = 32;
  cfg.attn_dim = 16;
  cfg.attn_filters = 4;
  cfg.attn_kernel = 7;
  cfg.prenet_hidden = 16;
  cfg.postnet_channels = 16;
  cfg.postnet_layers = 2;
  cfg.postnet_kernel = 5;
  cfg.mdn_mixtures = 2;
  cfg.phoneme_classes = 9;
  cfg.tone_classes = 5;
  return cfg;
}

// The gradient-suite configuration.
ModelConfig TinyModel() {
  ModelConfig cfg;
  cfg.feat_dim = 4;
  cfg.bottleneck_dim = 2;
  cfg.encoder_hidden = 8;
  cfg.attn_rnn_size = 8;
  cfg.decoder_rnn_size = 8;
  cfg.attn_dim = 6;
  cfg.attn_filters = 3;
  cfg.attn_kernel = 3;
  cfg.prenet_hidden = 6;
  cfg.postnet_channels = 5;
  cfg.postnet_layers = 2;
  cfg.postnet_kernel = 3;
  cfg.mdn_mixtures = 2;
  cfg.phoneme_classes = 5;
  cfg.tone_classes = 3;
  return cfg;
}

// ---- criterion 1: fragment combinatorics ----

std::vector<std::pair<int, int>> NonSilenceRuns(const FrameLabels &labs,
                                                int begin, int end) {
  std::vector<std::pair<int, int>> runs;
  for (int t = begin; t < end; ++t) {
    if (labs.phoneme[t] == kSilencePhonemeId) continue;
    std::pair<int, int> cur{labs.phoneme[t], labs.tone[t]};
    if (runs.empty() || runs.back() != cur) runs.push_back(cur);
  }
  return runs;
}

Outcome Criterion1() {
  CorpusConfig cfg = TrendCorpus();
  cfg.clause_probs = {0.14, 0.14, 0.15, 0.15, 0.14, 0.14, 0.14};  // N in 2..8
  cfg.seed = 21;
  std::vector<UtterancePair> pairs = GenerateCorpusPairs(cfg, 0, 200, "c1_");

  int max_n = 0, min_n = 99;
  for (const UtterancePair &pair : pairs) {
    auto points = FindAlignmentPoints(pair.src_lab, pair.tgt_lab);
    const int n = static_cast<int>(points.size());
    if (n < 2 || n > 8)
      return {false, Fmt("pair with %d alignment points outside [2, 8]", n)};
    max_n = std::max(max_n, n);
    min_n = std::min(min_n, n);

    auto frags = EnumerateFragments(points, pair.src_lab, pair.tgt_lab,
                                    pair.src.hop_ms);
    if (static_cast<int>(frags.size()) != n * (n - 1) / 2)
      return {false, Fmt("N=%d gave %zu fragments, want %d", n, frags.size(),
                         n * (n - 1) / 2)};

    // Brute-force enumeration: every unordered point pair appears once and
    // each boundary is a function of its point alone.
    std::set<std::pair<int, int>> seen;
    std::map<int, std::pair<int, int>> begin_of, end_of;
    for (const FragmentSpec &f : frags) {
      if (!(f.start_point < f.end_point)) return {false, "unordered points"};
      if (!seen.insert({f.start_point, f.end_point}).second)
        return {false, "duplicate point pair"};
      auto [bi, binserted] =
          begin_of.try_emplace(f.start_point,
                               std::make_pair(f.src_begin, f.tgt_begin));
      if (!binserted && bi->second != std::make_pair(f.src_begin, f.tgt_begin))
        return {false, "fragment begin not a function of its start point"};
      auto [ei, einserted] = end_of.try_emplace(
          f.end_point, std::make_pair(f.src_end, f.tgt_end));
      if (!einserted && ei->second != std::make_pair(f.src_end, f.tgt_end))
        return {false, "fragment end not a function of its end point"};
    }
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (!seen.count({i, j}))
          return {false, Fmt("missing fragment for points (%d, %d)", i, j)};
    for (int i = 1; i < n - 1; ++i)
      if (begin_of.count(i) && begin_of.count(i - 1) &&
          begin_of[i].first <= begin_of[i - 1].first)
        return {false, "fragment begins not increasing with point index"};

    // The first-to-last fragment is the whole utterance.
    const int T_src = pair.src.num_frames();
    const int T_tgt = pair.tgt.num_frames();
    bool saw_whole = false;
    FrameLabels src_labs =
        MakeFrameLabels(pair.src_lab, pair.src.hop_ms, T_src);
    FrameLabels tgt_labs =
        MakeFrameLabels(pair.tgt_lab, pair.tgt.hop_ms, T_tgt);
    for (const FragmentSpec &f : frags) {
      if (f.start_point == 0 && f.end_point == n - 1) {
        saw_whole = true;
        if (f.src_begin != 0 || f.src_end != T_src || f.tgt_begin != 0 ||
            f.tgt_end != T_tgt)
          return {false, "first-to-last fragment is not the whole utterance"};
      }
      // Silence endpoints on both sides.
      if (src_labs.phoneme[f.src_begin] != kSilencePhonemeId ||
          src_labs.phoneme[f.src_end - 1] != kSilencePhonemeId ||
          tgt_labs.phoneme[f.tgt_begin] != kSilencePhonemeId ||
          tgt_labs.phoneme[f.tgt_end - 1] != kSilencePhonemeId)
        return {false, "fragment boundary not inside silence"};
      // Label equality of the enclosed content.
      if (NonSilenceRuns(src_labs, f.src_begin, f.src_end) !=
          NonSilenceRuns(tgt_labs, f.tgt_begin, f.tgt_end))
        return {false, "fragment label sequences differ between sides"};
    }
    if (!saw_whole) return {false, "no first-to-last fragment"};
  }
  return {true, Fmt("200 pairs, N spanned [%d, %d]", min_n, max_n)};
}

// ---- criterion 2: gradient suite ----

Outcome Criterion2() {
  std::string detail;

  {  // MDN negative log-likelihood.
    ModelConfig cfg = TinyModel();
    cfg.feat_dim = 3;
    AcousticModel model(cfg);
    const int T = 3, D = 3, K = 2;
    std::vector<Mat> params = {RandomMat(T, K, 171), RandomMat(T, K * D, 172),
                               RandomMat(T, K * D, 173, 0.4)};
    Mat y = RandomMat(T, D, 174);
    auto build = [&](Graph &g, const std::vector<Var> &vars) {
      MdnOutput mdn{vars[0], vars[1], vars[2]};
      return g.SumAll(model.MdnNll(g, mdn, g.Input(y)));
    };
    GradCheckReport rep = CheckGradients(params, build, 12);
    if (!rep.ok() || rep.checked < 20)
      return {false, Fmt("mdn nll: %d/%d coords failed (max rel %.2e)",
                         rep.failures, rep.checked, rep.max_rel_err)};
    detail += Fmt("mdn %d", rep.checked);
  }

  {  // Masked cross-entropy.
    const int T = 6, C = 5;
    std::vector<Mat> params = {RandomMat(T, C, 175)};
    std::vector<int> targets = {0, 3, 2, 4, 1, 0};
    std::vector<uint8_t> mask = {1, 1, 0, 1, 1, 1};
    auto build = [&](Graph &g, const std::vector<Var> &vars) {
      return MaskedCrossEntropy(g, vars[0], targets, mask);
    };
    GradCheckReport rep = CheckGradients(params, build, 30);
    if (!rep.ok() || rep.checked < 20)
      return {false, Fmt("masked ce: %d/%d coords failed", rep.failures,
                         rep.checked)};
    detail += Fmt(", ce %d", rep.checked);
  }

  {  // One attention-decoder step.
    ModelConfig cfg = TinyModel();
    AcousticModel model(cfg);
    model.Init(23, false);
    JitterParams(model.params(), 300);
    const int T = 4;
    Mat input = RandomMat(T, cfg.input_dim(), 181);
    Mat prev = RandomMat(1, cfg.feat_dim, 182);
    Mat wa = RandomMat(1, T, 183);
    Mat wd = RandomMat(1, cfg.decoder_rnn_size, 184);
    auto build = [&](Graph &g, const BoundParams &p) {
      Var memory = model.Encode(g, p, input, T);
      DecoderState st = model.InitDecoder(g, p, memory);
      StepOutput so = model.DecoderStep(g, p, &st, g.Input(prev), false, 0);
      Var loss = g.SumAll(g.CMul(so.alpha, wa));
      loss = g.Add(loss, g.SumAll(g.CMul(so.dec_out, wd)));
      return g.Add(loss, g.SumAll(so.stop_logit));
    };
    GradCheckReport rep = CheckModelGradients(model.params(), build, 3);
    if (!rep.ok() || rep.checked < 20)
      return {false, Fmt("attention step: %d/%d coords failed (max rel %.2e)",
                         rep.failures, rep.checked, rep.max_rel_err)};
    detail += Fmt(", attn %d", rep.checked);
  }

  {  // PostNet.
    ModelConfig cfg = TinyModel();
    AcousticModel model(cfg);
    model.Init(29, false);
    model.params().Get("postnet.w1") =
        RandomMat(cfg.postnet_kernel * cfg.postnet_channels, cfg.feat_dim,
                  191, 0.3);
    Mat coarse = RandomMat(5, cfg.feat_dim, 192);
    Mat w = RandomMat(5, cfg.feat_dim, 193);
    auto build = [&](Graph &g, const BoundParams &p) {
      return g.SumAll(g.CMul(model.Postnet(g, p, g.Input(coarse)), w));
    };
    GradCheckReport rep = CheckModelGradients(model.params(), build, 4);
    if (!rep.ok() || rep.checked < 20)
      return {false, Fmt("postnet: %d/%d coords failed", rep.failures,
                         rep.checked)};
    detail += Fmt(", postnet %d", rep.checked);
  }

  {  // Full one-step loss.
    ModelConfig cfg = TinyModel();
    AcousticModel model(cfg);
    model.Init(31, false);
    JitterParams(model.params(), 200);
    const int T_enc = 4, T_dec = 3;
    Mat src = RandomMat(T_enc, cfg.input_dim(), 195);
    Mat tgt = RandomMat(T_dec, cfg.feat_dim, 196);
    auto build = [&](Graph &g, const BoundParams &p) {
      ForwardResult fr =
          model.ForwardTeacherForced(g, p, src, tgt, T_enc, T_dec, true, 5);
      return g.Add(fr.mel_loss, fr.stop_loss);
    };
    GradCheckReport rep = CheckModelGradients(model.params(), build, 2);
    if (!rep.ok() || rep.checked < 20)
      return {false, Fmt("full step: %d/%d coords failed (max rel %.2e)",
                         rep.failures, rep.checked, rep.max_rel_err)};
    detail += Fmt(", full %d", rep.checked);
  }

  return {true, detail + " coords checked"};
}

// ---- criterion 3: schedule exactness ----

Outcome Criterion3() {
  for (int warm : {20, 40}) {
    for (int epoch = 1; epoch <= warm + 50; ++epoch) {
      double want = epoch <= warm ? 0.001
                                  : 0.001 * std::pow(0.95, epoch - warm);
      if (LrSchedule(epoch, warm) != want)
        return {false, Fmt("warm %d epoch %d: %g != %g", warm, epoch,
                           LrSchedule(epoch, warm), want)};
    }
  }
  return {true, "warm 20 and 40, all epochs exact"};
}

// ---- criterion 4: classifier-discard equivalence ----

Outcome Criterion4() {
  CorpusConfig ccfg = TrendCorpus();
  ccfg.seed = 31;
  auto train_pairs = GenerateCorpusPairs(ccfg, 0, 6, "c4tr_");
  auto val_pairs = GenerateCorpusPairs(ccfg, 1, 2, "c4va_");
  auto test_pairs = GenerateCorpusPairs(ccfg, 2, 3, "c4te_");

  TrainConfig tcfg;
  tcfg.multitask = true;
  tcfg.warm_epochs = 2;
  tcfg.extra_epochs = 1;
  tcfg.seed = 9;
  fs::path dir = WorkDir("c4");
  TrainOptions opts;
  opts.out_dir = dir.string();
  opts.keep_epoch_checkpoints = false;
  Train(TrendModel(), tcfg, train_pairs, val_pairs, opts);

  Checkpoint with = ReadCheckpoint((dir / "best.ckpt").string());
  if (!with.params.HasClassifiers())
    return {false, "trained checkpoint lacks classifier tensors"};
  Checkpoint without = with;
  without.StripClassifiers();

  AcousticModel model_with(ModelConfigFromJson(with.config_json));
  model_with.params() = with.params;
  AcousticModel model_without(ModelConfigFromJson(without.config_json));
  model_without.params() = without.params;

  for (const UtterancePair &pair : test_pairs) {
    ConvertResult a = model_with.Convert(pair.src, pair.src_bn);
    ConvertResult b = model_without.Convert(pair.src, pair.src_bn);
    if (a.track.frames.rows() != b.track.frames.rows() ||
        !(a.track.frames.array() == b.track.frames.array()).all())
      return {false, "converted frames differ after stripping"};
    if (!(a.attention.array() == b.attention.array()).all())
      return {false, "attention differs after stripping"};
  }
  return {true, Fmt("%zu utterances bit-identical", test_pairs.size())};
}

// ---- criteria 5 and 6: trend reproduction and stability proxy ----

struct TrendData {
  ExperimentReport small;
  ExperimentReport large;
  double seconds = 0;
};

std::map<std::tuple<int, uint64_t, std::string>, CellMetrics> CellIndex(
    const ExperimentReport &report) {
  std::map<std::tuple<int, uint64_t, std::string>, CellMetrics> index;
  for (const CellOutcome &c : report.cells)
    index[{c.cell.size, c.cell.seed, c.cell.mode}] = c.metrics;
  return index;
}

TrendData RunTrendExperiments() {
  auto t0 = std::chrono::steady_clock::now();
  CorpusConfig ccfg = TrendCorpus();
  auto train_pairs = GenerateCorpusPairs(ccfg, 0, 200, "tr_");
  auto val_pairs = GenerateCorpusPairs(ccfg, 1, 6, "va_");
  auto test_pairs = GenerateCorpusPairs(ccfg, 2, 8, "te_");

  ExperimentPlan plan;
  plan.model = TrendModel();
  plan.train.batch_size = 4;
  plan.modes = {"baseline", "mt", "mt-da"};
  plan.sizes = {10, 25};
  plan.seeds = {1, 2, 3};

  TrendData data;
  CellRunner runner =
      MakeTrainRunner(plan, train_pairs, val_pairs, test_pairs);
  CellRunner logged = [&](const ExperimentCell &cell,
                          const std::string &run_dir) {
    CellMetrics m = runner(cell, run_dir);
    std::printf("    cell %-22s mcd %.4f violation %.4f coverage %.4f\n",
                cell.Name().c_str(), m.mcd, m.violation, m.coverage);
    std::fflush(stdout);
    return m;
  };
  data.small = RunExperiment(plan, logged, WorkDir("trend_small").string());

  ExperimentPlan large = plan;
  large.modes = {"baseline", "mt"};
  large.sizes = {100, 200};
  CellRunner lrunner =
      MakeTrainRunner(large, train_pairs, val_pairs, test_pairs);
  CellRunner llogged = [&](const ExperimentCell &cell,
                           const std::string &run_dir) {
    CellMetrics m = lrunner(cell, run_dir);
    std::printf("    cell %-22s mcd %.4f\n", cell.Name().c_str(), m.mcd);
    std::fflush(stdout);
    return m;
  };
  data.large = RunExperiment(large, llogged, WorkDir("trend_large").string());
  data.seconds = std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
  return data;
}

Outcome Criterion5(const TrendData &data) {
  auto small = CellIndex(data.small);
  auto large = CellIndex(data.large);
  std::string detail;

  for (int size : {10, 25}) {
    int chain = 0;
    for (uint64_t seed : {1, 2, 3}) {
      const CellMetrics &base = small.at({size, seed, "baseline"});
      const CellMetrics &mt = small.at({size, seed, "mt"});
      const CellMetrics &mtda = small.at({size, seed, "mt-da"});
      if (mtda.mcd <= mt.mcd && mt.mcd <= base.mcd) chain++;
    }
    detail += Fmt("size %d chain %d/3; ", size, chain);
    if (chain < 2)
      return {false, detail + "need mt-da <= mt <= baseline in 2 of 3 seeds"};
  }
  for (int size : {100, 200}) {
    int holds = 0;
    for (uint64_t seed : {1, 2, 3}) {
      if (large.at({size, seed, "mt"}).mcd <=
          large.at({size, seed, "baseline"}).mcd)
        holds++;
    }
    detail += Fmt("size %d mt<=baseline %d/3; ", size, holds);
    if (holds < 2) return {false, detail + "need 2 of 3 seeds"};
  }
  detail += Fmt("%.1f min", data.seconds / 60.0);
  if (data.seconds >= 3600.0) return {false, detail + " exceeds the budget"};
  return {true, detail};
}

Outcome Criterion6(const TrendData &data) {
  auto small = CellIndex(data.small);
  int viol = 0, cov = 0;
  for (uint64_t seed : {1, 2, 3}) {
    const CellMetrics &base = small.at({10, seed, "baseline"});
    const CellMetrics &mt = small.at({10, seed, "mt"});
    if (mt.violation <= base.violation) viol++;
    if (mt.coverage <= base.coverage) cov++;
  }
  std::string detail =
      Fmt("size 10: violation %d/3, coverage %d/3 seeds", viol, cov);
  return {viol >= 2 && cov >= 2, detail};
}

// ---- criterion 7: metric unit tests ----

double BruteForceDtw(const Mat &cost, int i, int j) {
  if (i == 0 && j == 0) return cost(0, 0);
  double best = std::numeric_limits<double>::infinity();
  if (i > 0 && j > 0) best = std::min(best, BruteForceDtw(cost, i - 1, j - 1));
  if (i > 0) best = std::min(best, BruteForceDtw(cost, i - 1, j));
  if (j > 0) best = std::min(best, BruteForceDtw(cost, i, j - 1));
  return cost(i, j) + best;
}

FeatureTrack RandomTrack(int T, int D, uint64_t seed) {
  FeatureTrack track;
  track.hop_ms = 10.0;
  Rng rng(seed);
  track.frames.resize(T, D);
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d + 1 < D; ++d)
      track.frames(t, d) = static_cast<float>(0.5 + 1.5 * rng.Uniform());
    track.frames(t, D - 1) = static_cast<float>(100.0 + 100.0 * rng.Uniform());
  }
  return track;
}

Outcome Criterion7() {
  {  // mcd(x, x) = 0
    FeatureTrack x = RandomTrack(12, 10, 501);
    if (Mcd(x, x) != 0.0) return {false, "mcd(x, x) != 0"};
  }

  {  // Single-coefficient offset: shift cepstral coefficient 1 by delta.
    FeatureTrack ref = RandomTrack(6, 16, 502);
    FeatureTrack conv = ref;
    const int M = 15;  // spectral channels
    const double delta = 2.0;
    for (int t = 0; t < conv.frames.rows(); ++t)
      for (int m = 0; m < M; ++m)
        conv.frames(t, m) = static_cast<float>(
            ref.frames(t, m) *
            std::exp(delta * (2.0 / M) *
                     std::cos(M_PI * 1.0 * (m + 0.5) / M)));
    double got = Mcd(conv, ref);
    double want = (10.0 / std::log(10.0)) * std::sqrt(2.0) * delta;
    if (std::abs(got - want) / want > 1e-6)
      return {false, Fmt("offset mcd %.9f, want %.9f", got, want)};
  }

  {  // f0 constant offset is exact.
    FeatureTrack ref = RandomTrack(14, 8, 503);
    FeatureTrack conv = ref;
    conv.frames.col(7).array() += 5.0f;
    double got = F0Rmse(conv, ref);
    if (std::abs(got - 5.0) > 1e-9)
      return {false, Fmt("constant f0 offset gave %.12f", got)};
  }

  {  // 500-case DTW sweep against the brute-force oracle.
    Rng rng(504);
    for (int k = 0; k < 500; ++k) {
      const int rows = 1 + static_cast<int>(rng.Below(6));
      const int cols = 1 + static_cast<int>(rng.Below(6));
      Mat a(rows, 2), b(cols, 2);
      for (int i = 0; i < rows; ++i)
        for (int d = 0; d < 2; ++d) a(i, d) = rng.Uniform();
      for (int j = 0; j < cols; ++j)
        for (int d = 0; d < 2; ++d) b(j, d) = rng.Uniform();
      Mat cost(rows, cols);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
          cost(i, j) = (a.row(i) - b.row(j)).norm();
      DtwResult res = DtwAlign(a, b);
      res.path.Validate(rows, cols);
      double brute = BruteForceDtw(cost, rows - 1, cols - 1);
      double from_path = 0;
      for (const auto &[i, j] : res.path.points) from_path += cost(i, j);
      if (std::abs(res.cost - brute) > 1e-9 ||
          std::abs(from_path - res.cost) > 1e-9)
        return {false,
                Fmt("case %d: dtw %.9f vs brute %.9f", k, res.cost, brute)};
    }
  }
  return {true, "closed forms and 500-case dtw sweep"};
}

// ---- criterion 8: determinism ----

Outcome Criterion8() {
  CorpusConfig ccfg = TrendCorpus();
  ccfg.seed = 41;
  auto train_pairs = GenerateCorpusPairs(ccfg, 0, 5, "c8tr_");
  auto val_pairs = GenerateCorpusPairs(ccfg, 1, 2, "c8va_");
  auto test_pairs = GenerateCorpusPairs(ccfg, 2, 1, "c8te_");

  TrainConfig tcfg;
  tcfg.multitask = true;
  tcfg.augment = true;
  tcfg.warm_epochs = 2;
  tcfg.extra_epochs = 2;
  tcfg.seed = 17;
  tcfg.pairs = 5;

  fs::path dir_a = WorkDir("c8a"), dir_b = WorkDir("c8b");
  TrainOptions opts;
  opts.keep_epoch_checkpoints = false;
  opts.out_dir = dir_a.string();
  Train(TrendModel(), tcfg, train_pairs, val_pairs, opts);
  opts.out_dir = dir_b.string();
  Train(TrendModel(), tcfg, train_pairs, val_pairs, opts);

  // Loss logs agree to 1e-6 per entry.
  std::ifstream fa(dir_a / "metrics.jsonl"), fb(dir_b / "metrics.jsonl");
  std::string la, lb;
  int lines = 0;
  while (std::getline(fa, la)) {
    if (!std::getline(fb, lb)) return {false, "log line counts differ"};
    auto ja = nlohmann::json::parse(la), jb = nlohmann::json::parse(lb);
    for (auto it = ja.begin(); it != ja.end(); ++it) {
      double va = it.value().get<double>();
      double vb = jb.at(it.key()).get<double>();
      if (std::abs(va - vb) > 1e-6)
        return {false, Fmt("log field %s differs: %.9f vs %.9f",
                           it.key().c_str(), va, vb)};
    }
    lines++;
  }
  if (std::getline(fb, lb)) return {false, "log line counts differ"};

  // Conversions are bit-identical, both per run and across the two runs.
  auto load = [](const fs::path &dir) {
    Checkpoint ckpt = ReadCheckpoint((dir / "best.ckpt").string());
    auto model = std::make_unique<AcousticModel>(
        ModelConfigFromJson(ckpt.config_json));
    model->params() = ckpt.params;
    return model;
  };
  auto model_a = load(dir_a);
  auto model_b = load(dir_b);
  const UtterancePair &pair = test_pairs[0];
  ConvertResult r1 = model_a->Convert(pair.src, pair.src_bn);
  ConvertResult r2 = model_a->Convert(pair.src, pair.src_bn);
  ConvertResult r3 = model_b->Convert(pair.src, pair.src_bn);
  if (!(r1.track.frames.array() == r2.track.frames.array()).all())
    return {false, "repeat conversion differs within one model"};
  if (r1.track.frames.rows() != r3.track.frames.rows() ||
      !(r1.track.frames.array() == r3.track.frames.array()).all())
    return {false, "conversion differs across retrained runs"};

  return {true, Fmt("%d log lines within 1e-6, conversions bit-identical",
                    lines)};
}

// ---- criterion 9: padding correctness ----

Outcome Criterion9() {
  CorpusConfig ccfg = TrendCorpus();
  ccfg.seed = 51;
  auto pairs = GenerateCorpusPairs(ccfg, 0, 4, "c9_");
  std::vector<TrainSample> samples;
  for (const UtterancePair &pair : pairs)
    samples.push_back(BuildWholeSample(pair));
  std::set<long> lengths;
  for (const TrainSample &s : samples) lengths.insert(s.src.rows());
  if (lengths.size() < 2) return {false, "corpus gave equal-length samples"};

  TrainConfig tcfg;
  tcfg.multitask = true;
  AcousticModel model(TrendModel());
  model.Init(61, true);
  JitterParams(model.params(), 600, 0.02);

  Batch batch = MakeBatch(samples);
  double max_diff = 0;
  for (int b = 0; b < 4; ++b) {
    Batch single = MakeBatch({samples[b]});
    Graph g4(false);
    BoundParams p4(g4, model.params());
    SampleForward in_batch =
        ForwardBatchSample(model, g4, p4, batch, b, tcfg, false, 0, 0);
    Graph g1(false);
    BoundParams p1(g1, model.params());
    SampleForward alone =
        ForwardBatchSample(model, g1, p1, single, 0, tcfg, false, 0, 0);
    max_diff = std::max(
        max_diff, std::abs(in_batch.total.scalar() - alone.total.scalar()));
    max_diff = std::max(max_diff, std::abs(in_batch.fr.mel_loss.scalar() -
                                           alone.fr.mel_loss.scalar()));
    max_diff = std::max(max_diff, std::abs(in_batch.fr.stop_loss.scalar() -
                                           alone.fr.stop_loss.scalar()));
  }
  if (max_diff > 1e-5)
    return {false, Fmt("padded vs single losses differ by %.2e", max_diff)};
  return {true, Fmt("4 slots, max divergence %.2e", max_diff)};
}

}  // namespace

int main(int argc, char **argv) {
  std::set<int> want;
  for (int i = 1; i < argc; ++i) want.insert(std::atoi(argv[i]));

  int failures = 0;
  auto run = [&](int idx, const char *name,
                 const std::function<Outcome()> &fn) {
    if (!want.empty() && !want.count(idx)) return;
    auto t0 = std::chrono::steady_clock::now();
    Outcome out{false, ""};
    try {
      out = fn();
    } catch (const std::exception &e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::printf("[%s] criterion %d (%s): %s [%.1fs]\n",
                out.first ? "PASS" : "FAIL", idx, name, out.second.c_str(),
                secs);
    std::fflush(stdout);
    if (!out.first) failures++;
  };

  std::optional<TrendData> trend;
  auto EnsureTrend = [&]() -> const TrendData & {
    if (!trend) trend = RunTrendExperiments();
    return *trend;
  };

  run(1, "fragment combinatorics", Criterion1);
  run(2, "gradient suite", Criterion2);
  run(3, "schedule exactness", Criterion3);
  run(4, "classifier-discard equivalence", Criterion4);
  run(5, "trend reproduction", [&] { return Criterion5(EnsureTrend()); });
  run(6, "stability proxy", [&] { return Criterion6(EnsureTrend()); });
  run(7, "metric unit tests", Criterion7);
  run(8, "determinism", Criterion8);
  run(9, "padding correctness", Criterion9);

  if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
