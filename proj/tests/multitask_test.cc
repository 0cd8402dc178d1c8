// multitask_test.cc
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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <doctest.h>

#include "seqvc/multitask.h"
#include "modelcheck.h"
#include "testutil.h"

using namespace seqvc;
using namespace seqvc::test;
using ad::Graph;
using ad::Mat;
using ad::Var;

namespace {

ModelConfig SmallConfig() {
  ModelConfig c;
  c.feat_dim = 4;
  c.bottleneck_dim = 2;
  c.encoder_hidden = 8;
  c.attn_rnn_size = 8;
  c.decoder_rnn_size = 8;
  c.attn_dim = 6;
  c.attn_filters = 3;
  c.attn_kernel = 3;
  c.prenet_hidden = 6;
  c.postnet_channels = 5;
  c.postnet_layers = 2;
  c.postnet_kernel = 3;
  c.mdn_mixtures = 2;
  c.phoneme_classes = 5;
  c.tone_classes = 3;
  return c;
}

}  // namespace

TEST_CASE("classify is deterministic without training") {
  ModelConfig cfg = SmallConfig();
  AcousticModel model(cfg);
  model.Init(3, true);
  Mat hidden = RandomMat(6, cfg.encoder_hidden, 10);

  auto run = [&](bool training, double dropout, uint64_t seed) {
    Graph g;
    BoundParams p(g, model.params());
    ClassifierHead head = EncoderHead(dropout);
    ClassifierLogits out =
        Classify(g, p, g.Input(hidden), head, training, seed, 0);
    return std::make_pair(out.phoneme.value(), out.tone.value());
  };

  auto a = run(false, 0.5, 1);
  auto b = run(false, 0.5, 2);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first.rows() == 6);
  CHECK(a.first.cols() == cfg.phoneme_classes);
  CHECK(a.second.cols() == cfg.tone_classes);

  // Rate zero: training changes nothing.
  auto c = run(true, 0.0, 3);
  auto d = run(false, 0.0, 4);
  CHECK(c.first == d.first);

  // Active dropout differs from the clean pass and between seeds.
  auto e = run(true, 0.5, 5);
  auto f = run(true, 0.5, 6);
  CHECK(e.first != a.first);
  CHECK(e.first != f.first);

  Mat bad = hidden;
  bad(0, 0) = std::nan("");
  Graph g;
  BoundParams p(g, model.params());
  CHECK_THROWS_AS(
      Classify(g, p, g.Input(bad), EncoderHead(0.5), false, 0, 0),
      std::invalid_argument);
}

TEST_CASE("decoder head reads the wider tap") {
  ModelConfig cfg = SmallConfig();
  AcousticModel model(cfg);
  model.Init(5, true);
  Mat tap = RandomMat(4, cfg.encoder_hidden + cfg.attn_rnn_size, 11);
  Graph g;
  BoundParams p(g, model.params());
  ClassifierLogits out =
      Classify(g, p, g.Input(tap), DecoderHead(0.5), false, 0, 0);
  CHECK(out.phoneme.rows() == 4);
  CHECK(out.phoneme.cols() == cfg.phoneme_classes);
  CHECK(out.tone.cols() == cfg.tone_classes);
}

TEST_CASE("masked cross entropy closed forms") {
  Graph g;

  SUBCASE("uniform logits give log C") {
    Var logits = g.Input(Mat::Zero(3, 10));
    Var loss = MaskedCrossEntropy(g, logits, {0, 5, 9}, {1, 1, 1});
    CHECK(loss.scalar() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }

  SUBCASE("saturated correct class vanishes") {
    Mat m = Mat::Zero(2, 4);
    m(0, 1) = 20.0;
    m(1, 3) = 20.0;
    Var loss = MaskedCrossEntropy(g, g.Input(m), {1, 3}, {1, 1});
    CHECK(loss.scalar() < 1e-6);
  }

  SUBCASE("random case equals a per-frame oracle") {
    const int T = 7, C = 5;
    Mat logits = RandomMat(T, C, 20);
    std::vector<int> targets = {0, 3, 2, 4, 1, 0, 2};
    std::vector<uint8_t> mask = {1, 1, 0, 1, 0, 1, 1};
    Var loss = MaskedCrossEntropy(g, g.Input(logits), targets, mask);
    double expect = 0.0;
    int count = 0;
    for (int t = 0; t < T; ++t) {
      if (!mask[t]) continue;
      double lse = 0.0;
      for (int c = 0; c < C; ++c) lse += std::exp(logits(t, c));
      expect += std::log(lse) - logits(t, targets[t]);
      count++;
    }
    CHECK(loss.scalar() == doctest::Approx(expect / count).epsilon(1e-12));
  }

  SUBCASE("invariant to per-frame shifts") {
    const int T = 4, C = 6;
    Mat logits = RandomMat(T, C, 21);
    std::vector<int> targets = {1, 5, 0, 3};
    std::vector<uint8_t> mask = {1, 0, 1, 1};
    double base =
        MaskedCrossEntropy(g, g.Input(logits), targets, mask).scalar();
    Mat shifted = logits;
    for (int t = 0; t < T; ++t) shifted.row(t).array() += 3.7 * (t + 1);
    double moved =
        MaskedCrossEntropy(g, g.Input(shifted), targets, mask).scalar();
    CHECK(moved == doctest::Approx(base).epsilon(1e-12));
  }

  SUBCASE("masked frames may hold junk targets") {
    Mat logits = RandomMat(3, 4, 22);
    Var loss = MaskedCrossEntropy(g, g.Input(logits), {2, 99, 1}, {1, 0, 1});
    CHECK(std::isfinite(loss.scalar()));
  }

  SUBCASE("errors") {
    Mat logits = RandomMat(3, 4, 23);
    CHECK_THROWS_WITH_AS(
        MaskedCrossEntropy(g, g.Input(logits), {0, 1, 2}, {0, 0, 0}),
        "empty mask", std::invalid_argument);
    CHECK_THROWS_AS(
        MaskedCrossEntropy(g, g.Input(logits), {0, 9, 2}, {1, 1, 1}),
        std::invalid_argument);
    CHECK_THROWS_AS(MaskedCrossEntropy(g, g.Input(logits), {0, 1}, {1, 1, 1}),
                    std::invalid_argument);
  }
}

TEST_CASE("gradcheck: masked cross entropy") {
  const int T = 5, C = 4;
  std::vector<Mat> params = {RandomMat(T, C, 30)};
  std::vector<int> targets = {0, 3, 2, 1, 0};
  std::vector<uint8_t> mask = {1, 1, 0, 1, 1};
  auto build = [&](Graph &g, const std::vector<Var> &vars) {
    return MaskedCrossEntropy(g, vars[0], targets, mask);
  };
  GradCheckReport rep = CheckGradients(params, build, 20);
  CHECK(rep.ok());
  CHECK(rep.checked == 20);
}

TEST_CASE("gradcheck: classifier head end to end") {
  ModelConfig cfg = SmallConfig();
  AcousticModel model(cfg);
  model.Init(7, true);
  JitterParams(model.params(), 400);
  Mat hidden = RandomMat(5, cfg.encoder_hidden, 31);
  std::vector<int> ph = {0, 1, 2, 3, 4};
  std::vector<int> tone = {0, 1, 2, 0, 1};
  std::vector<uint8_t> mask = {1, 1, 1, 0, 1};
  auto build = [&](Graph &g, const BoundParams &p) {
    ClassifierLogits out =
        Classify(g, p, g.Input(hidden), EncoderHead(0.0), false, 0, 0);
    return g.Add(MaskedCrossEntropy(g, out.phoneme, ph, mask),
                 MaskedCrossEntropy(g, out.tone, tone, mask));
  };
  GradCheckReport rep =
      CheckModelGradients(model.params(), build, 6, 1e-4, 1e-3, true);
  CHECK(rep.ok());
  CHECK(rep.checked >= 20);
}

TEST_CASE("total loss arithmetic") {
  Graph g;
  auto scalar = [&](double v) {
    return g.Input(Mat::Constant(1, 1, v));
  };

  SUBCASE("zero classifier losses reduce to the baseline") {
    Var total = TotalLoss(g, scalar(2.5), scalar(0.25), scalar(0.0),
                          scalar(0.0), scalar(0.0), scalar(0.0), {});
    CHECK(total.scalar() == doctest::Approx(2.75).epsilon(1e-15));
  }

  SUBCASE("default weights") {
    Var total = TotalLoss(g, scalar(2.0), scalar(0.0), scalar(1.0),
                          scalar(1.0), scalar(1.0), scalar(1.0), {});
    CHECK(total.scalar() == doctest::Approx(2.3).epsilon(1e-12));
  }

  SUBCASE("zero weights ignore classifier terms entirely") {
    LossWeights w{0.0, 0.0};
    Var total = TotalLoss(g, scalar(1.5), scalar(0.5), scalar(9.0),
                          scalar(9.0), scalar(9.0), scalar(9.0), w);
    CHECK(total.scalar() == 2.0);
  }

  SUBCASE("negative weights are rejected") {
    LossWeights w{-0.1, 0.05};
    CHECK_THROWS_AS(TotalLoss(g, scalar(1.0), scalar(0.0), scalar(0.0),
                              scalar(0.0), scalar(0.0), scalar(0.0), w),
                    std::invalid_argument);
  }
}

TEST_CASE("masked accuracy") {
  Mat logits(4, 3);
  logits << 5, 1, 0,   // argmax 0
            0, 2, 1,   // argmax 1
            0, 1, 9,   // argmax 2
            3, 2, 1;   // argmax 0
  std::vector<int> targets = {0, 1, 0, 1};
  CHECK(MaskedAccuracy(logits, targets, {1, 1, 1, 1}) == doctest::Approx(0.5));
  CHECK(MaskedAccuracy(logits, targets, {1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(MaskedAccuracy(logits, targets, {0, 0, 0, 0}) == 0.0);
}
