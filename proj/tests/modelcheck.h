// modelcheck.h
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
// Finite-difference gradient checking against a named parameter store. The
// loss builder gets a fresh graph with all tensors bound, so the same code
// path runs for the analytic pass and every perturbed evaluation.

#ifndef SEQVC_TESTS_MODELCHECK_H_
#define SEQVC_TESTS_MODELCHECK_H_

#include <functional>
#include <string>

#include "seqvc/model.h"
#include "testutil.h"

namespace seqvc::test {

using ModelLossBuilder =
    std::function<ad::Var(ad::Graph &, const BoundParams &)>;

// Moves every trainable tensor off its initialization point. Zero-valued
// biases put ReLU pre-activations exactly on the kink (the first decoder
// step feeds a zero frame), where central differences and the subgradient
// legitimately disagree; checking at a generic point avoids that.
inline void JitterParams(ParamStore &store, uint64_t seed,
                         double scale = 0.05) {
  int i = 0;
  for (const std::string &name : store.Names()) {
    if (store.Kind(name) == ParamKind::kConstant) continue;
    ad::Mat &m = store.Get(name);
    m += RandomMat(static_cast<int>(m.rows()), static_cast<int>(m.cols()),
                   seed + i++, scale);
  }
}

inline double EvalModelLoss(const ParamStore &store,
                            const ModelLossBuilder &build) {
  ad::Graph g(false);
  BoundParams p(g, store);
  return build(g, p).scalar();
}

// Central differences on every trainable tensor of the store. Constants are
// skipped; classifier tensors are skipped unless requested, since most
// losses never touch them.
inline GradCheckReport CheckModelGradients(ParamStore &store,
                                           const ModelLossBuilder &build,
                                           int coords_per_param,
                                           double step = 1e-4,
                                           double rtol = 1e-3,
                                           bool include_classifiers = false,
                                           uint64_t seed = 42) {
  ad::Graph g(true);
  BoundParams p(g, store);
  ad::Var loss = build(g, p);
  g.Backward(loss);

  GradCheckReport rep;
  Rng rng(seed);
  for (const std::string &name : store.Names()) {
    ParamKind kind = store.Kind(name);
    if (kind == ParamKind::kConstant) continue;
    if (kind == ParamKind::kClassifier && !include_classifiers) continue;
    ad::Mat analytic = g.Grad(p[name]);
    ad::Mat &value = store.Get(name);
    const Eigen::Index n = value.size();
    const bool exhaustive = n <= coords_per_param;
    const int coords = exhaustive ? static_cast<int>(n) : coords_per_param;
    for (int c = 0; c < coords; ++c) {
      Eigen::Index flat =
          exhaustive ? c : static_cast<Eigen::Index>(rng.Below(n));
      Eigen::Index row = flat % value.rows();
      Eigen::Index col = flat / value.rows();
      double orig = value(row, col);
      value(row, col) = orig + step;
      double fp = EvalModelLoss(store, build);
      value(row, col) = orig - step;
      double fm = EvalModelLoss(store, build);
      value(row, col) = orig;
      double fd = (fp - fm) / (2.0 * step);
      double an = analytic(row, col);
      double denom = std::max({1e-2, std::abs(fd), std::abs(an)});
      double rel = std::abs(fd - an) / denom;
      rep.checked++;
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
      if (!(rel <= rtol)) rep.failures++;
    }
  }
  return rep;
}

}  // namespace seqvc::test

#endif  // SEQVC_TESTS_MODELCHECK_H_
