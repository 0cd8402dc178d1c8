// eval.cc
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

#include "seqvc/eval.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace seqvc {

namespace {

constexpr double kMcdScale = 10.0 / 2.302585092994045684;  // 10 / ln 10
constexpr double kLogFloor = 1e-5;
constexpr int kCepstralOrder = 13;

}  // namespace

void DtwPath::Validate(int rows_a, int rows_b) const {
  if (points.empty()) throw std::logic_error("empty dtw path");
  if (points.front() != std::make_pair(0, 0))
    throw std::logic_error("dtw path must start at (0,0)");
  if (points.back() != std::make_pair(rows_a - 1, rows_b - 1))
    throw std::logic_error("dtw path must end at the last cell");
  for (size_t k = 1; k < points.size(); ++k) {
    int di = points[k].first - points[k - 1].first;
    int dj = points[k].second - points[k - 1].second;
    bool legal = (di == 1 && dj == 0) || (di == 0 && dj == 1) ||
                 (di == 1 && dj == 1);
    if (!legal) throw std::logic_error("illegal dtw step");
  }
}

DtwResult DtwAlign(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b) {
  if (a.rows() < 1 || b.rows() < 1)
    throw std::invalid_argument("dtw inputs must be non-empty");
  if (a.cols() != b.cols())
    throw std::invalid_argument("dtw feature dimensions differ");
  const int Ta = static_cast<int>(a.rows());
  const int Tb = static_cast<int>(b.rows());

  Eigen::MatrixXd acc(Ta, Tb);
  // Predecessor code per cell: 0 diagonal, 1 from (i-1,j), 2 from (i,j-1).
  Eigen::Matrix<int8_t, Eigen::Dynamic, Eigen::Dynamic> from(Ta, Tb);
  for (int i = 0; i < Ta; ++i) {
    for (int j = 0; j < Tb; ++j) {
      double d = (a.row(i) - b.row(j)).norm();
      if (i == 0 && j == 0) {
        acc(i, j) = d;
        from(i, j) = -1;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      int8_t arg = -1;
      if (i > 0 && j > 0 && acc(i - 1, j - 1) < best) {
        best = acc(i - 1, j - 1);
        arg = 0;
      }
      if (i > 0 && acc(i - 1, j) < best) {
        best = acc(i - 1, j);
        arg = 1;
      }
      if (j > 0 && acc(i, j - 1) < best) {
        best = acc(i, j - 1);
        arg = 2;
      }
      acc(i, j) = best + d;
      from(i, j) = arg;
    }
  }

  DtwResult out;
  out.cost = acc(Ta - 1, Tb - 1);
  int i = Ta - 1, j = Tb - 1;
  std::vector<std::pair<int, int>> rev;
  while (true) {
    rev.emplace_back(i, j);
    int8_t f = from(i, j);
    if (f < 0) break;
    if (f == 0) {
      --i;
      --j;
    } else if (f == 1) {
      --i;
    } else {
      --j;
    }
  }
  out.path.points.assign(rev.rbegin(), rev.rend());
  out.path.Validate(Ta, Tb);
  return out;
}

Eigen::MatrixXd Cepstra(const Eigen::MatrixXd &spectral, int order) {
  const int T = static_cast<int>(spectral.rows());
  const int M = static_cast<int>(spectral.cols());
  if (M < 2) throw std::invalid_argument("cepstra need at least two channels");
  int usable = std::min(order, M - 1);
  Eigen::MatrixXd logx =
      spectral.array().max(kLogFloor).log().matrix();
  Eigen::MatrixXd basis(M, usable);
  for (int d = 1; d <= usable; ++d)
    for (int m = 0; m < M; ++m)
      basis(m, d - 1) = std::cos(M_PI * d * (m + 0.5) / M);
  Eigen::MatrixXd cep(T, usable);
  cep.noalias() = logx * basis;
  return cep;
}

namespace {

// Shared alignment for both metrics: cepstra of the spectral channels.
DtwResult AlignOnCepstra(const FeatureTrack &conv, const FeatureTrack &ref,
                         Warnings *warn) {
  conv.Validate();
  ref.Validate();
  if (conv.dim() != ref.dim())
    throw std::invalid_argument("track dimensions differ");
  if (conv.hop_ms != ref.hop_ms)
    throw std::invalid_argument("track hops differ");
  const int M = conv.dim() - 1;
  if (M - 1 < kCepstralOrder && warn != nullptr)
    warn->Add("cepstral order truncated to " + std::to_string(M - 1) +
              " coefficients");
  Eigen::MatrixXd ca =
      Cepstra(conv.frames.leftCols(M).cast<double>(), kCepstralOrder);
  Eigen::MatrixXd cb =
      Cepstra(ref.frames.leftCols(M).cast<double>(), kCepstralOrder);
  return DtwAlign(ca, cb);
}

}  // namespace

double Mcd(const FeatureTrack &conv, const FeatureTrack &ref,
           Warnings *warn) {
  const int M = conv.dim() - 1;
  DtwResult aligned = AlignOnCepstra(conv, ref, warn);
  Eigen::MatrixXd ca =
      Cepstra(conv.frames.leftCols(M).cast<double>(), kCepstralOrder);
  Eigen::MatrixXd cb =
      Cepstra(ref.frames.leftCols(M).cast<double>(), kCepstralOrder);
  double total = 0.0;
  for (const auto &[i, j] : aligned.path.points)
    total += std::sqrt(2.0 * (ca.row(i) - cb.row(j)).squaredNorm());
  return kMcdScale * total / static_cast<double>(aligned.path.points.size());
}

double F0Rmse(const FeatureTrack &conv, const FeatureTrack &ref,
              Warnings *warn) {
  DtwResult aligned = AlignOnCepstra(conv, ref, warn);
  const int pc = conv.pitch_channel();
  double sum = 0.0;
  int voiced = 0;
  for (const auto &[i, j] : aligned.path.points) {
    double fa = conv.frames(i, pc);
    double fb = ref.frames(j, pc);
    if (fa > 0 && fb > 0) {
      sum += (fa - fb) * (fa - fb);
      voiced++;
    }
  }
  if (voiced == 0) {
    if (warn != nullptr) warn->Add("no aligned voiced frames");
    return 0.0;
  }
  return std::sqrt(sum / voiced);
}

AttnDiagnostics ComputeAttnDiagnostics(
    const Eigen::MatrixXd &attention,
    const std::vector<uint8_t> *nonsilence) {
  const int T_dec = static_cast<int>(attention.rows());
  const int T_enc = static_cast<int>(attention.cols());
  if (T_dec < 1 || T_enc < 1)
    throw std::invalid_argument("empty attention matrix");
  if ((attention.array() < 0).any())
    throw std::invalid_argument("negative attention weight");
  if (nonsilence != nullptr &&
      static_cast<int>(nonsilence->size()) != T_enc)
    throw std::invalid_argument("nonsilence mask length mismatch");

  std::vector<int> argmax(T_dec);
  for (int t = 0; t < T_dec; ++t) {
    Eigen::Index best;
    attention.row(t).maxCoeff(&best);
    argmax[t] = static_cast<int>(best);
  }

  AttnDiagnostics d;

  int violations = 0;
  for (int t = 1; t < T_dec; ++t)
    if (argmax[t] < argmax[t - 1] - 2) violations++;
  d.monotonicity_violation_rate =
      static_cast<double>(violations) / T_dec;

  Eigen::RowVectorXd colsum = attention.colwise().sum();
  int considered = 0, deficient = 0;
  for (int j = 0; j < T_enc; ++j) {
    if (nonsilence != nullptr && !(*nonsilence)[j]) continue;
    considered++;
    if (colsum(j) < 0.2) deficient++;
  }
  d.coverage_deficit =
      considered == 0 ? 0.0 : static_cast<double>(deficient) / considered;

  double expected = static_cast<double>(T_dec) / T_enc;
  double threshold = 3.0 * expected;
  int repeated = 0;
  int t = 0;
  while (t < T_dec) {
    int run = 1;
    while (t + run < T_dec && argmax[t + run] == argmax[t]) run++;
    if (run > threshold) repeated += run;
    t += run;
  }
  d.repeat_score = static_cast<double>(repeated) / T_dec;
  return d;
}

}  // namespace seqvc
