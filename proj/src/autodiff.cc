// autodiff.cc
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

#include "seqvc/autodiff.h"

#include <cmath>
#include <stdexcept>

namespace seqvc::ad {

const Mat &Var::value() const { return graph->nodes_[idx].value; }

int Graph::NewNode(Mat value, bool needs_grad,
                   std::function<void()> backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = grad_enabled_ && needs_grad;
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Mat &Graph::GradRef(int idx) {
  Node &n = nodes_[idx];
  if (n.grad.size() == 0)
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::CheckSameGraph(Var v) const {
  if (v.graph != this || v.idx < 0 ||
      v.idx >= static_cast<int>(nodes_.size()))
    throw std::logic_error("Var does not belong to this graph");
}

Var Graph::Input(Mat value) {
  return {this, NewNode(std::move(value), false, nullptr)};
}

Var Graph::Param(const Mat &value) {
  return {this, NewNode(value, true, nullptr)};
}

Var Graph::Add(Var a, Var b) {
  CheckSameGraph(a);
  CheckSameGraph(b);
  int ia = a.idx, ib = b.idx;
  int out = NewNode(nodes_[ia].value + nodes_[ib].value,
                    NeedsGrad(a) || NeedsGrad(b), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, ib, out]() {
      const Mat &g = nodes_[out].grad;
      if (nodes_[ia].needs_grad) GradRef(ia) += g;
      if (nodes_[ib].needs_grad) GradRef(ib) += g;
    };
  return {this, out};
}

Var Graph::Sub(Var a, Var b) {
  CheckSameGraph(a);
  CheckSameGraph(b);
  int ia = a.idx, ib = b.idx;
  int out = NewNode(nodes_[ia].value - nodes_[ib].value,
                    NeedsGrad(a) || NeedsGrad(b), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, ib, out]() {
      const Mat &g = nodes_[out].grad;
      if (nodes_[ia].needs_grad) GradRef(ia) += g;
      if (nodes_[ib].needs_grad) GradRef(ib) -= g;
    };
  return {this, out};
}

Var Graph::Mul(Var a, Var b) {
  CheckSameGraph(a);
  CheckSameGraph(b);
  int ia = a.idx, ib = b.idx;
  int out = NewNode(
      (nodes_[ia].value.array() * nodes_[ib].value.array()).matrix(),
      NeedsGrad(a) || NeedsGrad(b), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, ib, out]() {
      const Mat &g = nodes_[out].grad;
      if (nodes_[ia].needs_grad)
        GradRef(ia).array() += nodes_[ib].value.array() * g.array();
      if (nodes_[ib].needs_grad)
        GradRef(ib).array() += nodes_[ia].value.array() * g.array();
    };
  return {this, out};
}

Var Graph::CMul(Var a, const Mat &m) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode((nodes_[ia].value.array() * m.array()).matrix(),
                    NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out, m]() {
      GradRef(ia).array() += m.array() * nodes_[out].grad.array();
    };
  return {this, out};
}

Var Graph::Scale(Var a, double c) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value * c, NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out, c]() {
      GradRef(ia) += c * nodes_[out].grad;
    };
  return {this, out};
}

Var Graph::AddConst(Var a, double c) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode((nodes_[ia].value.array() + c).matrix(), NeedsGrad(a),
                    nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      GradRef(ia) += nodes_[out].grad;
    };
  return {this, out};
}

Var Graph::MulColBroadcast(Var a, Var col) {
  CheckSameGraph(a);
  CheckSameGraph(col);
  if (col.cols() != 1 || col.rows() != a.rows())
    throw std::invalid_argument("MulColBroadcast: shape mismatch");
  int ia = a.idx, ic = col.idx;
  Mat v = nodes_[ia].value;
  v.array().colwise() *= nodes_[ic].value.col(0).array();
  int out = NewNode(std::move(v), NeedsGrad(a) || NeedsGrad(col), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, ic, out]() {
      const Mat &g = nodes_[out].grad;
      if (nodes_[ia].needs_grad)
        GradRef(ia).array() +=
            g.array().colwise() * nodes_[ic].value.col(0).array();
      if (nodes_[ic].needs_grad)
        GradRef(ic).col(0).array() +=
            (g.array() * nodes_[ia].value.array()).rowwise().sum();
    };
  return {this, out};
}

Var Graph::AddRowBroadcast(Var a, Var row) {
  CheckSameGraph(a);
  CheckSameGraph(row);
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("AddRowBroadcast: shape mismatch");
  int ia = a.idx, ir = row.idx;
  Mat v = nodes_[ia].value;
  v.rowwise() += nodes_[ir].value.row(0);
  int out = NewNode(std::move(v), NeedsGrad(a) || NeedsGrad(row), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, ir, out]() {
      const Mat &g = nodes_[out].grad;
      if (nodes_[ia].needs_grad) GradRef(ia) += g;
      if (nodes_[ir].needs_grad) GradRef(ir) += g.colwise().sum();
    };
  return {this, out};
}

Var Graph::MatMul(Var a, Var b) {
  CheckSameGraph(a);
  CheckSameGraph(b);
  if (a.cols() != b.rows())
    throw std::invalid_argument("MatMul: inner dimensions differ");
  int ia = a.idx, ib = b.idx;
  int out = NewNode(nodes_[ia].value * nodes_[ib].value,
                    NeedsGrad(a) || NeedsGrad(b), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, ib, out]() {
      const Mat &g = nodes_[out].grad;
      if (nodes_[ia].needs_grad)
        GradRef(ia).noalias() += g * nodes_[ib].value.transpose();
      if (nodes_[ib].needs_grad)
        GradRef(ib).noalias() += nodes_[ia].value.transpose() * g;
    };
  return {this, out};
}

Var Graph::Transpose(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value.transpose(), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      GradRef(ia) += nodes_[out].grad.transpose();
    };
  return {this, out};
}

Var Graph::Sigmoid(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  Mat y = (1.0 / (1.0 + (-nodes_[ia].value.array()).exp())).matrix();
  int out = NewNode(std::move(y), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      const Mat &y = nodes_[out].value;
      GradRef(ia).array() +=
          y.array() * (1.0 - y.array()) * nodes_[out].grad.array();
    };
  return {this, out};
}

Var Graph::Tanh(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value.array().tanh().matrix(), NeedsGrad(a),
                    nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      const Mat &y = nodes_[out].value;
      GradRef(ia).array() +=
          (1.0 - y.array().square()) * nodes_[out].grad.array();
    };
  return {this, out};
}

Var Graph::Relu(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value.cwiseMax(0.0), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      GradRef(ia).array() +=
          (nodes_[ia].value.array() > 0.0).cast<double>() *
          nodes_[out].grad.array();
    };
  return {this, out};
}

Var Graph::Exp(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value.array().exp().matrix(), NeedsGrad(a),
                    nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      GradRef(ia).array() +=
          nodes_[out].value.array() * nodes_[out].grad.array();
    };
  return {this, out};
}

Var Graph::Abs(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value.cwiseAbs(), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      GradRef(ia).array() += nodes_[ia].value.array().sign() *
                             nodes_[out].grad.array();
    };
  return {this, out};
}

Var Graph::ClampMin(Var a, double floor) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value.cwiseMax(floor), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out, floor]() {
      GradRef(ia).array() +=
          (nodes_[ia].value.array() > floor).cast<double>() *
          nodes_[out].grad.array();
    };
  return {this, out};
}

Var Graph::SoftmaxRows(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  Mat y = nodes_[ia].value;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  int out = NewNode(std::move(y), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      const Mat &y = nodes_[out].value;
      const Mat &g = nodes_[out].grad;
      Mat &ga = GradRef(ia);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        double dot = (g.row(r).array() * y.row(r).array()).sum();
        ga.row(r).array() +=
            y.row(r).array() * (g.row(r).array() - dot);
      }
    };
  return {this, out};
}

Var Graph::LogSoftmaxRows(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  Mat y = nodes_[ia].value;
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    double m = y.row(r).maxCoeff();
    double lse = m + std::log((y.row(r).array() - m).exp().sum());
    y.row(r).array() -= lse;
  }
  int out = NewNode(std::move(y), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      const Mat &y = nodes_[out].value;
      const Mat &g = nodes_[out].grad;
      Mat &ga = GradRef(ia);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        double gsum = g.row(r).sum();
        ga.row(r).array() +=
            g.row(r).array() - y.row(r).array().exp() * gsum;
      }
    };
  return {this, out};
}

Var Graph::LogSumExpRows(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  const Mat &x = nodes_[ia].value;
  Mat y(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    y(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
  }
  int out = NewNode(std::move(y), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      const Mat &x = nodes_[ia].value;
      const Mat &y = nodes_[out].value;
      const Mat &g = nodes_[out].grad;
      Mat &ga = GradRef(ia);
      for (Eigen::Index r = 0; r < x.rows(); ++r)
        ga.row(r).array() +=
            (x.row(r).array() - y(r, 0)).exp() * g(r, 0);
    };
  return {this, out};
}

Var Graph::RowSum(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value.rowwise().sum(), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      const Mat &g = nodes_[out].grad;
      GradRef(ia).colwise() += g.col(0);
    };
  return {this, out};
}

Var Graph::SumAll(Var a) {
  CheckSameGraph(a);
  int ia = a.idx;
  Mat y(1, 1);
  y(0, 0) = nodes_[ia].value.sum();
  int out = NewNode(std::move(y), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out]() {
      GradRef(ia).array() += nodes_[out].grad(0, 0);
    };
  return {this, out};
}

Var Graph::ConcatCols(Var a, Var b) {
  CheckSameGraph(a);
  CheckSameGraph(b);
  if (a.rows() != b.rows())
    throw std::invalid_argument("ConcatCols: row counts differ");
  int ia = a.idx, ib = b.idx;
  Mat y(a.rows(), a.cols() + b.cols());
  y.leftCols(a.cols()) = nodes_[ia].value;
  y.rightCols(b.cols()) = nodes_[ib].value;
  int na = static_cast<int>(a.cols());
  int nb = static_cast<int>(b.cols());
  int out = NewNode(std::move(y), NeedsGrad(a) || NeedsGrad(b), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, ib, out, na, nb]() {
      const Mat &g = nodes_[out].grad;
      if (nodes_[ia].needs_grad) GradRef(ia) += g.leftCols(na);
      if (nodes_[ib].needs_grad) GradRef(ib) += g.rightCols(nb);
    };
  return {this, out};
}

Var Graph::ConcatCols3(Var a, Var b, Var c) {
  return ConcatCols(ConcatCols(a, b), c);
}

Var Graph::SliceCols(Var a, int start, int n) {
  CheckSameGraph(a);
  if (start < 0 || n < 1 || start + n > a.cols())
    throw std::invalid_argument("SliceCols: range out of bounds");
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value.middleCols(start, n), NeedsGrad(a),
                    nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out, start, n]() {
      GradRef(ia).middleCols(start, n) += nodes_[out].grad;
    };
  return {this, out};
}

Var Graph::Row(Var a, int t) {
  CheckSameGraph(a);
  if (t < 0 || t >= a.rows())
    throw std::invalid_argument("Row: index out of bounds");
  int ia = a.idx;
  int out = NewNode(nodes_[ia].value.row(t), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out, t]() {
      GradRef(ia).row(t) += nodes_[out].grad.row(0);
    };
  return {this, out};
}

Var Graph::ConcatRows(const std::vector<Var> &rows) {
  if (rows.empty()) throw std::invalid_argument("ConcatRows: empty input");
  Eigen::Index total = 0;
  bool needs = false;
  for (Var v : rows) {
    CheckSameGraph(v);
    if (v.cols() != rows[0].cols())
      throw std::invalid_argument("ConcatRows: column counts differ");
    total += v.rows();
    needs = needs || NeedsGrad(v);
  }
  Mat y(total, rows[0].cols());
  Eigen::Index at = 0;
  std::vector<int> idxs;
  std::vector<Eigen::Index> offsets, counts;
  for (Var v : rows) {
    y.middleRows(at, v.rows()) = v.value();
    idxs.push_back(v.idx);
    offsets.push_back(at);
    counts.push_back(v.rows());
    at += v.rows();
  }
  int out = NewNode(std::move(y), needs, nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, idxs, offsets, counts, out]() {
      const Mat &g = nodes_[out].grad;
      for (size_t i = 0; i < idxs.size(); ++i)
        if (nodes_[idxs[i]].needs_grad)
          GradRef(idxs[i]) += g.middleRows(offsets[i], counts[i]);
    };
  return {this, out};
}

Var Graph::PickColsPerRow(Var a, const std::vector<int> &indices) {
  CheckSameGraph(a);
  if (static_cast<Eigen::Index>(indices.size()) != a.rows())
    throw std::invalid_argument("PickColsPerRow: index count != rows");
  int ia = a.idx;
  Mat y(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    int c = indices[r];
    if (c < 0 || c >= a.cols())
      throw std::invalid_argument("PickColsPerRow: index out of range");
    y(r, 0) = nodes_[ia].value(r, c);
  }
  int out = NewNode(std::move(y), NeedsGrad(a), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out, indices]() {
      const Mat &g = nodes_[out].grad;
      Mat &ga = GradRef(ia);
      for (Eigen::Index r = 0; r < g.rows(); ++r)
        ga(r, indices[r]) += g(r, 0);
    };
  return {this, out};
}

Var Graph::BceLogits(Var logits, const Mat &targets) {
  CheckSameGraph(logits);
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw std::invalid_argument("BceLogits: target shape mismatch");
  int ia = logits.idx;
  const Mat &x = nodes_[ia].value;
  // max(x,0) - x*t + log(1 + exp(-|x|)), numerically stable.
  Mat y = (x.array().max(0.0) - x.array() * targets.array() +
           (1.0 + (-x.array().abs()).exp()).log())
              .matrix();
  int out = NewNode(std::move(y), NeedsGrad(logits), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, out, targets]() {
      const Mat &x = nodes_[ia].value;
      Mat sig = (1.0 / (1.0 + (-x.array()).exp())).matrix();
      GradRef(ia).array() +=
          (sig.array() - targets.array()) * nodes_[out].grad.array();
    };
  return {this, out};
}

Var Graph::LocationConv(Var alpha, Var kernels) {
  CheckSameGraph(alpha);
  CheckSameGraph(kernels);
  if (alpha.rows() != 1)
    throw std::invalid_argument("LocationConv: alpha must be a row vector");
  if (kernels.cols() % 2 == 0)
    throw std::invalid_argument("LocationConv: kernel width must be odd");
  int ia = alpha.idx, ik = kernels.idx;
  const Mat &a = nodes_[ia].value;
  const Mat &k = nodes_[ik].value;
  const int T = static_cast<int>(a.cols());
  const int F = static_cast<int>(k.rows());
  const int W = static_cast<int>(k.cols());
  const int c = W / 2;
  Mat y = Mat::Zero(T, F);
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < F; ++f)
      for (int w = 0; w < W; ++w) {
        int s = t + w - c;
        if (s >= 0 && s < T) y(t, f) += k(f, w) * a(0, s);
      }
  int out = NewNode(std::move(y), NeedsGrad(alpha) || NeedsGrad(kernels),
                    nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ia, ik, out, T, F, W, c]() {
      const Mat &g = nodes_[out].grad;
      const Mat &a = nodes_[ia].value;
      const Mat &k = nodes_[ik].value;
      for (int t = 0; t < T; ++t)
        for (int f = 0; f < F; ++f)
          for (int w = 0; w < W; ++w) {
            int s = t + w - c;
            if (s < 0 || s >= T) continue;
            if (nodes_[ia].needs_grad)
              GradRef(ia)(0, s) += k(f, w) * g(t, f);
            if (nodes_[ik].needs_grad)
              GradRef(ik)(f, w) += a(0, s) * g(t, f);
          }
    };
  return {this, out};
}

Var Graph::Conv1dTime(Var x, Var weight, int width) {
  CheckSameGraph(x);
  CheckSameGraph(weight);
  if (width % 2 == 0)
    throw std::invalid_argument("Conv1dTime: width must be odd");
  const int cin = static_cast<int>(x.cols());
  if (weight.rows() != static_cast<Eigen::Index>(width) * cin)
    throw std::invalid_argument("Conv1dTime: weight rows != width * cin");
  int ix = x.idx, iw = weight.idx;
  const Mat &xv = nodes_[ix].value;
  const Mat &wv = nodes_[iw].value;
  const int T = static_cast<int>(xv.rows());
  const int cout = static_cast<int>(wv.cols());
  const int c = width / 2;
  Mat y = Mat::Zero(T, cout);
  for (int w = 0; w < width; ++w) {
    // Input rows that stay in range when shifted by (w - c).
    int lo = std::max(0, c - w);
    int hi = std::min(T, T + c - w);
    if (lo >= hi) continue;
    y.middleRows(lo, hi - lo).noalias() +=
        xv.middleRows(lo + w - c, hi - lo) * wv.middleRows(w * cin, cin);
  }
  int out = NewNode(std::move(y), NeedsGrad(x) || NeedsGrad(weight), nullptr);
  if (nodes_[out].needs_grad)
    nodes_[out].backward = [this, ix, iw, out, T, cin, width, c]() {
      const Mat &g = nodes_[out].grad;
      const Mat &xv = nodes_[ix].value;
      const Mat &wv = nodes_[iw].value;
      for (int w = 0; w < width; ++w) {
        int lo = std::max(0, c - w);
        int hi = std::min(T, T + c - w);
        if (lo >= hi) continue;
        if (nodes_[ix].needs_grad)
          GradRef(ix).middleRows(lo + w - c, hi - lo).noalias() +=
              g.middleRows(lo, hi - lo) *
              wv.middleRows(w * cin, cin).transpose();
        if (nodes_[iw].needs_grad)
          GradRef(iw).middleRows(w * cin, cin).noalias() +=
              xv.middleRows(lo + w - c, hi - lo).transpose() *
              g.middleRows(lo, hi - lo);
      }
    };
  return {this, out};
}

void Graph::Backward(Var loss) {
  CheckSameGraph(loss);
  if (loss.rows() != 1 || loss.cols() != 1)
    throw std::invalid_argument("Backward: loss must be 1x1");
  if (!grad_enabled_)
    throw std::logic_error("Backward on a graph built without gradients");
  if (!nodes_[loss.idx].needs_grad) return;
  GradRef(loss.idx)(0, 0) += 1.0;
  for (int i = loss.idx; i >= 0; --i) {
    Node &n = nodes_[i];
    if (n.needs_grad && n.grad.size() != 0 && n.backward) n.backward();
  }
}

Mat Graph::Grad(Var v) const {
  CheckSameGraph(v);
  const Node &n = nodes_[v.idx];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

}  // namespace seqvc::ad
