// autodiff.h
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
// Small tape-based reverse-mode autodiff over Eigen matrices. One Graph is
// built per forward pass; Backward() walks the tape in reverse. With grads
// disabled the same code path runs as plain inference.

#ifndef SEQVC_AUTODIFF_H_
#define SEQVC_AUTODIFF_H_

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace seqvc::ad {

using Mat = Eigen::MatrixXd;

class Graph;

// Handle to a tape node. Cheap to copy; valid as long as the Graph lives.
struct Var {
  Graph *graph = nullptr;
  int idx = -1;

  const Mat &value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph &) = delete;
  Graph &operator=(const Graph &) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // Constant, never receives gradient.
  Var Input(Mat value);
  // Trainable leaf. The value is copied; read the gradient back with Grad().
  Var Param(const Mat &value);

  Var Add(Var a, Var b);
  Var Sub(Var a, Var b);
  Var Mul(Var a, Var b);             // elementwise
  Var CMul(Var a, const Mat &m);     // elementwise by a constant
  Var Scale(Var a, double c);
  Var AddConst(Var a, double c);
  Var AddRowBroadcast(Var a, Var row);  // a[T x H] + row[1 x H] per row
  Var MulColBroadcast(Var a, Var col);  // a[T x H] * col[T x 1] per column
  Var MatMul(Var a, Var b);
  Var Transpose(Var a);
  Var Sigmoid(Var a);
  Var Tanh(Var a);
  Var Relu(Var a);
  Var Exp(Var a);
  Var Abs(Var a);
  Var ClampMin(Var a, double floor);
  Var SoftmaxRows(Var a);
  Var LogSoftmaxRows(Var a);
  Var LogSumExpRows(Var a);          // [T x C] -> [T x 1]
  Var RowSum(Var a);                 // [T x H] -> [T x 1]
  Var SumAll(Var a);                 // -> [1 x 1]
  Var ConcatCols(Var a, Var b);
  Var ConcatCols3(Var a, Var b, Var c);
  Var SliceCols(Var a, int start, int n);
  Var Row(Var a, int t);
  Var ConcatRows(const std::vector<Var> &rows);
  // out[t, c] = a(t, indices[t]); indices must be in range.
  Var PickColsPerRow(Var a, const std::vector<int> &indices);
  // Binary cross entropy with logits against constant targets, elementwise.
  Var BceLogits(Var logits, const Mat &targets);
  // 1-D convolution of a weight row over time. alpha is [1 x T], kernels
  // [F x W] with odd W and zero padding; output [T x F].
  Var LocationConv(Var alpha, Var kernels);
  // 1-D convolution over time of x [T x Cin] with weight [(W*Cin) x Cout],
  // zero same-padding, odd width.
  Var Conv1dTime(Var x, Var weight, int width);

  // Accumulates gradients of everything reachable from `loss` (a 1x1 node).
  void Backward(Var loss);
  // Gradient of a node after Backward(); zeros if it was not reached.
  Mat Grad(Var v) const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  friend struct Var;

  int NewNode(Mat value, bool needs_grad, std::function<void()> backward);
  Mat &GradRef(int idx);
  bool NeedsGrad(Var v) const { return nodes_[v.idx].needs_grad; }
  void CheckSameGraph(Var v) const;

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace seqvc::ad

#endif  // SEQVC_AUTODIFF_H_
