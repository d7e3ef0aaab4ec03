#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "mvoc/tensor.hpp"

namespace mvoc::ad {

struct Node;
using Var = std::shared_ptr<Node>;

// Gradients accumulate here instead of inside nodes, so one graph can be
// differentiated from several threads / several times without interference.
class GradStore {
 public:
  void add(const Node* n, const Tensor& g);
  const Tensor* find(const Node* n) const;

 private:
  std::unordered_map<const Node*, Tensor> grads_;
};

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;
  // Receives the gradient of this node and accumulates parent gradients.
  std::function<void(const Tensor&, GradStore&)> backprop;
};

// Scoped disable of tape recording (selection and evaluation run gradient-free).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

Var constant(Tensor v);
Var leaf(Tensor v);  // participates in gradient computation

// Reverse-mode sweep from a scalar root (seeds with 1) into `gs`.
void backward(const Var& root, GradStore& gs);
// Same, with an explicit output gradient (shape of root->value).
void backward(const Var& root, const Tensor& seed, GradStore& gs);

// --- elementwise / broadcast -------------------------------------------------
// Binary ops accept b with the same shape as a, or with numel dividing a's and
// matching a trailing block (suffix broadcast: [C] against [N,C], scalars, ...).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
// Multiplies each row of a [N,C] by the matching entry of v [N] or [N,1].
Var mul_colvec(const Var& a, const Var& v);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);

Var relu(const Var& a);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var exp_op(const Var& a);

// --- matrix ------------------------------------------------------------------
Var matmul(const Var& a, const Var& b);     // [m,k]x[k,n]
Var matmul_nt(const Var& a, const Var& b);  // a x b^T : [m,k]x[n,k] -> [m,n]
Var matmul_tn(const Var& a, const Var& b);  // a^T x b : [k,m]x[k,n] -> [m,n]

Var softmax_lastdim(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

// --- reductions / shaping ----------------------------------------------------
Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]
Var sum_axis0(const Var& a); // [N,C] -> [C]
Var reshape(const Var& a, std::vector<std::int64_t> shape);
Var concat_lastdim(const std::vector<Var>& xs);
Var slice_lastdim(const Var& a, std::int64_t start, std::int64_t len);
Var slice_rows(const Var& a, std::int64_t start, std::int64_t len);
Var repeat_rows(const Var& v, std::int64_t n);  // [C] or [1,C] -> [n,C]

// --- conv / resampling (fused custom backward) -------------------------------
// x: [H,W,Cin], w: [kh,kw,Cin,Cout], b: [Cout]; 'same'-style zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample2x_nearest(const Var& x);  // [H,W,C] -> [2H,2W,C]

// Sum of squared differences (composition helper).
Var sse(const Var& a, const Var& b);

}  // namespace mvoc::ad
