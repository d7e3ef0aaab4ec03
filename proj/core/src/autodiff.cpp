#include "mvoc/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mvoc::ad {

namespace {

thread_local bool g_grad_enabled = true;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;

CMatMap as_mat(const Tensor& t, std::int64_t r, std::int64_t c) {
  return CMatMap(t.data(), r, c);
}
MatMap as_mat(Tensor& t, std::int64_t r, std::int64_t c) {
  return MatMap(t.data(), r, c);
}

// Last-dim matrix view: [prod(leading), lastdim].
std::pair<std::int64_t, std::int64_t> mat_dims(const Tensor& t) {
  if (t.rank() == 0) throw std::invalid_argument("mat_dims: rank 0");
  std::int64_t c = t.dim(t.rank() - 1);
  std::int64_t r = c == 0 ? 0 : t.numel() / c;
  return {r, c};
}

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(const Tensor&, GradStore&)> bp) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rg = false;
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        rg = true;
        break;
      }
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return n;
}

void check_suffix(const Tensor& a, const Tensor& b, const char* op) {
  if (b.numel() == 0 || a.numel() % b.numel() != 0)
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() +
                                " vs " + b.shape_str());
}

// Reduce a full-size gradient onto the broadcast operand.
Tensor reduce_to(const Tensor& g, const Tensor& ref) {
  Tensor out = Tensor::zeros(ref.shape());
  const std::int64_t bn = ref.numel();
  const std::int64_t n = g.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i % bn] += g[i];
  return out;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void GradStore::add(const Node* n, const Tensor& g) {
  auto it = grads_.find(n);
  if (it == grads_.end()) {
    grads_.emplace(n, g.clone());
    return;
  }
  Tensor& acc = it->second;
  const std::int64_t m = acc.numel();
  for (std::int64_t i = 0; i < m; ++i) acc[i] += g[i];
}

const Tensor* GradStore::find(const Node* n) const {
  auto it = grads_.find(n);
  return it == grads_.end() ? nullptr : &it->second;
}

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  return n;
}

Var leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

void backward(const Var& root, const Tensor& seed, GradStore& gs) {
  if (!root->requires_grad && !root->backprop) {
    // Leaf root: gradient of itself.
    gs.add(root.get(), seed);
    return;
  }
  // Iterative post-order over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  gs.add(root.get(), seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backprop) continue;
    const Tensor* g = gs.find(n);
    if (!g) continue;
    n->backprop(*g, gs);
  }
}

void backward(const Var& root, GradStore& gs) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar, got " + root->value.shape_str());
  backward(root, Tensor::scalar(1.0), gs);
}

// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_suffix(a->value, b->value, "add");
  Tensor out = a->value.clone();
  const std::int64_t bn = b->value.numel();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i % bn];
  auto pa = a.get();
  auto pb = b.get();
  return make_op(std::move(out), {a, b}, [pa, pb, a, b](const Tensor& g, GradStore& gs) {
    if (pa->requires_grad) gs.add(pa, g);
    if (pb->requires_grad) gs.add(pb, reduce_to(g, pb->value));
  });
}

Var sub(const Var& a, const Var& b) {
  check_suffix(a->value, b->value, "sub");
  Tensor out = a->value.clone();
  const std::int64_t bn = b->value.numel();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i % bn];
  auto pa = a.get();
  auto pb = b.get();
  return make_op(std::move(out), {a, b}, [pa, pb, a, b](const Tensor& g, GradStore& gs) {
    if (pa->requires_grad) gs.add(pa, g);
    if (pb->requires_grad) {
      Tensor r = reduce_to(g, pb->value);
      for (std::int64_t i = 0; i < r.numel(); ++i) r[i] = -r[i];
      gs.add(pb, r);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_suffix(a->value, b->value, "mul");
  Tensor out = a->value.clone();
  const std::int64_t bn = b->value.numel();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i % bn];
  auto pa = a.get();
  auto pb = b.get();
  return make_op(std::move(out), {a, b}, [pa, pb, a, b](const Tensor& g, GradStore& gs) {
    const std::int64_t bn2 = pb->value.numel();
    if (pa->requires_grad) {
      Tensor ga = g.clone();
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] *= pb->value[i % bn2];
      gs.add(pa, ga);
    }
    if (pb->requires_grad) {
      Tensor gb = Tensor::zeros(pb->value.shape());
      for (std::int64_t i = 0; i < g.numel(); ++i) gb[i % bn2] += g[i] * pa->value[i];
      gs.add(pb, gb);
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_suffix(a->value, b->value, "div");
  Tensor out = a->value.clone();
  const std::int64_t bn = b->value.numel();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i % bn];
  auto pa = a.get();
  auto pb = b.get();
  return make_op(std::move(out), {a, b}, [pa, pb, a, b](const Tensor& g, GradStore& gs) {
    const std::int64_t bn2 = pb->value.numel();
    if (pa->requires_grad) {
      Tensor ga = g.clone();
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] /= pb->value[i % bn2];
      gs.add(pa, ga);
    }
    if (pb->requires_grad) {
      Tensor gb = Tensor::zeros(pb->value.shape());
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        const double bb = pb->value[i % bn2];
        gb[i % bn2] -= g[i] * pa->value[i] / (bb * bb);
      }
      gs.add(pb, gb);
    }
  });
}

Var mul_colvec(const Var& a, const Var& v) {
  auto [r, c] = mat_dims(a->value);
  if (v->value.numel() != r) throw std::invalid_argument("mul_colvec: length mismatch");
  Tensor out = a->value.clone();
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[i * c + j] *= v->value[i];
  auto pa = a.get();
  auto pv = v.get();
  return make_op(std::move(out), {a, v}, [pa, pv, a, v, r, c](const Tensor& g, GradStore& gs) {
    if (pa->requires_grad) {
      Tensor ga = g.clone();
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] *= pv->value[i];
      gs.add(pa, ga);
    }
    if (pv->requires_grad) {
      Tensor gv = Tensor::zeros(pv->value.shape());
      for (std::int64_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::int64_t j = 0; j < c; ++j) s += g[i * c + j] * pa->value[i * c + j];
        gv[i] += s;
      }
      gs.add(pv, gv);
    }
  });
}

Var scale(const Var& a, double cst) {
  Tensor out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= cst;
  auto pa = a.get();
  return make_op(std::move(out), {a}, [pa, a, cst](const Tensor& g, GradStore& gs) {
    Tensor ga = g.clone();
    for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] *= cst;
    gs.add(pa, ga);
  });
}

Var add_scalar(const Var& a, double cst) {
  Tensor out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += cst;
  auto pa = a.get();
  return make_op(std::move(out), {a},
                 [pa, a](const Tensor& g, GradStore& gs) { gs.add(pa, g); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
  Tensor out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0) out[i] = 0;
  auto pa = a.get();
  return make_op(std::move(out), {a}, [pa, a](const Tensor& g, GradStore& gs) {
    Tensor ga = g.clone();
    for (std::int64_t i = 0; i < ga.numel(); ++i)
      if (pa->value[i] <= 0) ga[i] = 0;
    gs.add(pa, ga);
  });
}

Var silu(const Var& a) {
  Tensor out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-out[i]));
    out[i] *= s;
  }
  auto pa = a.get();
  return make_op(std::move(out), {a}, [pa, a](const Tensor& g, GradStore& gs) {
    Tensor ga = g.clone();
    for (std::int64_t i = 0; i < ga.numel(); ++i) {
      const double x = pa->value[i];
      const double s = 1.0 / (1.0 + std::exp(-x));
      ga[i] *= s * (1.0 + x * (1.0 - s));
    }
    gs.add(pa, ga);
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  auto pa = a.get();
  auto keep = std::make_shared<Tensor>(out.clone());
  return make_op(std::move(out), {a}, [pa, a, keep](const Tensor& g, GradStore& gs) {
    Tensor ga = g.clone();
    for (std::int64_t i = 0; i < ga.numel(); ++i) {
      const double s = (*keep)[i];
      ga[i] *= s * (1.0 - s);
    }
    gs.add(pa, ga);
  });
}

Var tanh_op(const Var& a) {
  Tensor out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  auto pa = a.get();
  auto keep = std::make_shared<Tensor>(out.clone());
  return make_op(std::move(out), {a}, [pa, a, keep](const Tensor& g, GradStore& gs) {
    Tensor ga = g.clone();
    for (std::int64_t i = 0; i < ga.numel(); ++i) {
      const double t = (*keep)[i];
      ga[i] *= 1.0 - t * t;
    }
    gs.add(pa, ga);
  });
}

Var exp_op(const Var& a) {
  Tensor out = a->value.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  auto pa = a.get();
  auto keep = std::make_shared<Tensor>(out.clone());
  return make_op(std::move(out), {a}, [pa, a, keep](const Tensor& g, GradStore& gs) {
    Tensor ga = g.clone();
    for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] *= (*keep)[i];
    gs.add(pa, ga);
  });
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const std::int64_t m = a->value.rows(), k = a->value.cols();
  const std::int64_t k2 = b->value.rows(), n = b->value.cols();
  if (k != k2) throw std::invalid_argument("matmul: inner dims " + a->value.shape_str() + " x " +
                                           b->value.shape_str());
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a->value, m, k) * as_mat(b->value, k, n);
  auto pa = a.get();
  auto pb = b.get();
  return make_op(std::move(out), {a, b}, [=](const Tensor& g, GradStore& gs) {
    if (pa->requires_grad) {
      Tensor ga({m, k});
      as_mat(ga, m, k).noalias() = as_mat(g, m, n) * as_mat(pb->value, k, n).transpose();
      gs.add(pa, ga);
    }
    if (pb->requires_grad) {
      Tensor gb({k, n});
      as_mat(gb, k, n).noalias() = as_mat(pa->value, m, k).transpose() * as_mat(g, m, n);
      gs.add(pb, gb);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const std::int64_t m = a->value.rows(), k = a->value.cols();
  const std::int64_t n = b->value.rows(), k2 = b->value.cols();
  if (k != k2) throw std::invalid_argument("matmul_nt: inner dims");
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a->value, m, k) * as_mat(b->value, n, k).transpose();
  auto pa = a.get();
  auto pb = b.get();
  return make_op(std::move(out), {a, b}, [=](const Tensor& g, GradStore& gs) {
    if (pa->requires_grad) {
      Tensor ga({m, k});
      as_mat(ga, m, k).noalias() = as_mat(g, m, n) * as_mat(pb->value, n, k);
      gs.add(pa, ga);
    }
    if (pb->requires_grad) {
      Tensor gb({n, k});
      as_mat(gb, n, k).noalias() = as_mat(g, m, n).transpose() * as_mat(pa->value, m, k);
      gs.add(pb, gb);
    }
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  const std::int64_t k = a->value.rows(), m = a->value.cols();
  const std::int64_t k2 = b->value.rows(), n = b->value.cols();
  if (k != k2) throw std::invalid_argument("matmul_tn: inner dims");
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a->value, k, m).transpose() * as_mat(b->value, k, n);
  auto pa = a.get();
  auto pb = b.get();
  return make_op(std::move(out), {a, b}, [=](const Tensor& g, GradStore& gs) {
    if (pa->requires_grad) {
      Tensor ga({k, m});
      as_mat(ga, k, m).noalias() = as_mat(pb->value, k, n) * as_mat(g, m, n).transpose();
      gs.add(pa, ga);
    }
    if (pb->requires_grad) {
      Tensor gb({k, n});
      as_mat(gb, k, n).noalias() = as_mat(pa->value, k, m) * as_mat(g, m, n);
      gs.add(pb, gb);
    }
  });
}

Var softmax_lastdim(const Var& a) {
  auto [r, c] = mat_dims(a->value);
  Tensor out = a->value.clone();
  for (std::int64_t i = 0; i < r; ++i) {
    double* row = out.data() + i * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (std::int64_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::int64_t j = 0; j < c; ++j) row[j] /= sum;
  }
  auto pa = a.get();
  auto keep = std::make_shared<Tensor>(out.clone());
  return make_op(std::move(out), {a}, [pa, a, keep, r = r, c = c](const Tensor& g, GradStore& gs) {
    Tensor ga = Tensor::zeros(pa->value.shape());
    for (std::int64_t i = 0; i < r; ++i) {
      const double* y = keep->data() + i * c;
      const double* gr = g.data() + i * c;
      double dot = 0;
      for (std::int64_t j = 0; j < c; ++j) dot += gr[j] * y[j];
      double* out_row = ga.data() + i * c;
      for (std::int64_t j = 0; j < c; ++j) out_row[j] = y[j] * (gr[j] - dot);
    }
    gs.add(pa, ga);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  auto [r, c] = mat_dims(x->value);
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw std::invalid_argument("layer_norm: gamma/beta size");
  Tensor out(x->value.shape());
  Tensor xhat({r, c});
  Tensor inv_std({r});
  for (std::int64_t i = 0; i < r; ++i) {
    const double* row = x->value.data() + i * c;
    double mean = 0;
    for (std::int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0;
    for (std::int64_t j = 0; j < c; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::int64_t j = 0; j < c; ++j) {
      const double xh = (row[j] - mean) * is;
      xhat[i * c + j] = xh;
      out[i * c + j] = gamma->value[j] * xh + beta->value[j];
    }
  }
  auto px = x.get();
  auto pg = gamma.get();
  auto pbeta = beta.get();
  auto keep_xhat = std::make_shared<Tensor>(std::move(xhat));
  auto keep_is = std::make_shared<Tensor>(std::move(inv_std));
  return make_op(std::move(out), {x, gamma, beta},
                 [=, r = r, c = c](const Tensor& g, GradStore& gs) {
    if (pg->requires_grad) {
      Tensor gg = Tensor::zeros(pg->value.shape());
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * (*keep_xhat)[i * c + j];
      gs.add(pg, gg);
    }
    if (pbeta->requires_grad) {
      Tensor gb = Tensor::zeros(pbeta->value.shape());
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      gs.add(pbeta, gb);
    }
    if (px->requires_grad) {
      Tensor gx = Tensor::zeros(px->value.shape());
      for (std::int64_t i = 0; i < r; ++i) {
        double mean_d = 0, mean_dx = 0;
        for (std::int64_t j = 0; j < c; ++j) {
          const double dxh = g[i * c + j] * pg->value[j];
          mean_d += dxh;
          mean_dx += dxh * (*keep_xhat)[i * c + j];
        }
        mean_d /= static_cast<double>(c);
        mean_dx /= static_cast<double>(c);
        for (std::int64_t j = 0; j < c; ++j) {
          const double dxh = g[i * c + j] * pg->value[j];
          gx[i * c + j] =
              (*keep_is)[i] * (dxh - mean_d - (*keep_xhat)[i * c + j] * mean_dx);
        }
      }
      gs.add(px, gx);
    }
  });
}

// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
  double s = 0;
  for (std::int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  auto pa = a.get();
  return make_op(Tensor::scalar(s), {a}, [pa, a](const Tensor& g, GradStore& gs) {
    gs.add(pa, Tensor::full(pa->value.shape(), g[0]));
  });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel())); }

Var sum_axis0(const Var& a) {
  auto [r, c] = mat_dims(a->value);
  Tensor out({c});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j] += a->value[i * c + j];
  auto pa = a.get();
  return make_op(std::move(out), {a}, [pa, a, r = r, c = c](const Tensor& g, GradStore& gs) {
    Tensor ga({r, c});
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] = g[j];
    gs.add(pa, ga.reshaped(pa->value.shape()));
  });
}

Var reshape(const Var& a, std::vector<std::int64_t> shape) {
  Tensor out = a->value.reshaped(shape);
  auto pa = a.get();
  return make_op(std::move(out), {a}, [pa, a](const Tensor& g, GradStore& gs) {
    gs.add(pa, g.reshaped(pa->value.shape()));
  });
}

Var concat_lastdim(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_lastdim: empty");
  auto [r0, c0] = mat_dims(xs[0]->value);
  std::int64_t ctotal = 0;
  for (const auto& x : xs) {
    auto [r, c] = mat_dims(x->value);
    if (r != r0) throw std::invalid_argument("concat_lastdim: row mismatch");
    ctotal += c;
  }
  Tensor out({r0, ctotal});
  std::int64_t off = 0;
  for (const auto& x : xs) {
    auto [r, c] = mat_dims(x->value);
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) out[i * ctotal + off + j] = x->value[i * c + j];
    off += c;
  }
  std::vector<Var> parents = xs;
  return make_op(std::move(out), parents,
                 [parents, r0 = r0, ctotal](const Tensor& g, GradStore& gs) {
    std::int64_t off2 = 0;
    for (const auto& x : parents) {
      auto [r, c] = mat_dims(x->value);
      if (x->requires_grad) {
        Tensor gx(x->value.shape());
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) gx[i * c + j] = g[i * ctotal + off2 + j];
        gs.add(x.get(), gx);
      }
      off2 += c;
    }
  });
}

Var slice_lastdim(const Var& a, std::int64_t start, std::int64_t len) {
  auto [r, c] = mat_dims(a->value);
  if (start < 0 || start + len > c) throw std::invalid_argument("slice_lastdim: out of range");
  std::vector<std::int64_t> shape = a->value.shape();
  shape.back() = len;
  Tensor out(shape);
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < len; ++j) out[i * len + j] = a->value[i * c + start + j];
  auto pa = a.get();
  return make_op(std::move(out), {a},
                 [pa, a, start, len, r = r, c = c](const Tensor& g, GradStore& gs) {
    Tensor ga = Tensor::zeros(pa->value.shape());
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < len; ++j) ga[i * c + start + j] = g[i * len + j];
    gs.add(pa, ga);
  });
}

Var slice_rows(const Var& a, std::int64_t start, std::int64_t len) {
  auto [r, c] = mat_dims(a->value);
  if (start < 0 || start + len > r) throw std::invalid_argument("slice_rows: out of range");
  Tensor out({len, c});
  for (std::int64_t i = 0; i < len; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[i * c + j] = a->value[(start + i) * c + j];
  auto pa = a.get();
  return make_op(std::move(out), {a},
                 [pa, a, start, len, c = c](const Tensor& g, GradStore& gs) {
    Tensor ga = Tensor::zeros(pa->value.shape());
    for (std::int64_t i = 0; i < len; ++i)
      for (std::int64_t j = 0; j < c; ++j) ga[(start + i) * c + j] = g[i * c + j];
    gs.add(pa, ga);
  });
}

Var repeat_rows(const Var& v, std::int64_t n) {
  const std::int64_t c = v->value.numel();
  Tensor out({n, c});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[i * c + j] = v->value[j];
  auto pv = v.get();
  return make_op(std::move(out), {v}, [pv, v, n, c](const Tensor& g, GradStore& gs) {
    Tensor gv = Tensor::zeros(pv->value.shape());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
    gs.add(pv, gv);
  });
}

// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  std::int64_t h, w, ci, kh, kw, co, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4) throw std::invalid_argument("conv2d: rank");
  ConvDims d;
  d.h = x.dim(0);
  d.w = x.dim(1);
  d.ci = x.dim(2);
  d.kh = w.dim(0);
  d.kw = w.dim(1);
  if (w.dim(2) != d.ci) throw std::invalid_argument("conv2d: channel mismatch");
  d.co = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

// col: [ho*wo, kh*kw*ci]
void im2col(const Tensor& x, const ConvDims& d, Tensor& col) {
  const std::int64_t patch = d.kh * d.kw * d.ci;
  for (std::int64_t oy = 0; oy < d.ho; ++oy) {
    for (std::int64_t ox = 0; ox < d.wo; ++ox) {
      double* dst = col.data() + (oy * d.wo + ox) * patch;
      for (std::int64_t ky = 0; ky < d.kh; ++ky) {
        const std::int64_t iy = oy * d.stride + ky - d.pad;
        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
          const std::int64_t ix = ox * d.stride + kx - d.pad;
          double* cell = dst + (ky * d.kw + kx) * d.ci;
          if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) {
            for (std::int64_t c = 0; c < d.ci; ++c) cell[c] = 0.0;
          } else {
            const double* src = x.data() + (iy * d.w + ix) * d.ci;
            for (std::int64_t c = 0; c < d.ci; ++c) cell[c] = src[c];
          }
        }
      }
    }
  }
}

void col2im_add(const Tensor& col, const ConvDims& d, Tensor& gx) {
  const std::int64_t patch = d.kh * d.kw * d.ci;
  for (std::int64_t oy = 0; oy < d.ho; ++oy) {
    for (std::int64_t ox = 0; ox < d.wo; ++ox) {
      const double* src = col.data() + (oy * d.wo + ox) * patch;
      for (std::int64_t ky = 0; ky < d.kh; ++ky) {
        const std::int64_t iy = oy * d.stride + ky - d.pad;
        if (iy < 0 || iy >= d.h) continue;
        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
          const std::int64_t ix = ox * d.stride + kx - d.pad;
          if (ix < 0 || ix >= d.w) continue;
          const double* cell = src + (ky * d.kw + kx) * d.ci;
          double* dst = gx.data() + (iy * d.w + ix) * d.ci;
          for (std::int64_t c = 0; c < d.ci; ++c) dst[c] += cell[c];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const ConvDims d = conv_dims(x->value, w->value, stride, pad);
  if (b->value.numel() != d.co) throw std::invalid_argument("conv2d: bias size");
  const std::int64_t patch = d.kh * d.kw * d.ci;
  const std::int64_t npos = d.ho * d.wo;
  Tensor col({npos, patch});
  im2col(x->value, d, col);
  Tensor out({d.ho, d.wo, d.co});
  as_mat(out, npos, d.co).noalias() =
      as_mat(col, npos, patch) * as_mat(w->value, patch, d.co);
  for (std::int64_t p = 0; p < npos; ++p)
    for (std::int64_t c = 0; c < d.co; ++c) out[p * d.co + c] += b->value[c];
  auto px = x.get();
  auto pw = w.get();
  auto pb = b.get();
  // im2col is recomputed in the backward pass to keep graph memory flat.
  return make_op(std::move(out), {x, w, b}, [=](const Tensor& g, GradStore& gs) {
    if (pb->requires_grad) {
      Tensor gb = Tensor::zeros({d.co});
      for (std::int64_t p = 0; p < npos; ++p)
        for (std::int64_t c = 0; c < d.co; ++c) gb[c] += g[p * d.co + c];
      gs.add(pb, gb);
    }
    if (pw->requires_grad) {
      Tensor col2({npos, patch});
      im2col(px->value, d, col2);
      Tensor gw(pw->value.shape());
      as_mat(gw, patch, d.co).noalias() =
          as_mat(col2, npos, patch).transpose() * as_mat(g, npos, d.co);
      gs.add(pw, gw);
    }
    if (px->requires_grad) {
      Tensor gcol({npos, patch});
      as_mat(gcol, npos, patch).noalias() =
          as_mat(g, npos, d.co) * as_mat(pw->value, patch, d.co).transpose();
      Tensor gx = Tensor::zeros(px->value.shape());
      col2im_add(gcol, d, gx);
      gs.add(px, gx);
    }
  });
}

Var upsample2x_nearest(const Var& x) {
  if (x->value.rank() != 3) throw std::invalid_argument("upsample2x: rank");
  const std::int64_t h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
  Tensor out({2 * h, 2 * w, c});
  for (std::int64_t i = 0; i < 2 * h; ++i)
    for (std::int64_t j = 0; j < 2 * w; ++j) {
      const double* src = x->value.data() + ((i / 2) * w + (j / 2)) * c;
      double* dst = out.data() + (i * 2 * w + j) * c;
      for (std::int64_t k = 0; k < c; ++k) dst[k] = src[k];
    }
  auto px = x.get();
  return make_op(std::move(out), {x}, [px, x, h, w, c](const Tensor& g, GradStore& gs) {
    Tensor gx = Tensor::zeros(px->value.shape());
    for (std::int64_t i = 0; i < 2 * h; ++i)
      for (std::int64_t j = 0; j < 2 * w; ++j) {
        const double* src = g.data() + (i * 2 * w + j) * c;
        double* dst = gx.data() + ((i / 2) * w + (j / 2)) * c;
        for (std::int64_t k = 0; k < c; ++k) dst[k] += src[k];
      }
    gs.add(px, gx);
  });
}

Var sse(const Var& a, const Var& b) {
  Var d = sub(a, b);
  return sum_all(mul(d, d));
}

}  // namespace mvoc::ad
