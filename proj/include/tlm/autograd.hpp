#pragma once

// Reverse-mode tape autograd over dense Eigen matrices, templated on scalar so
// training runs in float while finite-difference checks run in double. Graphs
// are built per forward pass; parameters are long-lived leaves shared across
// graphs. Single-threaded by design.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tlm/common.hpp"

namespace tlm::ag {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct Node {
  Mat<S> value;
  Mat<S> grad;  // empty until first accumulation
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backprop;  // scatters this->grad to parents
  bool needs_grad = false;
  bool trainable = false;
  std::string name;

  void accumulate(const Mat<S>& g) {
    if (grad.size() == 0) grad = Mat<S>::Zero(value.rows(), value.cols());
    grad += g;
  }
  void zero_grad() { grad.resize(0, 0); }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

// Global tape switch. Ops created while a NoGradGuard is alive keep their
// values but record no parents, so inference allocates no backward state.
inline bool& grad_mode() {
  static bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
Var<S> leaf(Mat<S> value, bool trainable = false, std::string name = {}) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->trainable = trainable;
  n->needs_grad = trainable;
  n->name = std::move(name);
  return n;
}

template <typename S>
Var<S> constant(Mat<S> value) {
  return leaf<S>(std::move(value), false);
}

// Interior node; drops the tape when no parent needs gradients so inference
// builds no backward state.
template <typename S>
Var<S> make_op(Mat<S> value, std::vector<Var<S>> parents,
               std::function<void(Node<S>&)> backprop) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  if (grad_mode()) {
    for (const auto& p : parents) {
      if (p->needs_grad) {
        n->needs_grad = true;
        break;
      }
    }
  }
  if (n->needs_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// ---- arithmetic ----

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  require(a->value.cols() == b->value.rows(), "matmul: inner dims differ");
  Mat<S> v = a->value * b->value;
  return make_op<S>(std::move(v), {a, b}, [a, b](Node<S>& n) {
    if (a->needs_grad) a->accumulate(n.grad * b->value.transpose());
    if (b->needs_grad) b->accumulate(a->value.transpose() * n.grad);
  });
}

// a * b^T without materializing the transpose in the graph.
template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
  require(a->value.cols() == b->value.cols(), "matmul_nt: inner dims differ");
  Mat<S> v = a->value * b->value.transpose();
  return make_op<S>(std::move(v), {a, b}, [a, b](Node<S>& n) {
    if (a->needs_grad) a->accumulate(n.grad * b->value);
    if (b->needs_grad) b->accumulate(n.grad.transpose() * a->value);
  });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "add: shape mismatch");
  Mat<S> v = a->value + b->value;
  return make_op<S>(std::move(v), {a, b}, [a, b](Node<S>& n) {
    if (a->needs_grad) a->accumulate(n.grad);
    if (b->needs_grad) b->accumulate(n.grad);
  });
}

// x (R×C) + row (1×C) broadcast down rows; the bias pattern.
template <typename S>
Var<S> add_rowvec(const Var<S>& x, const Var<S>& row) {
  require(row->value.rows() == 1 && row->value.cols() == x->value.cols(),
          "add_rowvec: need 1×C row matching x columns");
  Mat<S> v = x->value.rowwise() + row->value.row(0);
  return make_op<S>(std::move(v), {x, row}, [x, row](Node<S>& n) {
    if (x->needs_grad) x->accumulate(n.grad);
    if (row->needs_grad) row->accumulate(n.grad.colwise().sum());
  });
}

template <typename S>
Var<S> scale(const Var<S>& x, S c) {
  Mat<S> v = x->value * c;
  return make_op<S>(std::move(v), {x}, [x, c](Node<S>& n) {
    if (x->needs_grad) x->accumulate(n.grad * c);
  });
}

template <typename S>
Var<S> hadamard(const Var<S>& a, const Var<S>& b) {
  require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "hadamard: shape mismatch");
  Mat<S> v = a->value.cwiseProduct(b->value);
  return make_op<S>(std::move(v), {a, b}, [a, b](Node<S>& n) {
    if (a->needs_grad) a->accumulate(n.grad.cwiseProduct(b->value));
    if (b->needs_grad) b->accumulate(n.grad.cwiseProduct(a->value));
  });
}

// ---- shape ops ----

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), "concat_rows: empty input");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front()->value.cols();
  for (const auto& p : parts) {
    require(p->value.cols() == cols, "concat_rows: column mismatch");
    rows += p->value.rows();
  }
  Mat<S> v(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p->value.rows()) = p->value;
    r += p->value.rows();
  }
  return make_op<S>(std::move(v), parts, [parts](Node<S>& n) {
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      if (p->needs_grad) p->accumulate(n.grad.middleRows(r, p->value.rows()));
      r += p->value.rows();
    }
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), "concat_cols: empty input");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front()->value.rows();
  for (const auto& p : parts) {
    require(p->value.rows() == rows, "concat_cols: row mismatch");
    cols += p->value.cols();
  }
  Mat<S> v(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p->value.cols()) = p->value;
    c += p->value.cols();
  }
  return make_op<S>(std::move(v), parts, [parts](Node<S>& n) {
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      if (p->needs_grad) p->accumulate(n.grad.middleCols(c, p->value.cols()));
      c += p->value.cols();
    }
  });
}

template <typename S>
Var<S> slice_rows(const Var<S>& x, Eigen::Index r0, Eigen::Index count) {
  require(r0 >= 0 && count >= 0 && r0 + count <= x->value.rows(),
          "slice_rows: out of range");
  Mat<S> v = x->value.middleRows(r0, count);
  return make_op<S>(std::move(v), {x}, [x, r0, count](Node<S>& n) {
    if (!x->needs_grad) return;
    Mat<S> g = Mat<S>::Zero(x->value.rows(), x->value.cols());
    g.middleRows(r0, count) = n.grad;
    x->accumulate(g);
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& x, Eigen::Index c0, Eigen::Index count) {
  require(c0 >= 0 && count >= 0 && c0 + count <= x->value.cols(),
          "slice_cols: out of range");
  Mat<S> v = x->value.middleCols(c0, count);
  return make_op<S>(std::move(v), {x}, [x, c0, count](Node<S>& n) {
    if (!x->needs_grad) return;
    Mat<S> g = Mat<S>::Zero(x->value.rows(), x->value.cols());
    g.middleCols(c0, count) = n.grad;
    x->accumulate(g);
  });
}

// Row lookup (embedding). Gradient scatter-adds, so repeated ids are fine.
template <typename S>
Var<S> gather_rows(const Var<S>& table, std::vector<int> ids) {
  Mat<S> v(Eigen::Index(ids.size()), table->value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table->value.rows(), "gather_rows: id out of range");
    v.row(Eigen::Index(i)) = table->value.row(ids[i]);
  }
  return make_op<S>(std::move(v), {table}, [table, ids = std::move(ids)](Node<S>& n) {
    if (!table->needs_grad) return;
    Mat<S> g = Mat<S>::Zero(table->value.rows(), table->value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      g.row(ids[i]) += n.grad.row(Eigen::Index(i));
    }
    table->accumulate(g);
  });
}

template <typename S>
Var<S> rows_mean(const Var<S>& x) {
  require(x->value.rows() > 0, "rows_mean: empty input");
  Mat<S> v = x->value.colwise().mean();
  return make_op<S>(std::move(v), {x}, [x](Node<S>& n) {
    if (!x->needs_grad) return;
    const S inv = S(1) / S(x->value.rows());
    Mat<S> g = (n.grad * inv).colwise().replicate(x->value.rows());
    x->accumulate(g);
  });
}

// ---- nonlinearities ----

// Exact GELU: x·Φ(x) with Φ the standard normal CDF via erf.
template <typename S>
Var<S> gelu(const Var<S>& x) {
  Mat<S> phi = x->value.unaryExpr([](S t) {
    return S(0.5) * (S(1) + S(std::erf(double(t) * 0.70710678118654752440)));
  });
  Mat<S> v = x->value.cwiseProduct(phi);
  return make_op<S>(std::move(v), {x}, [x, phi = std::move(phi)](Node<S>& n) {
    if (!x->needs_grad) return;
    Mat<S> pdf = x->value.unaryExpr([](S t) {
      return S(0.39894228040143267794 * std::exp(-0.5 * double(t) * double(t)));
    });
    Mat<S> d = phi + x->value.cwiseProduct(pdf);
    x->accumulate(n.grad.cwiseProduct(d));
  });
}

// Tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
template <typename S>
Var<S> gelu_tanh(const Var<S>& x) {
  constexpr double kSqrt2OverPi = 0.79788456080286535588;
  constexpr double kCubic = 0.044715;
  Mat<S> t = x->value.unaryExpr([](S v) {
    const double u = kSqrt2OverPi * (double(v) + kCubic * double(v) * double(v) * double(v));
    return S(std::tanh(u));
  });
  Mat<S> out = (S(0.5) * x->value.array() * (t.array() + S(1))).matrix();
  return make_op<S>(std::move(out), {x}, [x, t = std::move(t)](Node<S>& n) {
    if (!x->needs_grad) return;
    Mat<S> d(t.rows(), t.cols());
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        const double v = double(x->value(r, c));
        const double th = double(t(r, c));
        const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * v * v);
        d(r, c) = S(0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
      }
    }
    x->accumulate(n.grad.cwiseProduct(d));
  });
}

template <typename S>
Var<S> softmax_rows(const Var<S>& x) {
  Mat<S> v = x->value;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const S mx = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - mx).exp();
    v.row(r) /= v.row(r).sum();
  }
  Mat<S> out = v;
  return make_op<S>(std::move(out), {x}, [x, y = std::move(v)](Node<S>& n) {
    if (!x->needs_grad) return;
    Mat<S> g(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const S dot = n.grad.row(r).cwiseProduct(y.row(r)).sum();
      g.row(r) = y.row(r).cwiseProduct((n.grad.row(r).array() - dot).matrix());
    }
    x->accumulate(g);
  });
}

// LayerNorm over each row: gamma/beta are 1×C. Biased variance, standard
// backward.
template <typename S>
Var<S> layernorm_rows(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                      S eps = S(1e-5)) {
  const Eigen::Index R = x->value.rows(), C = x->value.cols();
  require(gamma->value.rows() == 1 && gamma->value.cols() == C, "layernorm: gamma shape");
  require(beta->value.rows() == 1 && beta->value.cols() == C, "layernorm: beta shape");
  Mat<S> xhat(R, C);
  Mat<S> inv_sigma(R, 1);
  for (Eigen::Index r = 0; r < R; ++r) {
    const S mu = x->value.row(r).mean();
    Eigen::RowVector<S, Eigen::Dynamic> centered = x->value.row(r).array() - mu;
    const S var = centered.squaredNorm() / S(C);
    const S is = S(1) / std::sqrt(var + eps);
    inv_sigma(r, 0) = is;
    xhat.row(r) = centered * is;
  }
  Mat<S> v(R, C);
  for (Eigen::Index r = 0; r < R; ++r) {
    v.row(r) = xhat.row(r).cwiseProduct(gamma->value.row(0)) + beta->value.row(0);
  }
  return make_op<S>(std::move(v), {x, gamma, beta},
                    [x, gamma, beta, xhat = std::move(xhat),
                     inv_sigma = std::move(inv_sigma)](Node<S>& n) {
    const Eigen::Index R = xhat.rows(), C = xhat.cols();
    if (gamma->needs_grad) gamma->accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
    if (beta->needs_grad) beta->accumulate(n.grad.colwise().sum());
    if (!x->needs_grad) return;
    Mat<S> gx(R, C);
    for (Eigen::Index r = 0; r < R; ++r) {
      Eigen::RowVector<S, Eigen::Dynamic> gy =
          n.grad.row(r).cwiseProduct(gamma->value.row(0));
      const S mean_gy = gy.mean();
      const S mean_gy_xhat = gy.cwiseProduct(xhat.row(r)).mean();
      gx.row(r) = inv_sigma(r, 0) *
                  (gy.array() - mean_gy - xhat.row(r).array() * mean_gy_xhat).matrix();
    }
    x->accumulate(gx);
  });
}

// Inverted dropout; identity (same node) when inactive so inference adds no op.
template <typename S>
Var<S> dropout(const Var<S>& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  require(p < 1.0, "dropout: p must be < 1");
  Mat<S> mask(x->value.rows(), x->value.cols());
  const S keep_inv = S(1.0 / (1.0 - p));
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) {
      mask(r, c) = rng.bernoulli(p) ? S(0) : keep_inv;
    }
  }
  Mat<S> v = x->value.cwiseProduct(mask);
  return make_op<S>(std::move(v), {x}, [x, mask = std::move(mask)](Node<S>& n) {
    if (x->needs_grad) x->accumulate(n.grad.cwiseProduct(mask));
  });
}

// Mean cross-entropy over rows whose target id is >= 0; fused with softmax.
// Returns 1×1. Errors when every row is masked.
template <typename S>
Var<S> cross_entropy_rows(const Var<S>& logits, std::vector<int> targets) {
  const Eigen::Index R = logits->value.rows();
  require(Eigen::Index(targets.size()) == R, "cross_entropy: target count != rows");
  Mat<S> probs = logits->value;
  int n_active = 0;
  S loss = S(0);
  for (Eigen::Index r = 0; r < R; ++r) {
    const S mx = probs.row(r).maxCoeff();
    probs.row(r) = (probs.row(r).array() - mx).exp();
    probs.row(r) /= probs.row(r).sum();
    const int t = targets[std::size_t(r)];
    if (t < 0) continue;
    require(t < logits->value.cols(), "cross_entropy: target out of range");
    ++n_active;
    loss -= std::log(std::max(probs(r, t), S(1e-30)));
  }
  require(n_active > 0, "cross_entropy: loss mask excludes all positions");
  loss /= S(n_active);
  Mat<S> v(1, 1);
  v(0, 0) = loss;
  return make_op<S>(std::move(v), {logits},
                    [logits, probs = std::move(probs), targets = std::move(targets),
                     n_active](Node<S>& n) {
    if (!logits->needs_grad) return;
    const S scale = n.grad(0, 0) / S(n_active);
    Mat<S> g = Mat<S>::Zero(probs.rows(), probs.cols());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const int t = targets[std::size_t(r)];
      if (t < 0) continue;
      g.row(r) = probs.row(r) * scale;
      g(r, t) -= scale;
    }
    logits->accumulate(g);
  });
}

// Weighted sum of 1×1 scalars (batch loss averaging).
template <typename S>
Var<S> weighted_sum(const std::vector<Var<S>>& xs, const std::vector<S>& w) {
  require(!xs.empty() && xs.size() == w.size(), "weighted_sum: size mismatch");
  Mat<S> v = Mat<S>::Zero(1, 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(xs[i]->value.size() == 1, "weighted_sum: non-scalar input");
    v(0, 0) += w[i] * xs[i]->value(0, 0);
  }
  return make_op<S>(std::move(v), xs, [xs, w](Node<S>& n) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i]->needs_grad) xs[i]->accumulate(n.grad * w[i]);
    }
  });
}

// ---- backward ----

// Reverse topological sweep from a scalar root. Iterative DFS so deep graphs
// cannot overflow the stack.
template <typename S>
void backward(const Var<S>& root) {
  require(root->value.size() == 1, "backward: root must be scalar");
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node<S>* child = node->parents[next_child].get();
      ++next_child;
      if (child->needs_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad = Mat<S>::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* node = *it;
    if (node->backprop && node->grad.size() != 0) node->backprop(*node);
  }
}

}  // namespace tlm::ag
