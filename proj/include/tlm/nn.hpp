#pragma once

// Layers, parameter registry, LoRA adapters, AdamW, and the cosine schedule.
// Row-vector convention throughout: activations are L×width, weights are
// d_in×d_out, biases 1×d_out.

#include <cstring>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tlm/autograd.hpp"

namespace tlm::nn {

using ag::Mat;
using ag::Var;

template <typename S>
Mat<S> randn(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = S(rng.normal(0.0, stddev));
  }
  return m;
}

// Named parameter registry. Insertion order is the canonical serialization
// order; prefixes ("enc.", "lm.block0.") select stage-freeze and LoRA sets.
template <typename S>
struct ParamStore {
  std::vector<std::pair<std::string, Var<S>>> items;
  std::unordered_map<std::string, std::size_t> index;

  Var<S> add(const std::string& name, Mat<S> init, bool trainable) {
    require(!index.count(name), "duplicate parameter: " + name);
    auto v = ag::leaf<S>(std::move(init), trainable, name);
    index.emplace(name, items.size());
    items.emplace_back(name, v);
    return v;
  }

  bool has(const std::string& name) const { return index.count(name) != 0; }

  Var<S> get(const std::string& name) const {
    auto it = index.find(name);
    require(it != index.end(), "unknown parameter: " + name);
    return items[it->second].second;
  }

  std::vector<Var<S>> trainable() const {
    std::vector<Var<S>> out;
    for (const auto& [name, v] : items) {
      if (v->trainable) out.push_back(v);
    }
    return out;
  }

  std::vector<Var<S>> with_prefix(const std::string& prefix) const {
    std::vector<Var<S>> out;
    for (const auto& [name, v] : items) {
      if (name.rfind(prefix, 0) == 0) out.push_back(v);
    }
    return out;
  }

  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [name, v] : items) {
      if (name.rfind(prefix, 0) == 0) {
        v->trainable = trainable;
        v->needs_grad = trainable;
      }
    }
  }

  void set_all_trainable(bool trainable) { set_trainable("", trainable); }

  // Drops every parameter whose name satisfies pred and reindexes the rest.
  template <typename Pred>
  void remove_matching(Pred pred) {
    std::vector<std::pair<std::string, Var<S>>> kept;
    kept.reserve(items.size());
    for (auto& item : items) {
      if (!pred(item.first)) kept.push_back(std::move(item));
    }
    items = std::move(kept);
    index.clear();
    for (std::size_t i = 0; i < items.size(); ++i) index.emplace(items[i].first, i);
  }

  // Order-independent content hash of every parameter under a prefix.
  std::uint64_t hash_prefix(const std::string& prefix) const {
    std::map<std::string, Var<S>> sorted;
    for (const auto& [name, v] : items) {
      if (name.rfind(prefix, 0) == 0) sorted.emplace(name, v);
    }
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, v] : sorted) {
      h = fnv1a(name, h);
      h = fnv1a(v->value.data(), sizeof(S) * std::size_t(v->value.size()), h);
    }
    return h;
  }
};

// Low-rank adapter for one weight matrix. Spec shapes: A is r×d_in, B is
// d_out×r, update (alpha/r)·B·A applied to the column-convention view, i.e.
// y += scale · (x·Aᵀ)·Bᵀ here.
template <typename S>
struct LoRA {
  Var<S> A, B;
  S scaling;
  double dropout_p = 0.0;
};

template <typename S>
struct Linear {
  Var<S> W, b;
  std::shared_ptr<LoRA<S>> lora;

  Eigen::Index d_in() const { return W->value.rows(); }
  Eigen::Index d_out() const { return W->value.cols(); }

  Var<S> operator()(const Var<S>& x, Rng* lora_rng = nullptr,
                    bool training = false) const {
    Var<S> y = ag::add_rowvec(ag::matmul(x, W), b);
    if (lora) {
      Var<S> xa = x;
      if (training && lora->dropout_p > 0.0) {
        require(lora_rng != nullptr, "LoRA dropout requires an rng");
        xa = ag::dropout(x, lora->dropout_p, *lora_rng, training);
      }
      Var<S> delta = ag::matmul_nt(ag::matmul_nt(xa, lora->A), lora->B);
      y = ag::add(y, ag::scale(delta, lora->scaling));
    }
    return y;
  }

  // Folds the adapter into W (W += scale·(B·A)ᵀ) and removes it.
  void merge_lora() {
    require(bool(lora), "merge_lora: no adapter attached");
    W->value += (lora->B->value * lora->A->value).transpose() * lora->scaling;
    lora.reset();
  }
};

template <typename S>
Linear<S> make_linear(ParamStore<S>& ps, const std::string& name, Eigen::Index d_in,
                      Eigen::Index d_out, double init_std, Rng& rng,
                      bool trainable = true) {
  Linear<S> lin;
  lin.W = ps.add(name + ".W", randn<S>(d_in, d_out, init_std, rng), trainable);
  lin.b = ps.add(name + ".b", Mat<S>::Zero(1, d_out), trainable);
  return lin;
}

// Attaches a zero-initialized adapter; the wrapped output equals the base
// output until B receives gradient updates.
template <typename S>
void attach_lora(ParamStore<S>& ps, Linear<S>& lin, const std::string& name, int r,
                 double alpha, double dropout_p, Rng& rng) {
  require(r >= 1, "lora: rank must be >= 1");
  const auto d_in = lin.d_in(), d_out = lin.d_out();
  require(r <= std::min(d_in, d_out),
          "lora: rank " + std::to_string(r) + " exceeds min(d_in, d_out) of " + name);
  auto adapter = std::make_shared<LoRA<S>>();
  adapter->A = ps.add(name + ".lora_A", randn<S>(r, d_in, 1.0 / std::sqrt(double(r)), rng),
                      true);
  adapter->B = ps.add(name + ".lora_B", Mat<S>::Zero(d_out, r), true);
  adapter->scaling = S(alpha / double(r));
  adapter->dropout_p = dropout_p;
  lin.lora = adapter;
}

template <typename S>
struct LayerNorm {
  Var<S> gamma, beta;
  Var<S> operator()(const Var<S>& x) const { return ag::layernorm_rows(x, gamma, beta); }
};

template <typename S>
LayerNorm<S> make_layernorm(ParamStore<S>& ps, const std::string& name, Eigen::Index width,
                            bool trainable = true) {
  LayerNorm<S> ln;
  ln.gamma = ps.add(name + ".gamma", Mat<S>::Ones(1, width), trainable);
  ln.beta = ps.add(name + ".beta", Mat<S>::Zero(1, width), trainable);
  return ln;
}

// Additive causal mask: 0 on/below the diagonal, large negative above.
template <typename S>
Mat<S> causal_mask(Eigen::Index n) {
  Mat<S> m = Mat<S>::Zero(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = r + 1; c < n; ++c) m(r, c) = S(-1e30);
  }
  return m;
}

template <typename S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  int heads = 1;

  Var<S> operator()(const Var<S>& x, bool causal, Rng* lora_rng = nullptr,
                    bool training = false) const {
    const Eigen::Index width = wq.d_out();
    require(width % heads == 0, "attention: width not divisible by heads");
    const Eigen::Index dh = width / heads;
    const Var<S> q = wq(x, lora_rng, training);
    const Var<S> k = wk(x, lora_rng, training);
    const Var<S> v = wv(x, lora_rng, training);
    const S inv_sqrt_dh = S(1.0 / std::sqrt(double(dh)));
    Var<S> mask;
    if (causal) mask = ag::constant<S>(causal_mask<S>(x->value.rows()));
    std::vector<Var<S>> outs;
    outs.reserve(std::size_t(heads));
    for (int h = 0; h < heads; ++h) {
      const Var<S> qh = ag::slice_cols(q, h * dh, dh);
      const Var<S> kh = ag::slice_cols(k, h * dh, dh);
      const Var<S> vh = ag::slice_cols(v, h * dh, dh);
      Var<S> scores = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt_dh);
      if (causal) scores = ag::add(scores, mask);
      outs.push_back(ag::matmul(ag::softmax_rows(scores), vh));
    }
    return wo(ag::concat_cols(outs), lora_rng, training);
  }
};

// Pre-LN transformer block with a GELU MLP.
template <typename S>
struct Block {
  LayerNorm<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  Linear<S> fc1, fc2;

  Var<S> operator()(const Var<S>& x, bool causal, Rng* lora_rng = nullptr,
                    bool training = false) const {
    Var<S> h = ag::add(x, attn(ln1(x), causal, lora_rng, training));
    Var<S> m = fc2(ag::gelu(fc1(ln2(h), lora_rng, training)), lora_rng, training);
    return ag::add(h, m);
  }
};

template <typename S>
Block<S> make_block(ParamStore<S>& ps, const std::string& name, Eigen::Index width,
                    int heads, Eigen::Index mlp_hidden, double init_std, Rng& rng) {
  Block<S> blk;
  blk.ln1 = make_layernorm<S>(ps, name + ".ln1", width);
  blk.ln2 = make_layernorm<S>(ps, name + ".ln2", width);
  blk.attn.heads = heads;
  blk.attn.wq = make_linear<S>(ps, name + ".attn.wq", width, width, init_std, rng);
  blk.attn.wk = make_linear<S>(ps, name + ".attn.wk", width, width, init_std, rng);
  blk.attn.wv = make_linear<S>(ps, name + ".attn.wv", width, width, init_std, rng);
  blk.attn.wo = make_linear<S>(ps, name + ".attn.wo", width, width, init_std, rng);
  blk.fc1 = make_linear<S>(ps, name + ".mlp.fc1", width, mlp_hidden, init_std, rng);
  blk.fc2 = make_linear<S>(ps, name + ".mlp.fc2", mlp_hidden, width, init_std, rng);
  return blk;
}

// lr multiplier over [0, total_steps): 1 at step 0, 0 at the final step.
inline double cosine_factor(int step, int total_steps) {
  require(step >= 0 && step < total_steps, "cosine_factor: step out of range");
  if (total_steps <= 1) return 1.0;
  const double pi = 3.14159265358979323846;
  return 0.5 * (1.0 + std::cos(pi * double(step) / double(total_steps - 1)));
}

template <typename S>
struct AdamW {
  struct Group {
    std::vector<Var<S>> params;
    double lr = 1e-3;
  };
  std::vector<Group> groups;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  long t = 0;

  void zero_grad() {
    for (auto& g : groups) {
      for (auto& p : g.params) p->zero_grad();
    }
  }

  void step(double lr_factor = 1.0) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (auto& g : groups) {
      const double lr = g.lr * lr_factor;
      for (auto& p : g.params) {
        if (p->grad.size() == 0) continue;  // parameter unused this step
        auto& [m, v] = state_[p.get()];
        if (m.size() == 0) {
          m = Mat<S>::Zero(p->value.rows(), p->value.cols());
          v = Mat<S>::Zero(p->value.rows(), p->value.cols());
        }
        m = S(beta1) * m + S(1.0 - beta1) * p->grad;
        v = S(beta2) * v + S(1.0 - beta2) * p->grad.cwiseProduct(p->grad);
        const Mat<S> mhat = m / S(bc1);
        const Mat<S> vhat = v / S(bc2);
        p->value -= S(lr) * (mhat.array() / (vhat.array().sqrt() + S(eps))).matrix();
        if (weight_decay != 0.0) p->value -= S(lr * weight_decay) * p->value;
      }
    }
  }

private:
  std::unordered_map<ag::Node<S>*, std::pair<Mat<S>, Mat<S>>> state_;
};

}  // namespace tlm::nn
