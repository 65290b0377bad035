#include "tlm/lm.hpp"

#include <algorithm>
#include <cmath>

namespace tlm {

void validate(const DecoderLMConfig& c) {
  require(c.vocab_size >= 4, "lm config: vocab_size must cover the four special tokens");
  require(c.width >= 1, "lm config: width must be positive");
  require(c.depth >= 1, "lm config: depth must be positive");
  require(c.heads >= 1, "lm config: heads must be positive");
  require(c.width % c.heads == 0, "lm config: width " + std::to_string(c.width) +
                                      " is not divisible by heads " + std::to_string(c.heads));
  require(c.mlp_ratio >= 1, "lm config: mlp_ratio must be positive");
  require(c.context_length >= 1, "lm config: context_length must be positive");
}

nlohmann::json to_json(const DecoderLMConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"width", c.width},
          {"depth", c.depth},           {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},   {"context_length", c.context_length}};
}

DecoderLMConfig lm_config_from_json(const nlohmann::json& j) {
  DecoderLMConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.width = j.at("width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.context_length = j.at("context_length").get<int>();
  validate(c);
  return c;
}

namespace {

using RowF = Eigen::RowVectorXf;

// Plain-Eigen mirrors of the graph ops; must match their forward definitions
// exactly so cached decoding reproduces the training forward.

RowF apply_linear(const nn::Linear<float>& lin, const RowF& x) {
  RowF y = x * lin.W->value + lin.b->value;
  if (lin.lora) {
    y += lin.lora->scaling *
         ((x * lin.lora->A->value.transpose()) * lin.lora->B->value.transpose());
  }
  return y;
}

RowF apply_layernorm(const nn::LayerNorm<float>& ln, const RowF& x) {
  const float mu = x.mean();
  RowF centered = x.array() - mu;
  const float var = centered.squaredNorm() / float(x.size());
  RowF xhat = centered / std::sqrt(var + 1e-5f);
  return xhat.cwiseProduct(ln.gamma->value.row(0)) + ln.beta->value.row(0);
}

RowF apply_gelu(const RowF& x) {
  return x.unaryExpr([](float t) {
    return float(0.5 * double(t) * (1.0 + std::erf(double(t) * 0.70710678118654752440)));
  });
}

}  // namespace

Eigen::RowVectorXf lm_step(const DecoderLM<float>& lm, KVCache& cache,
                           const Eigen::RowVectorXf& embedding_row) {
  require(embedding_row.size() == lm.config.width, "lm_step: embedding width mismatch");
  require(cache.length < lm.config.context_length,
          "lm: generation exceeded context length " + std::to_string(lm.config.context_length));
  if (cache.layers.empty()) cache.layers.resize(std::size_t(lm.config.depth));
  require(int(cache.layers.size()) == lm.config.depth, "lm_step: cache depth mismatch");

  const int heads = lm.config.heads;
  const Eigen::Index w = lm.config.width;
  const Eigen::Index dh = w / heads;
  const float inv_sqrt_dh = float(1.0 / std::sqrt(double(dh)));
  const int pos = cache.length;

  RowF x = embedding_row + lm.pos->value.row(pos);
  for (int i = 0; i < lm.config.depth; ++i) {
    const auto& blk = lm.blocks[std::size_t(i)];
    auto& layer = cache.layers[std::size_t(i)];

    RowF h = apply_layernorm(blk.ln1, x);
    RowF q = apply_linear(blk.attn.wq, h);
    RowF k = apply_linear(blk.attn.wk, h);
    RowF v = apply_linear(blk.attn.wv, h);
    layer.k.conservativeResize(pos + 1, w);
    layer.v.conservativeResize(pos + 1, w);
    layer.k.row(pos) = k;
    layer.v.row(pos) = v;

    RowF attn_out(w);
    for (int hd = 0; hd < heads; ++hd) {
      const auto qh = q.segment(hd * dh, dh);
      const auto kh = layer.k.topRows(pos + 1).middleCols(hd * dh, dh);
      const auto vh = layer.v.topRows(pos + 1).middleCols(hd * dh, dh);
      Eigen::VectorXf scores = (kh * qh.transpose()) * inv_sqrt_dh;
      const float mx = scores.maxCoeff();
      Eigen::VectorXf e = (scores.array() - mx).exp();
      e /= e.sum();
      attn_out.segment(hd * dh, dh) = e.transpose() * vh;
    }
    x += apply_linear(blk.attn.wo, attn_out);

    RowF m = apply_linear(blk.fc2, apply_gelu(apply_linear(blk.fc1, apply_layernorm(blk.ln2, x))));
    x += m;
  }
  cache.length = pos + 1;
  return apply_linear(lm.head, apply_layernorm(lm.out_ln, x));
}

GenerationResult generate(const DecoderLM<float>& lm, const Tokenizer& tok,
                          const Eigen::MatrixXf& prompt_embeddings,
                          const GenerationParams& params, Rng* rng) {
  require(prompt_embeddings.rows() >= 1, "generate: empty prompt");
  require(params.max_new_tokens >= 1, "generate: max_new_tokens must be positive");
  if (params.mode == GenerationParams::Mode::sample) {
    require(rng != nullptr, "generate: sampling requires an rng");
    require(params.temperature > 0.0, "generate: temperature must be positive");
  }

  KVCache cache;
  RowF logits;
  for (Eigen::Index r = 0; r < prompt_embeddings.rows(); ++r) {
    logits = lm_step(lm, cache, prompt_embeddings.row(r));
  }

  GenerationResult out;
  for (int step = 0; step < params.max_new_tokens; ++step) {
    int next = 0;
    if (params.mode == GenerationParams::Mode::greedy) {
      Eigen::Index arg = 0;
      logits.maxCoeff(&arg);
      next = int(arg);
    } else {
      Eigen::RowVectorXd scaled = logits.cast<double>() / params.temperature;
      const double mx = scaled.maxCoeff();
      Eigen::RowVectorXd p = (scaled.array() - mx).exp();
      p /= p.sum();
      double u = rng->uniform();
      double acc = 0.0;
      next = int(p.size()) - 1;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) {
          next = int(i);
          break;
        }
      }
    }
    if (next == tok.eos_id) {
      out.stopped = true;
      break;
    }
    out.ids.push_back(next);
    out.text = decode_text(tok, out.ids);
    bool hit_stop = false;
    for (const auto& s : params.stop) {
      const auto at = out.text.find(s);
      if (!s.empty() && at != std::string::npos) {
        out.text = out.text.substr(0, at);
        hit_stop = true;
        break;
      }
    }
    if (hit_stop) {
      out.stopped = true;
      break;
    }
    if (step + 1 < params.max_new_tokens) {
      logits = lm_step(lm, cache, lm.embed->value.row(next));
    }
  }
  return out;
}

}  // namespace tlm
