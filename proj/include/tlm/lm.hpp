#pragma once

// Decoder-only causal transformer with learned positions, an untied output
// head, and optional low-rank adapters. The embedding table is split into the
// base vocabulary and the two tactile marker rows so training stages can
// freeze them independently. Templated on scalar for gradient checks.

#include <map>
#include <string>
#include <vector>

#include "tlm/checkpoint.hpp"
#include "tlm/nn.hpp"
#include "tlm/tokenizer.hpp"

namespace tlm {

struct DecoderLMConfig {
  int vocab_size = 0;  // base vocabulary; markers sit past it after extend_vocab
  int width = 64;
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int context_length = 512;
};

void validate(const DecoderLMConfig& config);
nlohmann::json to_json(const DecoderLMConfig& config);
DecoderLMConfig lm_config_from_json(const nlohmann::json& j);

template <typename S>
struct DecoderLM {
  DecoderLMConfig config;
  nn::ParamStore<S> params;

  ag::Var<S> embed;    // vocab_size x width
  ag::Var<S> markers;  // 2 x width once extended, null before
  ag::Var<S> pos;      // context_length x width
  std::vector<nn::Block<S>> blocks;
  nn::LayerNorm<S> out_ln;
  nn::Linear<S> head;  // width -> vocab_size; markers are input-only tokens

  bool has_markers() const { return markers != nullptr; }
  int input_vocab() const { return config.vocab_size + (has_markers() ? 2 : 0); }
};

template <typename S>
DecoderLM<S> make_decoder_lm(const DecoderLMConfig& config, std::uint64_t seed) {
  validate(config);
  DecoderLM<S> lm;
  lm.config = config;
  Rng rng(seed);
  const double std0 = 0.02;
  const Eigen::Index w = config.width;
  auto& ps = lm.params;
  lm.embed = ps.add("lm.embed.base", nn::randn<S>(config.vocab_size, w, std0, rng), true);
  lm.pos = ps.add("lm.pos", nn::randn<S>(config.context_length, w, std0, rng), true);
  for (int i = 0; i < config.depth; ++i) {
    lm.blocks.push_back(nn::make_block<S>(ps, "lm.block" + std::to_string(i), w, config.heads,
                                          config.mlp_ratio * w, std0, rng));
  }
  lm.out_ln = nn::make_layernorm<S>(ps, "lm.out_ln", w);
  lm.head = nn::make_linear<S>(ps, "lm.head", w, config.vocab_size, std0, rng);
  return lm;
}

// Full input-embedding table (base plus marker rows) as one graph node.
template <typename S>
ag::Var<S> embedding_table(const DecoderLM<S>& lm) {
  if (!lm.has_markers()) return lm.embed;
  return ag::concat_rows<S>({lm.embed, lm.markers});
}

template <typename S>
ag::Var<S> embed_ids(const DecoderLM<S>& lm, const std::vector<int>& ids) {
  for (const int id : ids) {
    require(id >= 0 && id < lm.input_vocab(),
            "lm: token id " + std::to_string(id) + " outside vocabulary of " +
                std::to_string(lm.input_vocab()));
  }
  return ag::gather_rows(embedding_table(lm), ids);
}

// Causal forward over an already-spliced embedding sequence -> L x vocab logits.
template <typename S>
ag::Var<S> decoder_logits(const DecoderLM<S>& lm, const ag::Var<S>& embeddings,
                          const std::string& sample_label = {}, Rng* lora_rng = nullptr,
                          bool training = false) {
  const Eigen::Index L = embeddings->value.rows();
  require(L >= 1, "lm: empty input sequence");
  require(L <= lm.config.context_length,
          "lm: sequence of " + std::to_string(L) + " tokens exceeds context length " +
              std::to_string(lm.config.context_length) +
              (sample_label.empty() ? std::string() : " (sample " + sample_label + ")"));
  require(embeddings->value.cols() == lm.config.width, "lm: embedding width mismatch");
  ag::Var<S> x = ag::add(embeddings, ag::slice_rows(lm.pos, 0, L));
  for (const auto& block : lm.blocks) x = block(x, /*causal=*/true, lora_rng, training);
  return lm.head(lm.out_ln(x), lora_rng, training);
}

// Mean next-token cross-entropy over positions whose target id is >= 0.
// targets[t] is the token to predict AT position t (i.e. the id of position
// t+1's token), so callers mask by passing -1.
template <typename S>
ag::Var<S> lm_loss(const DecoderLM<S>& lm, const ag::Var<S>& embeddings,
                   const std::vector<int>& targets, const std::string& sample_label = {},
                   Rng* lora_rng = nullptr, bool training = false) {
  require(Eigen::Index(targets.size()) == embeddings->value.rows(),
          "lm: targets length does not match sequence length" +
              (sample_label.empty() ? std::string() : " (sample " + sample_label + ")"));
  ag::Var<S> logits = decoder_logits(lm, embeddings, sample_label, lora_rng, training);
  return ag::cross_entropy_rows(logits, targets);
}

// ---- LoRA ----

// Matrix slots that accept adapters, in a stable order.
template <typename S>
std::vector<std::pair<std::string, nn::Linear<S>*>> lora_slots(DecoderLM<S>& lm) {
  std::vector<std::pair<std::string, nn::Linear<S>*>> out;
  for (std::size_t i = 0; i < lm.blocks.size(); ++i) {
    const std::string p = "lm.block" + std::to_string(i);
    auto& b = lm.blocks[i];
    out.emplace_back(p + ".attn.wq", &b.attn.wq);
    out.emplace_back(p + ".attn.wk", &b.attn.wk);
    out.emplace_back(p + ".attn.wv", &b.attn.wv);
    out.emplace_back(p + ".attn.wo", &b.attn.wo);
    out.emplace_back(p + ".mlp.fc1", &b.fc1);
    out.emplace_back(p + ".mlp.fc2", &b.fc2);
  }
  out.emplace_back("lm.head", &lm.head);
  return out;
}

// Every attention and MLP matrix; the head is configuration, not default.
template <typename S>
std::vector<std::string> default_lora_targets(const DecoderLM<S>& lm) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < lm.blocks.size(); ++i) {
    const std::string p = "lm.block" + std::to_string(i);
    for (const char* s : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo", ".mlp.fc1", ".mlp.fc2"})
      out.push_back(p + s);
  }
  return out;
}

struct LoRAConfig {
  int r = 128;
  double alpha = 256.0;
  double dropout = 0.05;
  std::vector<std::string> targets;  // empty -> default target set
};

inline nlohmann::json to_json(const LoRAConfig& c) {
  return {{"r", c.r}, {"alpha", c.alpha}, {"dropout", c.dropout}, {"targets", c.targets}};
}

inline LoRAConfig lora_config_from_json(const nlohmann::json& j) {
  LoRAConfig c;
  c.r = j.at("r").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.targets = j.value("targets", std::vector<std::string>{});
  return c;
}

// Attaches zero-initialized adapters; base weights freeze while adapters are
// active, so a freshly wrapped model computes exactly the base outputs.
template <typename S>
void lora_wrap(DecoderLM<S>& lm, const LoRAConfig& config, Rng& rng) {
  require(config.r >= 1, "lora: rank must be >= 1");
  const auto slots = lora_slots(lm);
  std::vector<std::string> targets =
      config.targets.empty() ? default_lora_targets(lm) : config.targets;
  for (const auto& name : targets) {
    nn::Linear<S>* lin = nullptr;
    for (const auto& [slot_name, slot] : slots) {
      if (slot_name == name) {
        lin = slot;
        break;
      }
    }
    require(lin != nullptr, "lora: unknown target matrix: " + name);
    require(!lin->lora, "lora: target already wrapped: " + name);
    nn::attach_lora(lm.params, *lin, name, config.r, config.alpha, config.dropout, rng);
    lm.params.set_trainable(name + ".W", false);
    lm.params.set_trainable(name + ".b", false);
  }
}

// Folds every adapter into its base weight and drops the adapter parameters.
template <typename S>
void merge_lora(DecoderLM<S>& lm) {
  int merged = 0;
  for (auto& [name, lin] : lora_slots(lm)) {
    if (!lin->lora) continue;
    lin->merge_lora();
    lm.params.set_trainable(name + ".W", true);
    lm.params.set_trainable(name + ".b", true);
    ++merged;
  }
  require(merged > 0, "merge-lora: model has no adapters");
  lm.params.remove_matching(
      [](const std::string& n) { return n.ends_with(".lora_A") || n.ends_with(".lora_B"); });
}

// ---- generation ----

struct GenerationParams {
  enum class Mode { greedy, sample };
  Mode mode = Mode::greedy;
  int max_new_tokens = 128;
  double temperature = 1.0;
  std::vector<std::string> stop;  // decoded-text stop sequences; eos always stops
};

struct GenerationResult {
  std::string text;
  std::vector<int> ids;  // generated tokens, stop token excluded
  bool stopped = false;  // eos or stop sequence hit before the budget
};

// Incremental per-layer key/value store for single-row decoding steps.
struct KVCache {
  struct Layer {
    Eigen::MatrixXf k, v;  // grows one row per step
  };
  std::vector<Layer> layers;
  int length = 0;
};

// Appends one embedding row to the cache and returns that position's logits.
Eigen::RowVectorXf lm_step(const DecoderLM<float>& lm, KVCache& cache,
                           const Eigen::RowVectorXf& embedding_row);

// Greedy or temperature sampling from a prompt given as embedding rows
// (text and tactile content alike). Generated tokens continue from the base
// embedding table. rng is required in sample mode.
GenerationResult generate(const DecoderLM<float>& lm, const Tokenizer& tok,
                          const Eigen::MatrixXf& prompt_embeddings,
                          const GenerationParams& params, Rng* rng = nullptr);

}  // namespace tlm
