#pragma once

// Bridges the tactile encoder and the decoder: a two-layer projection into
// the decoder's embedding width, vocabulary extension with the tactile
// marker tokens, conversation-to-token encoding, and splicing projected
// frame embeddings into the token embedding sequence.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlm/lm.hpp"
#include "tlm/nn.hpp"
#include "tlm/tasks.hpp"
#include "tlm/tokenizer.hpp"

namespace tlm {

struct ProjectionConfig {
  int width_enc = 0;
  int width_hidden = 0;  // 0 means width_lm
  int width_lm = 0;

  // identity exists so tests can check the two linears in isolation.
  enum class Activation { gelu_exact, gelu_tanh, identity };
  Activation activation = Activation::gelu_exact;

  int hidden() const { return width_hidden > 0 ? width_hidden : width_lm; }
};

void validate(const ProjectionConfig& config);
nlohmann::json to_json(const ProjectionConfig& config);
ProjectionConfig projection_config_from_json(const nlohmann::json& j);

// Two linears with one nonlinearity between them, applied per frame row.
template <typename S>
struct Projection {
  ProjectionConfig config;
  nn::ParamStore<S> params;
  nn::Linear<S> fc1;  // width_enc -> hidden
  nn::Linear<S> fc2;  // hidden -> width_lm
};

template <typename S>
Projection<S> make_projection(const ProjectionConfig& config, std::uint64_t seed) {
  validate(config);
  Projection<S> proj;
  proj.config = config;
  Rng rng(seed);
  const double std0 = 0.02;
  proj.fc1 = nn::make_linear<S>(proj.params, "proj.fc1", config.width_enc,
                                config.hidden(), std0, rng);
  proj.fc2 = nn::make_linear<S>(proj.params, "proj.fc2", config.hidden(),
                                config.width_lm, std0, rng);
  return proj;
}

// frames is k x width_enc; the result is k x width_lm.
template <typename S>
ag::Var<S> project(const Projection<S>& proj, const ag::Var<S>& frames) {
  require(int(frames->value.cols()) == proj.config.width_enc,
          "project: frame embeddings have width " +
              std::to_string(frames->value.cols()) + ", projection expects " +
              std::to_string(proj.config.width_enc));
  ag::Var<S> h = proj.fc1(frames);
  switch (proj.config.activation) {
    case ProjectionConfig::Activation::gelu_exact: h = ag::gelu(h); break;
    case ProjectionConfig::Activation::gelu_tanh: h = ag::gelu_tanh(h); break;
    case ProjectionConfig::Activation::identity: break;
  }
  return proj.fc2(h);
}

// Appends two marker embedding rows, both initialized to the mean of the
// base table, and registers the marker tokens with the tokenizer. The new
// rows are trainable; the base table keeps its own trainable flag.
template <typename S>
void extend_vocab(DecoderLM<S>& lm, Tokenizer& tok) {
  require(!lm.has_markers(), "extend-vocab: model already has marker embeddings");
  require(!tok.has_markers(), "extend-vocab: tokenizer already has marker tokens");
  require(tok.size() == lm.config.vocab_size,
          "extend-vocab: tokenizer has " + std::to_string(tok.size()) +
              " tokens but the model vocabulary is " +
              std::to_string(lm.config.vocab_size));
  nn::Mat<S> rows(2, lm.config.width);
  rows.row(0) = lm.embed->value.colwise().mean();
  rows.row(1) = rows.row(0);
  lm.markers = lm.params.add("lm.embed.markers", std::move(rows), true);
  const int s = tok.add_token(kTactStart);
  const int e = tok.add_token(kTactEnd);
  require(s == lm.config.vocab_size && e == lm.config.vocab_size + 1,
          "extend-vocab: marker ids landed at " + std::to_string(s) + "/" +
              std::to_string(e) + ", expected the two slots past the base vocabulary");
}

// A conversation rendered to token ids. Each tactile placeholder in a user
// turn is pre-expanded to frames_per_video copies of the placeholder token;
// video_slot marks those positions with the video's index (order of
// appearance), -1 elsewhere. targets[t] is the id to predict after position
// t (-1 where no loss applies); it is empty for generation prompts.
struct TokenizedPrompt {
  std::vector<int> ids;
  std::vector<int> targets;
  std::vector<int> video_slot;
  int frames_per_video = 0;
  int num_videos = 0;
};

// Wire format: <s>, then per turn a role prefix token ("USER:" or
// "ASSISTANT:") followed by the turn text; assistant turns close with </s>.
// Loss covers assistant text tokens and the closing </s> only.
TokenizedPrompt encode_conversation(const Tokenizer& tok,
                                    const std::vector<ChatTurn>& turns,
                                    int frames_per_video);

// Same format, but the turn list ends with a user turn and a trailing
// "ASSISTANT:" token primes the reply. No targets.
TokenizedPrompt encode_generation_prompt(const Tokenizer& tok,
                                         const std::vector<ChatTurn>& turns,
                                         int frames_per_video);

// Every string the wire format can emit for these samples, role prefixes
// included; feed to build_tokenizer so the base vocabulary covers them.
std::vector<std::string> conversation_texts(const std::vector<ConversationSample>& samples);

struct SpliceSpan {
  int start = 0;  // first projected row
  int end = 0;    // one past the last projected row
  int video = 0;  // index into the bound embeddings
};

template <typename S>
struct Spliced {
  ag::Var<S> embeddings;  // ids.size() x width_lm
  std::vector<SpliceSpan> spans;
};

// Replaces each placeholder run with the bound projected embeddings. Text
// rows come straight from the embedding table; the marker tokens stay
// ordinary text rows just outside each span. Placeholder tokens with no
// video_slot mark (text-only pretraining) embed as ordinary text.
template <typename S>
Spliced<S> splice(const DecoderLM<S>& lm, const TokenizedPrompt& prompt,
                  const std::vector<ag::Var<S>>& videos) {
  const std::size_t n = prompt.ids.size();
  require(n > 0, "splice: empty prompt");
  require(prompt.video_slot.size() == n,
          "splice: video_slot length does not match the token sequence");
  require(int(videos.size()) >= prompt.num_videos,
          "splice: video " + std::to_string(videos.size()) +
              " has no bound embedding");
  require(int(videos.size()) <= prompt.num_videos,
          "splice: binding " + std::to_string(prompt.num_videos) +
              " has no tactile placeholder");
  for (std::size_t v = 0; v < videos.size(); ++v) {
    require(int(videos[v]->value.rows()) == prompt.frames_per_video,
            "splice: video " + std::to_string(v) + " supplies " +
                std::to_string(videos[v]->value.rows()) + " rows, expected " +
                std::to_string(prompt.frames_per_video));
    require(int(videos[v]->value.cols()) == lm.config.width,
            "splice: video embedding width " +
                std::to_string(videos[v]->value.cols()) +
                " does not match the model width " +
                std::to_string(lm.config.width));
  }

  require(videos.empty() || lm.has_markers(),
          "splice: the model has no marker embeddings; extend the vocabulary first");
  const int tact_start_id = lm.config.vocab_size;
  const int tact_end_id = lm.config.vocab_size + 1;

  ag::Var<S> table = embedding_table(lm);
  std::vector<ag::Var<S>> segments;
  std::vector<SpliceSpan> spans;
  std::vector<bool> seen(videos.size(), false);
  int expected_slot = 0;
  std::size_t t = 0;
  while (t < n) {
    if (prompt.video_slot[t] < 0) {
      std::size_t b = t;
      std::vector<int> text_ids;
      while (b < n && prompt.video_slot[b] < 0) text_ids.push_back(prompt.ids[b++]);
      segments.push_back(ag::gather_rows(table, text_ids));
      t = b;
      continue;
    }
    const int slot = prompt.video_slot[t];
    require(slot < int(videos.size()),
            "splice: video_slot " + std::to_string(slot) +
                " exceeds the placeholder count");
    require(!seen[std::size_t(slot)],
            "splice: tactile span for video " + std::to_string(slot) + " is split");
    require(slot == expected_slot, "splice: tactile spans out of order");
    seen[std::size_t(slot)] = true;
    ++expected_slot;
    std::size_t b = t;
    while (b < n && prompt.video_slot[b] == slot) {
      require(prompt.ids[b] == kImgTokenId, "splice: tactile span for video " +
                                                std::to_string(slot) +
                                                " covers a non-placeholder token");
      ++b;
    }
    require(int(b - t) == prompt.frames_per_video,
            "splice: tactile span for video " + std::to_string(slot) + " has " +
                std::to_string(b - t) + " positions, expected " +
                std::to_string(prompt.frames_per_video));
    require(t > 0 && prompt.ids[t - 1] == tact_start_id,
            "splice: tactile span for video " + std::to_string(slot) +
                " must follow the opening marker token");
    require(b < n && prompt.ids[b] == tact_end_id,
            "splice: tactile span for video " + std::to_string(slot) +
                " must precede the closing marker token");
    segments.push_back(videos[std::size_t(slot)]);
    spans.push_back({int(t), int(b), slot});
    t = b;
  }

  Spliced<S> out;
  out.embeddings = segments.size() == 1 ? segments[0] : ag::concat_rows<S>(segments);
  out.spans = std::move(spans);
  return out;
}

}  // namespace tlm
