#include "tlm/fusion.hpp"

#include <string>
#include <vector>

namespace tlm {

void validate(const ProjectionConfig& config) {
  require(config.width_enc > 0, "projection config: width_enc must be positive");
  require(config.width_lm > 0, "projection config: width_lm must be positive");
  require(config.width_hidden >= 0,
          "projection config: width_hidden must be positive or 0 for the default");
}

namespace {

std::string activation_name(ProjectionConfig::Activation a) {
  switch (a) {
    case ProjectionConfig::Activation::gelu_exact: return "gelu";
    case ProjectionConfig::Activation::gelu_tanh: return "gelu_tanh";
    case ProjectionConfig::Activation::identity: return "identity";
  }
  throw Error("projection config: unknown activation");
}

ProjectionConfig::Activation activation_from_name(const std::string& name) {
  if (name == "gelu") return ProjectionConfig::Activation::gelu_exact;
  if (name == "gelu_tanh") return ProjectionConfig::Activation::gelu_tanh;
  if (name == "identity") return ProjectionConfig::Activation::identity;
  throw Error("projection config: unknown activation '" + name + "'");
}

}  // namespace

nlohmann::json to_json(const ProjectionConfig& config) {
  return {{"width_enc", config.width_enc},
          {"width_hidden", config.width_hidden},
          {"width_lm", config.width_lm},
          {"activation", activation_name(config.activation)}};
}

ProjectionConfig projection_config_from_json(const nlohmann::json& j) {
  ProjectionConfig config;
  config.width_enc = j.at("width_enc").get<int>();
  config.width_hidden = j.at("width_hidden").get<int>();
  config.width_lm = j.at("width_lm").get<int>();
  config.activation = activation_from_name(j.at("activation").get<std::string>());
  validate(config);
  return config;
}

namespace {

// Pushes one turn's tokens. Placeholder tokens in user turns expand to
// frames_per_video copies tagged with the next video index.
void push_turn(const Tokenizer& tok, const ChatTurn& turn, int frames_per_video,
               TokenizedPrompt& out, std::vector<bool>& loss_mask) {
  const bool user = turn.role == "user";
  const std::string prefix = user ? "USER:" : "ASSISTANT:";
  require(tok.has(prefix), "conversation: vocabulary lacks the " + prefix + " role prefix");
  const int role_id = tok.id_of(prefix);
  out.ids.push_back(role_id);
  out.video_slot.push_back(-1);
  loss_mask.push_back(false);

  for (int id : encode_text(tok, turn.text)) {
    if (id == tok.img_id) {
      require(user, "conversation: tactile placeholders are only allowed in user turns");
      for (int i = 0; i < frames_per_video; ++i) {
        out.ids.push_back(id);
        out.video_slot.push_back(out.num_videos);
        loss_mask.push_back(false);
      }
      ++out.num_videos;
      continue;
    }
    out.ids.push_back(id);
    out.video_slot.push_back(-1);
    loss_mask.push_back(!user);
  }
  if (!user) {
    out.ids.push_back(tok.eos_id);
    out.video_slot.push_back(-1);
    loss_mask.push_back(true);
  }
}

TokenizedPrompt encode_turns(const Tokenizer& tok, const std::vector<ChatTurn>& turns,
                             int frames_per_video, bool for_generation,
                             std::vector<bool>& loss_mask) {
  require(frames_per_video >= 1, "conversation: frames_per_video must be >= 1");
  require(!turns.empty(), "conversation: no turns");
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const std::string& role = turns[i].role;
    require(role == "user" || role == "assistant",
            "conversation: unknown role '" + role + "'");
    const bool expect_user = i % 2 == 0;
    require((role == "user") == expect_user,
            "conversation: turns must alternate starting with a user turn");
  }
  if (for_generation) {
    require(turns.back().role == "user",
            "conversation: a generation prompt must end with a user turn");
  } else {
    require(turns.back().role == "assistant",
            "conversation: the last turn must be an assistant reply");
  }

  TokenizedPrompt out;
  out.frames_per_video = frames_per_video;
  out.ids.push_back(tok.bos_id);
  out.video_slot.push_back(-1);
  loss_mask.push_back(false);
  for (const ChatTurn& turn : turns) {
    push_turn(tok, turn, frames_per_video, out, loss_mask);
  }
  if (for_generation) {
    require(tok.has("ASSISTANT:"),
            "conversation: vocabulary lacks the ASSISTANT: role prefix");
    out.ids.push_back(tok.id_of("ASSISTANT:"));
    out.video_slot.push_back(-1);
    loss_mask.push_back(false);
  }
  return out;
}

}  // namespace

TokenizedPrompt encode_conversation(const Tokenizer& tok,
                                    const std::vector<ChatTurn>& turns,
                                    int frames_per_video) {
  std::vector<bool> loss_mask;
  TokenizedPrompt out = encode_turns(tok, turns, frames_per_video, false, loss_mask);
  out.targets.assign(out.ids.size(), -1);
  for (std::size_t t = 0; t + 1 < out.ids.size(); ++t) {
    if (loss_mask[t + 1]) out.targets[t] = out.ids[t + 1];
  }
  return out;
}

TokenizedPrompt encode_generation_prompt(const Tokenizer& tok,
                                         const std::vector<ChatTurn>& turns,
                                         int frames_per_video) {
  std::vector<bool> loss_mask;
  return encode_turns(tok, turns, frames_per_video, true, loss_mask);
}

std::vector<std::string> conversation_texts(const std::vector<ConversationSample>& samples) {
  std::vector<std::string> texts = {"USER:", "ASSISTANT:"};
  texts.reserve(texts.size() + samples.size() * 4);
  for (const ConversationSample& sample : samples) {
    for (const ChatTurn& turn : sample.turns) texts.push_back(turn.text);
  }
  return texts;
}

}  // namespace tlm
