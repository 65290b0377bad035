#include "tlm/tokenizer.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

namespace tlm {

int Tokenizer::id_of(const std::string& token) const {
  const auto it = ids.find(token);
  return it == ids.end() ? unk_id : it->second;
}

int Tokenizer::add_token(const std::string& token) {
  require(!has(token), "tokenizer: token already present: " + token);
  const int id = size();
  ids.emplace(token, id);
  tokens.push_back(token);
  if (token == kTactStart) tact_start_id = id;
  if (token == kTactEnd) tact_end_id = id;
  return id;
}

namespace {

// Splits one space-free word around embedded marker strings.
void emit_word(const std::string& word, std::vector<std::string>& out) {
  static const std::string markers[3] = {kTactStart, kTactEnd, kImgTokens};
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t best = std::string::npos;
    const std::string* best_marker = nullptr;
    for (const auto& m : markers) {
      const std::size_t at = word.find(m, pos);
      if (at < best) {
        best = at;
        best_marker = &m;
      }
    }
    if (best_marker == nullptr) {
      out.push_back(word.substr(pos));
      return;
    }
    if (best > pos) out.push_back(word.substr(pos, best - pos));
    out.push_back(*best_marker);
    pos = best + best_marker->size();
  }
}

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  for (const char c : text) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      if (!word.empty()) {
        emit_word(word, out);
        word.clear();
      }
      if (c == '\n') out.push_back("\n");
    } else {
      word.push_back(c);
    }
  }
  if (!word.empty()) emit_word(word, out);
  return out;
}

Tokenizer build_tokenizer(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) words.insert(std::move(w));
  }
  words.erase(kTactStart);
  words.erase(kTactEnd);

  std::vector<std::string> tokens = {"<unk>", "<s>", "</s>", kImgTokens};
  for (const auto& w : words) {
    if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) tokens.push_back(w);
  }
  return tokenizer_from_tokens(std::move(tokens));
}

Tokenizer tokenizer_from_tokens(std::vector<std::string> tokens) {
  require(tokens.size() >= 4 && tokens[0] == "<unk>" && tokens[1] == "<s>" &&
              tokens[2] == "</s>" && tokens[3] == kImgTokens,
          "tokenizer: vocabulary must start with <unk>, <s>, </s>, <img_tokens>");
  Tokenizer tok;
  for (auto& t : tokens) {
    require(!tok.has(t), "tokenizer: duplicate token in vocabulary: " + t);
    tok.add_token(t);
  }
  return tok;
}

std::vector<int> encode_text(const Tokenizer& tok, const std::string& text) {
  std::vector<int> out;
  for (const auto& w : split_words(text)) out.push_back(tok.id_of(w));
  return out;
}

std::string decode_text(const Tokenizer& tok, const std::vector<int>& ids) {
  std::string out;
  bool pending_space = false;
  for (const int id : ids) {
    require(id >= 0 && id < tok.size(), "tokenizer: id out of range: " + std::to_string(id));
    const std::string& t = tok.tokens[std::size_t(id)];
    if (t == "\n") {
      out.push_back('\n');
      pending_space = false;
      continue;
    }
    if (pending_space) out.push_back(' ');
    out += t;
    pending_space = true;
  }
  return out;
}

void write_tokenizer_json(const std::filesystem::path& path, const Tokenizer& tok) {
  const nlohmann::json j = {{"tokens", tok.tokens}};
  write_text_file(path, j.dump(2) + "\n");
}

Tokenizer read_tokenizer_json(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail("tokenizer: cannot parse " + path.string() + ": " + e.what());
  }
  return tokenizer_from_tokens(j.at("tokens").get<std::vector<std::string>>());
}

}  // namespace tlm
