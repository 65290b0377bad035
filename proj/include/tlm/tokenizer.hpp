#pragma once

// Word-level tokenizer over the closed task-text domain. Tokens are maximal
// space-separated runs; newlines are their own token; the three tactile
// marker strings are isolated even when glued to neighbouring characters.
// decode(encode(s)) == s for any single-spaced text without markers, which
// covers every training target.

#include <string>
#include <unordered_map>
#include <vector>

#include "tlm/common.hpp"

namespace tlm {

inline constexpr const char* kTactStart = "<tact_start>";
inline constexpr const char* kTactEnd = "<tact_end>";
inline constexpr const char* kImgTokens = "<img_tokens>";

// kImgTokens always sits at this id; the four specials open every vocabulary.
inline constexpr int kImgTokenId = 3;

struct Tokenizer {
  std::vector<std::string> tokens;  // id -> text
  std::unordered_map<std::string, int> ids;

  // Specials occupy the first four ids; markers sit past the base vocabulary
  // once extend_vocab has added them (-1 before that).
  int unk_id = 0;
  int bos_id = 1;
  int eos_id = 2;
  int img_id = 3;
  int tact_start_id = -1;
  int tact_end_id = -1;

  int size() const { return int(tokens.size()); }
  bool has(const std::string& token) const { return ids.count(token) != 0; }
  int id_of(const std::string& token) const;  // unk_id for unknown text
  int add_token(const std::string& token);    // error if already present
  bool has_markers() const { return tact_start_id >= 0; }
};

// Space/newline splitting with marker isolation; "\n" is a token.
std::vector<std::string> split_words(const std::string& text);

// Specials, then the sorted unique words of `texts`. The marker strings are
// reserved for extend_vocab and never enter the base vocabulary.
Tokenizer build_tokenizer(const std::vector<std::string>& texts);

std::vector<int> encode_text(const Tokenizer& tok, const std::string& text);
std::string decode_text(const Tokenizer& tok, const std::vector<int>& ids);

void write_tokenizer_json(const std::filesystem::path& path, const Tokenizer& tok);
Tokenizer tokenizer_from_tokens(std::vector<std::string> tokens);
Tokenizer read_tokenizer_json(const std::filesystem::path& path);

}  // namespace tlm
