#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sgdm/errors.hpp"

namespace sgdm {

inline constexpr int kBosId = 0;
inline constexpr int kPadId = 1;

// Word -> id map with two reserved ids (0 = <bos>, 1 = <pad>). Ids are dense
// in [0, size). Immutable once built; safe to share across threads.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const std::vector<std::string>& words);

  int id(const std::string& word) const;      // throws vocabulary error
  bool contains(const std::string& word) const;
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(id_to_word_.size()); }

  std::string to_json() const;                 // {"word": id, ...}
  static Vocabulary from_json(const std::string& text);

 private:
  std::map<std::string, int> word_to_id_;
  std::vector<std::string> id_to_word_;
};

// An edit instruction split into the text describing the object (inside) and
// the text describing the rest of the scene (outside, possibly empty).
struct PromptPair {
  std::vector<std::string> inside_text;
  std::vector<std::string> outside_text;

  bool operator==(const PromptPair&) const = default;

  static PromptPair parse(const std::string& spec);  // "inside|outside"
  std::string str() const;
};

// Fixed layout: [<bos>, B inside slots, B outside slots]. Pad slots keep the
// membership of their side, so |J_in| == |J_out| == B always.
struct TokenizedPrompt {
  std::vector<int> ids;
  std::vector<int> j_in;
  std::vector<int> j_out;
  int bos_index = 0;
  int budget = 0;

  int length() const { return static_cast<int>(ids.size()); }
  bool operator==(const TokenizedPrompt&) const = default;
};

TokenizedPrompt tokenize(const PromptPair& prompt, const Vocabulary& vocab,
                         int budget);
PromptPair detokenize(const TokenizedPrompt& tokens, const Vocabulary& vocab);
TokenizedPrompt null_prompt(int budget);

// Token columns whose ids differ between the two prompts (same budget).
std::vector<int> changed_token_columns(const TokenizedPrompt& src,
                                       const TokenizedPrompt& edit);

}  // namespace sgdm
