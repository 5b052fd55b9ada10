#include "sgdm/text.hpp"

#include <json.hpp>

namespace sgdm {

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  id_to_word_ = {"<bos>", "<pad>"};
  for (const auto& w : words) {
    check(!w.empty(), ErrorKind::vocabulary, "empty word");
    check(w != "<bos>" && w != "<pad>", ErrorKind::vocabulary,
          "reserved token '" + w + "' cannot be a vocabulary word");
    check(word_to_id_.find(w) == word_to_id_.end(), ErrorKind::vocabulary,
          "duplicate word '" + w + "'");
    word_to_id_[w] = static_cast<int>(id_to_word_.size());
    id_to_word_.push_back(w);
  }
}

int Vocabulary::id(const std::string& word) const {
  auto it = word_to_id_.find(word);
  check(it != word_to_id_.end(), ErrorKind::vocabulary,
        "word '" + word + "' is not in the vocabulary");
  return it->second;
}

bool Vocabulary::contains(const std::string& word) const {
  return word_to_id_.find(word) != word_to_id_.end();
}

const std::string& Vocabulary::word(int id) const {
  check(id >= 0 && id < size(), ErrorKind::vocabulary,
        "token id " + std::to_string(id) + " out of range");
  return id_to_word_[static_cast<size_t>(id)];
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["<bos>"] = kBosId;
  j["<pad>"] = kPadId;
  for (const auto& [word, id] : word_to_id_) j[word] = id;
  return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("vocabulary JSON: ") + e.what());
  }
  check(j.is_object(), ErrorKind::config, "vocabulary JSON must be an object");
  std::vector<std::string> by_id(j.size());
  for (const auto& [word, id_val] : j.items()) {
    check(id_val.is_number_integer(), ErrorKind::config,
          "vocabulary id for '" + word + "' must be an integer");
    const int id = id_val.get<int>();
    check(id >= 0 && id < static_cast<int>(j.size()), ErrorKind::config,
          "vocabulary ids must be dense in [0, size)");
    check(by_id[static_cast<size_t>(id)].empty(), ErrorKind::config,
          "duplicate vocabulary id " + std::to_string(id));
    by_id[static_cast<size_t>(id)] = word;
  }
  check(by_id.size() >= 2 && by_id[0] == "<bos>" && by_id[1] == "<pad>",
        ErrorKind::config, "vocabulary must reserve 0=<bos> and 1=<pad>");
  return Vocabulary(std::vector<std::string>(by_id.begin() + 2, by_id.end()));
}

PromptPair PromptPair::parse(const std::string& spec) {
  PromptPair p;
  const auto bar = spec.find('|');
  const std::string inside = spec.substr(0, bar);
  const std::string outside =
      bar == std::string::npos ? std::string() : spec.substr(bar + 1);
  auto split = [](const std::string& s) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : s) {
      if (c == ' ') {
        if (!cur.empty()) words.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
  };
  p.inside_text = split(inside);
  p.outside_text = split(outside);
  return p;
}

std::string PromptPair::str() const {
  std::string s;
  for (size_t i = 0; i < inside_text.size(); ++i) {
    if (i) s += ' ';
    s += inside_text[i];
  }
  s += '|';
  for (size_t i = 0; i < outside_text.size(); ++i) {
    if (i) s += ' ';
    s += outside_text[i];
  }
  return s;
}

TokenizedPrompt tokenize(const PromptPair& prompt, const Vocabulary& vocab,
                         int budget) {
  check(budget >= 1, ErrorKind::parameter, "token budget must be >= 1");
  check(static_cast<int>(prompt.inside_text.size()) <= budget,
        ErrorKind::budget,
        "inside text has " + std::to_string(prompt.inside_text.size()) +
            " words, budget is " + std::to_string(budget));
  check(static_cast<int>(prompt.outside_text.size()) <= budget,
        ErrorKind::budget,
        "outside text has " + std::to_string(prompt.outside_text.size()) +
            " words, budget is " + std::to_string(budget));

  TokenizedPrompt t;
  t.budget = budget;
  t.ids.assign(static_cast<size_t>(1 + 2 * budget), kPadId);
  t.ids[0] = kBosId;
  for (size_t i = 0; i < prompt.inside_text.size(); ++i) {
    t.ids[1 + i] = vocab.id(prompt.inside_text[i]);
  }
  for (size_t i = 0; i < prompt.outside_text.size(); ++i) {
    t.ids[static_cast<size_t>(1 + budget) + i] = vocab.id(prompt.outside_text[i]);
  }
  for (int i = 1; i <= budget; ++i) t.j_in.push_back(i);
  for (int i = budget + 1; i <= 2 * budget; ++i) t.j_out.push_back(i);
  return t;
}

PromptPair detokenize(const TokenizedPrompt& tokens, const Vocabulary& vocab) {
  PromptPair p;
  for (int pos : tokens.j_in) {
    const int id = tokens.ids[static_cast<size_t>(pos)];
    if (id != kPadId) p.inside_text.push_back(vocab.word(id));
  }
  for (int pos : tokens.j_out) {
    const int id = tokens.ids[static_cast<size_t>(pos)];
    if (id != kPadId) p.outside_text.push_back(vocab.word(id));
  }
  return p;
}

TokenizedPrompt null_prompt(int budget) {
  return tokenize(PromptPair{}, Vocabulary(std::vector<std::string>{}), budget);
}

std::vector<int> changed_token_columns(const TokenizedPrompt& src,
                                       const TokenizedPrompt& edit) {
  check(src.budget == edit.budget, ErrorKind::partition,
        "prompts have different budgets");
  std::vector<int> cols;
  for (size_t i = 0; i < src.ids.size(); ++i) {
    if (src.ids[i] != edit.ids[i]) cols.push_back(static_cast<int>(i));
  }
  return cols;
}

}  // namespace sgdm
