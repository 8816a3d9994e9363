#include "cadm/tokenizer.hpp"

#include <algorithm>
#include <cctype>

#include "cadm/errors.hpp"

namespace cadm {

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Tokenizer Tokenizer::fit(const std::vector<const DomainCorpus*>& corpora,
                         int vocab_size) {
  if (vocab_size < 3) {
    throw ConfigError("tokenizer vocab_size must be >= 3 (pad + unk + words)");
  }
  std::unordered_map<std::string, long> counts;
  for (const DomainCorpus* corpus : corpora) {
    for (const auto& ex : corpus->examples()) {
      for (auto& tok : whitespace_tokens(ex.text)) {
        ++counts[tok];
      }
    }
  }

  // Most frequent first; ties broken lexicographically for determinism.
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> vocab{"<pad>", "<unk>"};
  const std::size_t room = static_cast<std::size_t>(vocab_size) - 2;
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i) {
    vocab.push_back(ranked[i].first);
  }
  return from_vocab(std::move(vocab));
}

Tokenizer Tokenizer::from_vocab(std::vector<std::string> vocab) {
  if (vocab.size() < 2 || vocab[0] != "<pad>" || vocab[1] != "<unk>") {
    throw ValidationError("tokenizer vocab must start with <pad>, <unk>");
  }
  Tokenizer t;
  t.vocab_ = std::move(vocab);
  t.index_.reserve(t.vocab_.size());
  for (std::size_t i = 0; i < t.vocab_.size(); ++i) {
    if (!t.index_.emplace(t.vocab_[i], static_cast<int>(i)).second) {
      throw ValidationError("duplicate token '" + t.vocab_[i] + "' in vocab");
    }
  }
  return t;
}

std::vector<int> Tokenizer::encode_text(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& tok : whitespace_tokens(text)) {
    const auto it = index_.find(tok);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  if (ids.empty()) ids.push_back(kUnk);
  return ids;
}

}  // namespace cadm
