#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cadm/corpus.hpp"

namespace cadm {

std::vector<std::string> whitespace_tokens(const std::string& text);

// Whitespace/frequency vocabulary. Ids 0 and 1 are reserved for padding and
// unknown tokens; everything out of vocabulary maps to kUnk so the encoder
// never sees an id >= size(). Fitting uses text only, so running it over the
// target corpus does not touch quarantined labels.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  static Tokenizer fit(const std::vector<const DomainCorpus*>& corpora,
                       int vocab_size);
  static Tokenizer from_vocab(std::vector<std::string> vocab);

  std::vector<int> encode_text(const std::string& text) const;
  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& vocab() const { return vocab_; }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace cadm
