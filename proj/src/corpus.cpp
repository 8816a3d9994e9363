#include "cadm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "cadm/errors.hpp"
#include "cadm/random.hpp"

namespace cadm {

using nlohmann::json;

const char* domain_name(Domain d) {
  return d == Domain::Source ? "source" : "target";
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

DomainCorpus DomainCorpus::make(Domain domain, std::string name,
                                std::vector<Example> examples) {
  DomainCorpus corpus;
  corpus.domain_ = domain;
  corpus.name_ = std::move(name);

  std::unordered_set<std::string> seen;
  seen.reserve(examples.size());
  std::size_t auto_id = 0;
  for (auto& ex : examples) {
    if (ex.id.empty()) {
      ex.id = "e" + std::to_string(auto_id);
    }
    ++auto_id;
    if (!seen.insert(ex.id).second) {
      throw ValidationError("duplicate example id '" + ex.id + "' in corpus '" +
                            corpus.name_ + "'");
    }
    if (trim(ex.text).empty()) {
      throw ValidationError("example '" + ex.id + "' has empty text");
    }
    if (ex.label && *ex.label != 0 && *ex.label != 1) {
      throw ValidationError("example '" + ex.id + "' has label " +
                            std::to_string(*ex.label) + "; labels must be 0 or 1");
    }
    if (domain == Domain::Source && !ex.label) {
      throw ValidationError("source example '" + ex.id +
                            "' is missing its label; source corpora must be fully labeled");
    }
  }

  if (domain == Domain::Target) {
    // Quarantine: labels leave the training view and live only in the
    // evaluation side table.
    for (auto& ex : examples) {
      if (ex.label) {
        corpus.eval_labels_.emplace(ex.id, *ex.label);
        ex.label.reset();
      }
    }
  } else {
    for (const auto& ex : examples) {
      corpus.eval_labels_.emplace(ex.id, *ex.label);
    }
  }

  corpus.examples_ = std::move(examples);
  return corpus;
}

DomainCorpus DomainCorpus::with_eval_labels(
    std::unordered_map<std::string, int> labels) const {
  DomainCorpus copy = *this;
  copy.eval_labels_ = std::move(labels);
  return copy;
}

DomainCorpus load_corpus(const std::string& path, Domain domain,
                         const std::string& name) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open corpus file '" + path + "'");
  }

  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;

    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.is_object() || !record.contains("text") ||
        !record["text"].is_string()) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": record must be an object with a string 'text' field");
    }

    Example ex;
    ex.text = record["text"].get<std::string>();
    if (trim(ex.text).empty()) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": 'text' is empty");
    }
    if (record.contains("label") && !record["label"].is_null()) {
      const auto& lbl = record["label"];
      if (!lbl.is_number_integer() || (lbl.get<int>() != 0 && lbl.get<int>() != 1)) {
        throw ParseError(path + ":" + std::to_string(line_no) +
                         ": 'label' must be 0, 1 or null");
      }
      ex.label = lbl.get<int>();
    }
    if (record.contains("id")) {
      if (!record["id"].is_string()) {
        throw ParseError(path + ":" + std::to_string(line_no) +
                         ": 'id' must be a string");
      }
      ex.id = record["id"].get<std::string>();
    } else {
      ex.id = "l" + std::to_string(line_no);
    }
    examples.push_back(std::move(ex));
  }

  if (examples.empty()) {
    throw ValidationError("corpus file '" + path + "' contains no records");
  }

  std::string corpus_name = name.empty() ? path : name;
  return DomainCorpus::make(domain, std::move(corpus_name), std::move(examples));
}

std::unordered_map<std::string, int> load_labels_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open labels file '" + path + "'");
  }
  std::unordered_map<std::string, int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.contains("id") || !record["id"].is_string() ||
        !record.contains("label") || !record["label"].is_number_integer()) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": expected {\"id\": string, \"label\": 0|1}");
    }
    const int lbl = record["label"].get<int>();
    if (lbl != 0 && lbl != 1) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": 'label' must be 0 or 1");
    }
    labels[record["id"].get<std::string>()] = lbl;
  }
  if (labels.empty()) {
    throw ValidationError("labels file '" + path + "' contains no records");
  }
  return labels;
}

void write_corpus_jsonl(const DomainCorpus& corpus, const std::string& path,
                        bool include_labels) {
  std::ofstream out(path);
  if (!out) {
    throw ValidationError("cannot write corpus file '" + path + "'");
  }
  for (const auto& ex : corpus.examples()) {
    json record;
    record["id"] = ex.id;
    record["text"] = ex.text;
    if (include_labels && ex.label) {
      record["label"] = *ex.label;
    } else {
      record["label"] = nullptr;
    }
    out << record.dump() << "\n";
  }
}

void write_labels_jsonl(const std::vector<std::pair<std::string, int>>& labels,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw ValidationError("cannot write labels file '" + path + "'");
  }
  for (const auto& [id, label] : labels) {
    json record;
    record["id"] = id;
    record["label"] = label;
    out << record.dump() << "\n";
  }
}

MergedSet merge_domains(const DomainCorpus& source, const DomainCorpus& target) {
  if (source.domain() != Domain::Source || target.domain() != Domain::Target) {
    throw ContractError("merge_domains expects (source, target) in that order; got (" +
                        std::string(domain_name(source.domain())) + ", " +
                        domain_name(target.domain()) + ")");
  }
  if (source.size() == 0 || target.size() == 0) {
    throw ContractError("merge_domains requires non-empty corpora; adaptation is undefined without both domains");
  }

  MergedSet merged;
  merged.source_name = source.name();
  merged.target_name = target.name();
  merged.entries.reserve(source.size() + target.size());
  for (const auto& ex : source.examples()) {
    merged.entries.push_back({ex, 0});
  }
  for (const auto& ex : target.examples()) {
    merged.entries.push_back({ex, 1});
  }
  return merged;
}

void SynthShiftConfig::validate() const {
  if (vocab_size < 50) {
    throw ConfigError("synth vocab_size must be >= 50, got " +
                      std::to_string(vocab_size));
  }
  if (shift_strength < 0.0 || shift_strength > 1.0) {
    throw ConfigError("shift_strength must lie in [0, 1]");
  }
  if (class_balance <= 0.0 || class_balance >= 1.0) {
    throw ConfigError("class_balance must lie in (0, 1)");
  }
  for (const int n : {n_source, n_target}) {
    if (n < 4) {
      throw ConfigError("each domain needs at least 4 examples");
    }
    const int n1 = static_cast<int>(std::lround(n * class_balance));
    const int n0 = n - n1;
    if (n1 < 2 || n0 < 2) {
      // The class-aware loss pairs items across classes; one lonely example
      // per class leaves some denominators empty for every batch.
      throw ConfigError("each domain needs at least 2 examples per class; got " +
                        std::to_string(n0) + "/" + std::to_string(n1) +
                        " for classes 0/1");
    }
  }
}

namespace {

// Pronounceable deterministic word for a synthetic token id.
std::string synth_word(int id) {
  static const char* consonants = "bdfgklmnprstvz";  // 14
  static const char* vowels = "aeiou";               // 5
  const int kSyllables = 14 * 5;
  std::string word;
  int x = id;
  int parts = (id < kSyllables * kSyllables) ? 2 : 3;
  for (int p = 0; p < parts; ++p) {
    const int syl = x % kSyllables;
    x /= kSyllables;
    word += consonants[syl / 5];
    word += vowels[syl % 5];
  }
  return word;
}

struct SynthVocabLayout {
  // Class-evidence blocks: style "A" appears in both domains, style "B" only
  // in the target domain (with probability shift_strength per class token).
  int class_a[2][2];  // [class][{begin, size}]
  int class_b[2][2];
  int style_src[2];
  int style_tgt[2];
  int filler[2];
};

SynthVocabLayout make_layout(int vocab_size) {
  SynthVocabLayout L{};
  const int n_cls = std::max(4, vocab_size * 8 / 100);
  const int n_style = std::max(3, vocab_size * 4 / 100);
  int at = 0;
  for (int y = 0; y < 2; ++y) {
    L.class_a[y][0] = at; L.class_a[y][1] = n_cls; at += n_cls;
  }
  for (int y = 0; y < 2; ++y) {
    L.class_b[y][0] = at; L.class_b[y][1] = n_cls; at += n_cls;
  }
  L.style_src[0] = at; L.style_src[1] = n_style; at += n_style;
  L.style_tgt[0] = at; L.style_tgt[1] = n_style; at += n_style;
  L.filler[0] = at;
  L.filler[1] = vocab_size - at;
  return L;
}

std::string sample_document(Rng& rng, const SynthVocabLayout& layout,
                            Domain domain, int label, double shift) {
  const int length = 8 + rng.uniform_int(9);  // 8..16 tokens
  std::string text;
  for (int t = 0; t < length; ++t) {
    const double u = rng.uniform();
    int token;
    if (u < 0.35) {
      const int (*block)[2] = &layout.class_a[label];
      if (domain == Domain::Target && rng.uniform() < shift) {
        block = &layout.class_b[label];
      }
      token = (*block)[0] + rng.uniform_int((*block)[1]);
    } else if (u < 0.35 + 0.10 * shift) {
      const int* block = domain == Domain::Source ? layout.style_src : layout.style_tgt;
      token = block[0] + rng.uniform_int(block[1]);
    } else {
      token = layout.filler[0] + rng.uniform_int(layout.filler[1]);
    }
    if (!text.empty()) text += ' ';
    text += synth_word(token);
  }
  return text;
}

std::vector<int> sample_labels(Rng& rng, int n, double balance) {
  const int n1 = static_cast<int>(std::lround(n * balance));
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n1; ++i) labels[static_cast<std::size_t>(i)] = 1;
  rng.shuffle(labels);
  return labels;
}

}  // namespace

SynthCorpora generate_synthetic_shift(const SynthShiftConfig& cfg) {
  cfg.validate();
  const SynthVocabLayout layout = make_layout(cfg.vocab_size);

  Rng src_rng(derive_seed(cfg.seed, seed_tag::kSynthSource));
  Rng tgt_rng(derive_seed(cfg.seed, seed_tag::kSynthTarget));

  std::vector<Example> source_examples;
  source_examples.reserve(static_cast<std::size_t>(cfg.n_source));
  const std::vector<int> src_labels = sample_labels(src_rng, cfg.n_source, cfg.class_balance);
  for (int i = 0; i < cfg.n_source; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "s%05d", i);
    const int y = src_labels[static_cast<std::size_t>(i)];
    source_examples.push_back(
        {id, sample_document(src_rng, layout, Domain::Source, y, cfg.shift_strength), y});
  }

  std::vector<Example> target_examples;
  target_examples.reserve(static_cast<std::size_t>(cfg.n_target));
  std::vector<std::pair<std::string, int>> target_labels;
  target_labels.reserve(static_cast<std::size_t>(cfg.n_target));
  const std::vector<int> tgt_labels = sample_labels(tgt_rng, cfg.n_target, cfg.class_balance);
  for (int i = 0; i < cfg.n_target; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "t%05d", i);
    const int y = tgt_labels[static_cast<std::size_t>(i)];
    target_examples.push_back(
        {id, sample_document(tgt_rng, layout, Domain::Target, y, cfg.shift_strength), y});
    target_labels.emplace_back(id, y);
  }

  SynthCorpora out{
      DomainCorpus::make(Domain::Source, "synth-source", std::move(source_examples)),
      DomainCorpus::make(Domain::Target, "synth-target", std::move(target_examples)),
      std::move(target_labels)};
  return out;
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size,
                                            std::uint64_t seed, int epoch) {
  if (batch_size < 2) {
    throw ContractError("batch_size must be >= 2 (pairwise loss terms need two items), got " +
                        std::to_string(batch_size));
  }
  std::vector<std::vector<int>> batches;
  if (n <= 0) return batches;

  Rng rng(derive_seed(derive_seed(seed, seed_tag::kBatchOrder),
                      static_cast<std::uint64_t>(epoch)));
  const std::vector<int> order = rng.permutation(n);
  for (int at = 0; at < n; at += batch_size) {
    const int end = std::min(n, at + batch_size);
    batches.emplace_back(order.begin() + at, order.begin() + end);
  }
  return batches;
}

}  // namespace cadm
