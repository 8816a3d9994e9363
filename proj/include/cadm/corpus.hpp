#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cadm {

enum class Domain { Source, Target };

const char* domain_name(Domain d);

struct Example {
  std::string id;
  std::string text;
  std::optional<int> label;  // task label y: 1 = true information, 0 = false
};

// Immutable after construction. For target corpora any labels present in the
// input are quarantined into an evaluation-only side table: the training view
// (examples()) never exposes them. No training code path may touch
// eval_labels(); the trainer tests assert this by poisoning the table.
class DomainCorpus {
 public:
  DomainCorpus() = default;  // empty placeholder; make() is the validated path
  static DomainCorpus make(Domain domain, std::string name,
                           std::vector<Example> examples);

  Domain domain() const { return domain_; }
  const std::string& name() const { return name_; }
  const std::vector<Example>& examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }

  const std::unordered_map<std::string, int>& eval_labels() const {
    return eval_labels_;
  }
  bool has_eval_labels() const { return !eval_labels_.empty(); }
  // Replaces the quarantined table (external label files, poisoning tests).
  DomainCorpus with_eval_labels(std::unordered_map<std::string, int> labels) const;

 private:
  Domain domain_ = Domain::Source;
  std::string name_;
  std::vector<Example> examples_;
  std::unordered_map<std::string, int> eval_labels_;
};

// One record per line: {"text": ..., "label": 0|1|null, "id": optional}.
DomainCorpus load_corpus(const std::string& path, Domain domain,
                         const std::string& name = "");

// JSONL map file {"id": ..., "label": 0|1} per line.
std::unordered_map<std::string, int> load_labels_file(const std::string& path);

void write_corpus_jsonl(const DomainCorpus& corpus, const std::string& path,
                        bool include_labels);
void write_labels_jsonl(const std::vector<std::pair<std::string, int>>& labels,
                        const std::string& path);

// Union X' of a source and a target corpus with explicit domain labels y_D
// (0 = source, 1 = target).
struct MergedEntry {
  Example example;
  int domain_label = 0;
};

struct MergedSet {
  std::vector<MergedEntry> entries;
  std::string source_name;
  std::string target_name;
};

MergedSet merge_domains(const DomainCorpus& source, const DomainCorpus& target);

// Desk-scale generator of a controllable domain shift: two corpora of
// synthetic documents whose class-conditional token distributions drift apart
// as shift_strength grows. At shift_strength = 0 both domains are sampled
// from the identical process.
struct SynthShiftConfig {
  int vocab_size = 512;
  int n_source = 2000;
  int n_target = 2000;
  double shift_strength = 0.8;  // in [0, 1]
  double class_balance = 0.5;   // fraction of label-1 examples, in (0, 1)
  std::uint64_t seed = 0;
  void validate() const;
};

struct SynthCorpora {
  DomainCorpus source;
  DomainCorpus target;  // labels quarantined inside the corpus
  // Target ground truth, returned separately for evaluation tooling.
  std::vector<std::pair<std::string, int>> target_labels;
};

SynthCorpora generate_synthetic_shift(const SynthShiftConfig& cfg);

// Seeded epoch batching: each epoch is an independent permutation of
// 0..n-1 cut into batches; the last batch may be short. batch_size must be
// at least 2 because the pairwise loss terms need two items.
std::vector<std::vector<int>> epoch_batches(int n, int batch_size,
                                            std::uint64_t seed, int epoch);

}  // namespace cadm
