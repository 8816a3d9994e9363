#pragma once

#include <string>
#include <vector>

#include "cadm/corpus.hpp"
#include "cadm/model.hpp"

namespace cadm {

struct Metrics {
  double balanced_accuracy = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long n = 0;
  // Set when a label class is absent: the undefined rate is dropped and
  // balanced accuracy degrades to the defined one.
  bool degenerate = false;
};

// Exact confusion-matrix metrics. The positive class for F1 defaults to
// y = 1 (true information); flip via positive_class = 0.
Metrics compute_metrics(const std::vector<int>& predictions,
                        const std::vector<int>& labels, int positive_class = 1);

// Evaluation-mode forward pass over the whole corpus against its quarantined
// labels. Optionally returns per-example predictions (corpus order).
Metrics evaluate(const ModelState& state, const Tokenizer& tokenizer,
                 const DomainCorpus& corpus, int positive_class = 1,
                 std::vector<int>* out_predictions = nullptr);

// Predictions only; usable on unlabeled corpora.
std::vector<int> predict(const ModelState& state, const Tokenizer& tokenizer,
                         const DomainCorpus& corpus);

}  // namespace cadm
