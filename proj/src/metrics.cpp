#include "cadm/metrics.hpp"

#include "cadm/errors.hpp"

namespace cadm {

Metrics compute_metrics(const std::vector<int>& predictions,
                        const std::vector<int>& labels, int positive_class) {
  if (predictions.size() != labels.size()) {
    throw ContractError("compute_metrics: predictions and labels differ in length");
  }
  if (predictions.empty()) {
    throw ContractError("compute_metrics: empty inputs");
  }
  if (positive_class != 0 && positive_class != 1) {
    throw ContractError("positive_class must be 0 or 1");
  }

  Metrics m;
  m.n = static_cast<long>(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i];
    const int y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) {
      throw ContractError("compute_metrics: entries must be 0 or 1");
    }
    const bool pred_pos = p == positive_class;
    const bool label_pos = y == positive_class;
    if (pred_pos && label_pos) ++m.tp;
    else if (pred_pos && !label_pos) ++m.fp;
    else if (!pred_pos && label_pos) ++m.fn;
    else ++m.tn;
  }

  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.n);

  const long pos = m.tp + m.fn;
  const long neg = m.tn + m.fp;
  if (pos > 0 && neg > 0) {
    const double tpr = static_cast<double>(m.tp) / static_cast<double>(pos);
    const double tnr = static_cast<double>(m.tn) / static_cast<double>(neg);
    m.balanced_accuracy = 0.5 * (tpr + tnr);
  } else {
    // One class absent: only one rate is defined.
    m.degenerate = true;
    m.balanced_accuracy =
        pos > 0 ? static_cast<double>(m.tp) / static_cast<double>(pos)
                : static_cast<double>(m.tn) / static_cast<double>(neg);
  }

  const long f1_denom = 2 * m.tp + m.fp + m.fn;
  m.f1 = f1_denom > 0 ? 2.0 * static_cast<double>(m.tp) / static_cast<double>(f1_denom)
                      : 0.0;
  if (f1_denom == 0) m.degenerate = true;
  return m;
}

std::vector<int> predict(const ModelState& state, const Tokenizer& tokenizer,
                         const DomainCorpus& corpus) {
  constexpr int kEvalBatch = 64;
  std::vector<std::vector<int>> tokenized;
  tokenized.reserve(corpus.size());
  for (const auto& ex : corpus.examples()) {
    tokenized.push_back(tokenizer.encode_text(ex.text));
  }

  std::vector<int> predictions;
  predictions.reserve(corpus.size());
  const int n = static_cast<int>(corpus.size());
  const int domain = corpus.domain() == Domain::Source ? 0 : 1;
  for (int at = 0; at < n; at += kEvalBatch) {
    const int end = std::min(n, at + kEvalBatch);
    std::vector<BatchRow> rows;
    rows.reserve(static_cast<std::size_t>(end - at));
    for (int i = at; i < end; ++i) {
      BatchRow row;
      row.ids = &tokenized[static_cast<std::size_t>(i)];
      row.domain = domain;
      rows.push_back(row);
    }
    const TokenBatch batch = make_token_batch(rows, state.config);
    const ReprBatch repr = encode(state, batch);
    const Matrix logits = classify(state, repr.z);
    for (Index r = 0; r < logits.rows(); ++r) {
      predictions.push_back(logits(r, 1) > logits(r, 0) ? 1 : 0);
    }
  }
  return predictions;
}

Metrics evaluate(const ModelState& state, const Tokenizer& tokenizer,
                 const DomainCorpus& corpus, int positive_class,
                 std::vector<int>* out_predictions) {
  if (!corpus.has_eval_labels()) {
    throw ContractError("evaluate: corpus '" + corpus.name() +
                        "' carries no evaluation labels");
  }
  std::vector<int> labels;
  labels.reserve(corpus.size());
  for (const auto& ex : corpus.examples()) {
    const auto it = corpus.eval_labels().find(ex.id);
    if (it == corpus.eval_labels().end()) {
      throw ContractError("evaluate: example '" + ex.id +
                          "' has no evaluation label");
    }
    labels.push_back(it->second);
  }

  const std::vector<int> predictions = predict(state, tokenizer, corpus);
  if (out_predictions != nullptr) {
    *out_predictions = predictions;
  }
  return compute_metrics(predictions, labels, positive_class);
}

}  // namespace cadm
