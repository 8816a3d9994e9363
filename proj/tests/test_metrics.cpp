#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cadm/errors.hpp"
#include "cadm/metrics.hpp"
#include "cadm/trainer.hpp"
#include "helpers.hpp"

using namespace cadm;

namespace {

// Builds prediction/label vectors realizing a given confusion matrix.
void fill_confusion(int tp, int fp, int tn, int fn, std::vector<int>& pred,
                    std::vector<int>& label) {
  pred.clear();
  label.clear();
  for (int i = 0; i < tp; ++i) { pred.push_back(1); label.push_back(1); }
  for (int i = 0; i < fp; ++i) { pred.push_back(1); label.push_back(0); }
  for (int i = 0; i < tn; ++i) { pred.push_back(0); label.push_back(0); }
  for (int i = 0; i < fn; ++i) { pred.push_back(0); label.push_back(1); }
}

}  // namespace

TEST_CASE("hand-computed confusion matrix") {
  std::vector<int> pred, label;
  fill_confusion(8, 2, 6, 2, pred, label);
  const Metrics m = compute_metrics(pred, label);
  CHECK(m.n == 18);
  CHECK(m.tp == 8);
  CHECK(m.fp == 2);
  CHECK(m.tn == 6);
  CHECK(m.fn == 2);
  CHECK(m.accuracy == doctest::Approx(14.0 / 18.0).epsilon(1e-12));
  CHECK(m.balanced_accuracy == doctest::Approx(0.775).epsilon(1e-12));
  CHECK(m.f1 == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_FALSE(m.degenerate);
}

TEST_CASE("perfect predictions give all ones") {
  std::vector<int> pred{1, 0, 1, 0, 1};
  const Metrics m = compute_metrics(pred, pred);
  CHECK(m.accuracy == 1.0);
  CHECK(m.balanced_accuracy == 1.0);
  CHECK(m.f1 == 1.0);
}

TEST_CASE("metric formulas match an independent recomputation (property)") {
  Rng rng(15);
  for (int trial = 0; trial < 300; ++trial) {
    const int tp = rng.uniform_int(20);
    const int fp = rng.uniform_int(20);
    const int tn = rng.uniform_int(20);
    const int fn = rng.uniform_int(20);
    if (tp + fp + tn + fn == 0) continue;

    std::vector<int> pred, label;
    fill_confusion(tp, fp, tn, fn, pred, label);
    const Metrics m = compute_metrics(pred, label);

    CHECK(m.tp + m.fp + m.tn + m.fn == m.n);
    const double acc = double(tp + tn) / double(tp + fp + tn + fn);
    CHECK(std::abs(m.accuracy - acc) < 1e-12);
    if (tp + fn > 0 && tn + fp > 0) {
      const double ba = 0.5 * (double(tp) / (tp + fn) + double(tn) / (tn + fp));
      CHECK(std::abs(m.balanced_accuracy - ba) < 1e-12);
    }
    if (2 * tp + fp + fn > 0) {
      CHECK(std::abs(m.f1 - 2.0 * tp / double(2 * tp + fp + fn)) < 1e-12);
    }
  }
}

TEST_CASE("balanced accuracy equals accuracy on balanced label sets (property)") {
  Rng rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    const int half = 1 + rng.uniform_int(30);
    std::vector<int> label(2 * half);
    for (int i = 0; i < 2 * half; ++i) label[i] = i < half ? 1 : 0;
    std::vector<int> pred(2 * half);
    for (auto& p : pred) p = rng.uniform_int(2);
    const Metrics m = compute_metrics(pred, label);
    CHECK(std::abs(m.balanced_accuracy - m.accuracy) < 1e-12);
  }
}

TEST_CASE("single-class label sets degrade with a flag instead of throwing") {
  std::vector<int> label{1, 1, 1};
  std::vector<int> pred{1, 0, 1};
  const Metrics m = compute_metrics(pred, label);
  CHECK(m.degenerate);
  CHECK(m.balanced_accuracy == doctest::Approx(2.0 / 3.0));  // only TPR defined
}

TEST_CASE("positive class can be flipped") {
  std::vector<int> pred, label;
  fill_confusion(8, 2, 6, 2, pred, label);
  const Metrics flipped = compute_metrics(pred, label, 0);
  // Confusion transposes: TP' = TN, etc. Accuracy and BA are invariant.
  CHECK(flipped.tp == 6);
  CHECK(flipped.fn == 2);
  CHECK(flipped.accuracy == doctest::Approx(14.0 / 18.0));
  CHECK(flipped.balanced_accuracy == doctest::Approx(0.775));
  CHECK(flipped.f1 == doctest::Approx(12.0 / 16.0));
}

TEST_CASE("contract errors") {
  CHECK_THROWS_AS(compute_metrics({1, 0}, {1}), ContractError);
  CHECK_THROWS_AS(compute_metrics({}, {}), ContractError);
  CHECK_THROWS_AS(compute_metrics({2}, {1}), ContractError);
}

TEST_CASE("evaluate is deterministic and respects the quarantine") {
  const DomainCorpus source = cadm_test::tiny_corpus(Domain::Source, 24, 3, "s");
  EncoderConfig cfg;
  cfg.vocab_size = 32;
  cfg.repr_dim = 8;
  cfg.max_sequence_length = 8;
  cfg.seed = 1;
  const ModelState state = init_model(cfg);
  const Tokenizer tok = Tokenizer::fit({&source}, cfg.vocab_size);

  const Metrics a = evaluate(state, tok, source);
  const Metrics b = evaluate(state, tok, source);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.tp == b.tp);

  // A constant-prediction model on a balanced set sits at chance BA.
  ModelState constant = state;
  constant.task.weight.setZero();
  constant.task.bias << 10.0, 0.0;  // always predicts class 0
  const Metrics chance = evaluate(constant, tok, source);
  CHECK(chance.balanced_accuracy == doctest::Approx(0.5));

  // Corpus without evaluation labels is a contract error.
  std::vector<Example> unlabeled;
  for (int i = 0; i < 4; ++i) {
    unlabeled.push_back({"u" + std::to_string(i), "alpha beta", std::nullopt});
  }
  const DomainCorpus no_labels =
      DomainCorpus::make(Domain::Target, "nl", std::move(unlabeled));
  CHECK_THROWS_AS(evaluate(state, tok, no_labels), ContractError);
}
