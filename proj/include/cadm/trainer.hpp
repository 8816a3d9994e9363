#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cadm/adversarial.hpp"
#include "cadm/contrastive.hpp"
#include "cadm/corpus.hpp"
#include "cadm/model.hpp"

namespace cadm {

enum class Alternation { PerBatch, PerEpoch };

const char* alternation_name(Alternation a);
Alternation alternation_from_name(const std::string& name);

struct AdaptationConfig {
  double lambda = 1.0;  // domain adaptation strength
  double tau = 0.8;     // pseudo-label confidence threshold, in (0.5, 1]
  int pseudo_refresh_every = 1;      // epochs between refreshes
  bool refresh_pseudo_labels = true; // false: generate once, keep frozen
  int pretrain_epochs = 3;
  int disc_epochs = 5;
  int adapt_epochs = 5;
  Alternation alternation = Alternation::PerBatch;
  bool retrain_disc_on_refresh = false;
  int warmup_epochs = 0;  // adaptation epochs with source-only cross-entropy
  double lr_encoder = 5e-3;
  double lr_heads = 5e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  PerturbationConfig pgd;
  KernelConfig kernel;

  void validate() const;
};

// Canonical key-value dump, stored in traces as the config snapshot.
std::string describe(const AdaptationConfig& cfg);

struct PseudoLabeledSet {
  std::vector<std::string> ids;  // surviving target example ids, corpus order
  std::vector<int> labels;
  std::vector<double> confidences;
  int generation_epoch = 0;
  std::size_t target_size = 0;

  double survival_rate() const {
    return target_size == 0
               ? 0.0
               : static_cast<double>(ids.size()) / static_cast<double>(target_size);
  }
};

struct StepRecord {
  long step = 0;
  int epoch = 0;
  LossReport loss;
};

struct EpochRecord {
  int epoch = 0;
  double disc_accuracy_clean = 0.0;
  double disc_accuracy_perturbed = 0.0;
  double pseudo_survival_rate = 0.0;
  long pseudo_survivors = 0;
  double seconds = 0.0;
};

struct TrainTrace {
  std::string phase;
  std::uint64_t seed = 0;
  std::string config_snapshot;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

// Supervised pretraining on the labeled source corpus; also the
// "no adaptation" baseline.
TrainTrace pretrain_source(ModelState& state, const Tokenizer& tokenizer,
                           const DomainCorpus& source, const AdaptationConfig& cfg);

struct DiscTrainReport {
  double holdout_accuracy = 0.0;
  int epochs = 0;
  long train_rows = 0;
  long holdout_rows = 0;
};

// Trains the domain head on the merged set; the encoder and task head are
// frozen. Reports domain accuracy on a held-out slice.
DiscTrainReport train_domain_discriminator(ModelState& state,
                                           const Tokenizer& tokenizer,
                                           const MergedSet& merged,
                                           const AdaptationConfig& cfg);

// Predicts a class for every target example and keeps those whose softmax
// confidence reaches tau. Throws ValidationError when nothing survives.
PseudoLabeledSet pseudo_label(const ModelState& state, const Tokenizer& tokenizer,
                              const DomainCorpus& target, double tau,
                              int generation_epoch = 0);

// The full adaptation phase: refresh pseudo-labels on schedule, build the
// adversarial mixup per batch (or per epoch), and take optimizer steps on
// L_all = L_ce(clean) + lambda * L_con(perturbed). The domain head is frozen
// throughout.
TrainTrace adapt(ModelState& state, const Tokenizer& tokenizer,
                 const DomainCorpus& source, const DomainCorpus& target,
                 const AdaptationConfig& cfg);

// Plain pseudo-label self-training: cross-entropy on source labels plus
// surviving pseudo-labels, nothing else. Written as its own loop so the
// (lambda = 0, epsilon = 0) configuration of adapt() can be checked against
// an independent implementation.
TrainTrace self_train(ModelState& state, const Tokenizer& tokenizer,
                      const DomainCorpus& source, const DomainCorpus& target,
                      const AdaptationConfig& cfg);

struct DomainSeparability {
  double clean_accuracy = 0.0;
  double perturbed_accuracy = 0.0;
};

// Discriminator domain accuracy on clean z and on perturbed z' for the same
// batches; measures how much the mixup erodes domain separability.
DomainSeparability domain_separability(const ModelState& state,
                                       const Tokenizer& tokenizer,
                                       const MergedSet& merged,
                                       const PerturbationConfig& pcfg,
                                       int batch_size);

}  // namespace cadm
