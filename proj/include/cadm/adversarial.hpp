#pragma once

#include <optional>
#include <vector>

#include "cadm/model.hpp"
#include "cadm/random.hpp"
#include "cadm/types.hpp"

namespace cadm {

enum class PerturbNorm { L2, LInf };
enum class EpsilonMode { Relative, Absolute };

const char* perturb_norm_name(PerturbNorm n);
PerturbNorm perturb_norm_from_name(const std::string& name);

struct PerturbationConfig {
  double epsilon = 0.1;
  // Relative: budget = epsilon * (mean representation norm); the trainer
  // resolves it against the running mean over the current epoch, the
  // standalone mixup op against the batch at hand.
  EpsilonMode epsilon_mode = EpsilonMode::Relative;
  PerturbNorm norm = PerturbNorm::L2;
  int steps = 5;
  double step_size = 0.0;  // <= 0 selects 2.5 * epsilon / steps
  bool keep_best = true;   // return the best iterate, not the last
  bool random_start = false;

  void validate() const;
  double resolved_step_size(double epsilon_abs) const;
  PerturbationConfig with_absolute_epsilon(double epsilon_abs) const;
};

// The adversarial domain mixup: perturbed representations z' = z + delta for
// a merged batch, partitioned by domain. delta is a constant downstream;
// gradients flow through z only.
struct MixupSet {
  Matrix z_prime;
  Matrix delta;
  IntVector label;   // y on source rows, pseudo-label on target rows
  IntVector domain;  // y_D

  std::vector<int> source_rows() const;
  std::vector<int> target_rows() const;
};

// Projected gradient ascent on the per-row discriminator loss
// l(f_D(z + delta), y_D), constrained to the epsilon-ball of the configured
// norm. Model parameters are untouched; the returned delta is detached.
// Requires an absolute epsilon (resolve relative budgets first); rng is only
// needed when random_start is set.
Matrix domain_adversarial_perturbation(const ModelState& state, const Matrix& z,
                                       const IntVector& y_domain,
                                       const PerturbationConfig& pcfg,
                                       Rng* rng = nullptr);

// Encodes the batch, perturbs every row, and assembles the mixup. Returns
// nullopt (with a logged warning) when the batch lacks one of the domains:
// the contrastive loss needs both.
std::optional<MixupSet> build_adversarial_mixup(const ModelState& state,
                                                const TokenBatch& batch,
                                                const PerturbationConfig& pcfg,
                                                Rng* rng = nullptr);

// Largest per-row norm of delta under the configured geometry; tests use it
// to assert the ball constraint.
double max_row_norm(const Matrix& delta, PerturbNorm norm);

}  // namespace cadm
