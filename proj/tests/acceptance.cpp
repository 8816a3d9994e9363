// Acceptance suite. Each criterion prints exactly one [PASS]/[FAIL] line;
// the process exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <vector>

#include "cadm/adversarial.hpp"
#include "cadm/contrastive.hpp"
#include "cadm/corpus.hpp"
#include "cadm/errors.hpp"
#include "cadm/log.hpp"
#include "cadm/metrics.hpp"
#include "cadm/model.hpp"
#include "cadm/trainer.hpp"
#include "helpers.hpp"

using namespace cadm;
using cadm_test::contrastive_loss_loop_oracle;
using cadm_test::max_relative_error;

namespace {

// Thresholds frozen from the calibration study in docs/calibration.md
// (synthetic shift task, shift_strength 0.8, bag-of-embeddings encoder,
// 3 data seeds x 5 model seeds). Observed minima: unadapted source-target
// gap 0.196, cadm-over-no-adaptation margin 0.190, discriminator holdout
// mean 0.915. Frozen values sit at less than half the observed minima.
constexpr double kPretrainGapMin = 0.10;     // source BA - target BA, unadapted
constexpr double kOrderingMarginMin = 0.08;  // cadm BA - no-adaptation BA
constexpr double kDiscHoldoutMin = 0.90;     // 3-seed mean holdout accuracy

struct Outcome {
  bool passed = true;
  std::string detail;
};

double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", x);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome criterion1_loss_oracle() {
  Outcome out;
  Rng rng(20260801);
  double worst = 0.0;
  for (int trial = 0; trial < 120; ++trial) {
    const int n_source = 1 + rng.uniform_int(16);
    const int n_target = 1 + rng.uniform_int(16);
    const int dim = 2 + rng.uniform_int(7);
    const int n = n_source + n_target;

    const Matrix z = rng.normal_matrix(n, dim, 1.5);
    IntVector domain(n), label(n);
    for (int i = 0; i < n; ++i) {
      domain(i) = i < n_source ? 0 : 1;
      label(i) = rng.uniform_int(2);
    }
    const std::vector<double> sigmas{0.5, 1.0, 2.0};
    const double vec = contrastive_adaptation_loss(z, domain, label, sigmas).loss;
    const double loop = contrastive_loss_loop_oracle(z, domain, label, sigmas);
    worst = std::max(worst, std::abs(vec - loop));
  }
  out.passed = worst < 1e-9;
  out.detail = "max |vectorized - loop| = " + std::to_string(worst) + " over 120 batches";
  return out;
}

Outcome criterion2_gradient_checks() {
  Outcome out;
  EncoderConfig cfg;
  cfg.vocab_size = 24;
  cfg.repr_dim = 6;
  cfg.max_sequence_length = 7;
  cfg.disc_hidden = 10;
  cfg.seed = 12;
  const ModelState state = init_model(cfg);

  Rng rng(77);
  double worst_con = 0.0;
  double worst_dom = 0.0;
  for (int trial = 0; trial < 8; ++trial) {
    const Matrix z = rng.normal_matrix(8, 6, 1.0);
    IntVector domain(8), label(8);
    for (int i = 0; i < 8; ++i) {
      domain(i) = i < 4 ? 0 : 1;
      label(i) = rng.uniform_int(2);
    }
    const std::vector<double> sigmas{0.7, 1.4};

    Matrix grad_con;
    contrastive_adaptation_loss(z, domain, label, sigmas, &grad_con);
    const Matrix fd_con = cadm_test::finite_difference(z, [&](const Matrix& probe) {
      return contrastive_adaptation_loss(probe, domain, label, sigmas).loss;
    });
    worst_con = std::max(worst_con, max_relative_error(grad_con, fd_con));

    const Matrix grad_dom = domain_bce_grad_z(state, z, domain);
    const Matrix fd_dom = cadm_test::finite_difference(z, [&](const Matrix& probe) {
      return domain_bce_per_row(state, probe, domain).sum();
    });
    worst_dom = std::max(worst_dom, max_relative_error(grad_dom, fd_dom));
  }
  out.passed = worst_con < 1e-4 && worst_dom < 1e-4;
  out.detail = "max rel err: dL_con/dz' " + std::to_string(worst_con) +
               ", d(domain loss)/dz " + std::to_string(worst_dom);
  return out;
}

Outcome criterion3_pgd() {
  Outcome out;

  // Constraint, zero-budget identity, and monotonicity over 1000 rows.
  {
    EncoderConfig cfg;
    cfg.vocab_size = 16;
    cfg.repr_dim = 8;
    cfg.max_sequence_length = 4;
    cfg.disc_hidden = 12;
    cfg.seed = 31;
    const ModelState state = init_model(cfg);
    Rng rng(41);
    const Matrix z = rng.normal_matrix(1000, 8, 1.5);
    IntVector y(1000);
    for (Index i = 0; i < 1000; ++i) y(i) = static_cast<int>((i * 13) % 2);

    for (const PerturbNorm norm : {PerturbNorm::L2, PerturbNorm::LInf}) {
      PerturbationConfig pcfg;
      pcfg.epsilon = 0.35;
      pcfg.epsilon_mode = EpsilonMode::Absolute;
      pcfg.norm = norm;
      const Matrix delta = domain_adversarial_perturbation(state, z, y, pcfg);
      if (max_row_norm(delta, norm) > 0.35 + 1e-6) {
        out.passed = false;
        out.detail = "norm bound violated";
        return out;
      }
      const Vector base = domain_bce_per_row(state, z, y);
      const Vector pert = domain_bce_per_row(state, z + delta, y);
      for (Index r = 0; r < 1000; ++r) {
        if (!(pert(r) >= base(r))) {
          out.passed = false;
          out.detail = "keep_best monotonicity violated at row " + std::to_string(r);
          return out;
        }
      }
      PerturbationConfig zero = pcfg;
      zero.epsilon = 0.0;
      if (domain_adversarial_perturbation(state, z, y, zero).cwiseAbs().maxCoeff() !=
          0.0) {
        out.passed = false;
        out.detail = "epsilon = 0 did not return exact zeros";
        return out;
      }
    }
  }

  // Dense random-search oracle in a 3-dimensional representation space.
  {
    EncoderConfig cfg;
    cfg.vocab_size = 16;
    cfg.repr_dim = 3;
    cfg.max_sequence_length = 4;
    cfg.disc_hidden = 12;
    cfg.seed = 32;
    const ModelState state = init_model(cfg);
    Rng rng(43);
    const Matrix z = rng.normal_matrix(8, 3, 1.5);
    IntVector y(8);
    for (Index i = 0; i < 8; ++i) y(i) = static_cast<int>(i % 2);

    const double epsilon = 0.8;
    PerturbationConfig pcfg;
    pcfg.epsilon = epsilon;
    pcfg.epsilon_mode = EpsilonMode::Absolute;
    pcfg.steps = 20;
    const Matrix delta = domain_adversarial_perturbation(state, z, y, pcfg);
    const Vector pgd_loss = domain_bce_per_row(state, z + delta, y);

    const int kSamples = 100000;
    Rng sample_rng(44);
    Matrix candidates(2 * kSamples, 3);
    for (int s = 0; s < kSamples; ++s) {
      Vector dir(3);
      for (int c = 0; c < 3; ++c) dir(c) = sample_rng.normal();
      const double n = dir.norm();
      dir /= n > 0 ? n : 1.0;
      candidates.row(2 * s) =
          dir.transpose() * (epsilon * std::cbrt(sample_rng.uniform()));
      candidates.row(2 * s + 1) = dir.transpose() * epsilon;
    }
    double worst_ratio = 1.0;
    for (Index r = 0; r < 8; ++r) {
      Matrix probe = candidates;
      probe.rowwise() += z.row(r);
      const IntVector yr = IntVector::Constant(probe.rows(), y(r));
      const double oracle = domain_bce_per_row(state, probe, yr).maxCoeff();
      worst_ratio = std::min(worst_ratio, pgd_loss(r) / oracle);
      if (pgd_loss(r) < 0.95 * oracle) {
        out.passed = false;
        out.detail = "PGD reached only " + fmt(pgd_loss(r) / oracle) +
                     " of the oracle optimum at row " + std::to_string(r);
        return out;
      }
    }
    out.detail = "bounds, monotonicity and zero-budget exact; worst PGD/oracle ratio " +
                 fmt(worst_ratio);
  }
  return out;
}

Outcome criterion4_mixup_separability() {
  Outcome out;
  SynthShiftConfig scfg;
  scfg.vocab_size = 512;
  scfg.n_source = 1000;
  scfg.n_target = 1000;
  scfg.shift_strength = 0.8;
  scfg.seed = 2026;
  const SynthCorpora data = generate_synthetic_shift(scfg);

  EncoderConfig mcfg;
  mcfg.vocab_size = 768;
  mcfg.repr_dim = 32;
  mcfg.max_sequence_length = 24;
  mcfg.seed = 0;

  const Tokenizer tok = Tokenizer::fit({&data.source, &data.target}, mcfg.vocab_size);
  const MergedSet merged = merge_domains(data.source, data.target);

  std::vector<double> clean, perturbed, holdout;
  for (const std::uint64_t seed : {1ull, 2ull, 3ull}) {
    EncoderConfig m = mcfg;
    m.seed = seed;
    AdaptationConfig t;
    t.seed = seed;
    t.pretrain_epochs = 3;
    t.disc_epochs = 5;
    t.batch_size = 32;

    ModelState state = init_model(m);
    pretrain_source(state, tok, data.source, t);
    const DiscTrainReport disc = train_domain_discriminator(state, tok, merged, t);
    holdout.push_back(disc.holdout_accuracy);

    const DomainSeparability sep =
        domain_separability(state, tok, merged, t.pgd, t.batch_size);
    clean.push_back(sep.clean_accuracy);
    perturbed.push_back(sep.perturbed_accuracy);
  }

  const double clean_mean = mean(clean);
  const double pert_mean = mean(perturbed);
  const double holdout_mean = mean(holdout);
  out.passed = pert_mean < clean_mean && holdout_mean >= kDiscHoldoutMin;
  out.detail = "disc accuracy clean " + fmt(clean_mean) + " -> perturbed " +
               fmt(pert_mean) + " (3-seed mean), holdout " + fmt(holdout_mean);
  return out;
}

Outcome criterion5_ordering() {
  Outcome out;
  SynthShiftConfig scfg;
  scfg.vocab_size = 512;
  scfg.n_source = 2000;
  scfg.n_target = 2000;
  scfg.shift_strength = 0.8;
  scfg.seed = 2026;
  const SynthCorpora data = generate_synthetic_shift(scfg);

  EncoderConfig mcfg;
  mcfg.vocab_size = 768;
  mcfg.repr_dim = 32;
  mcfg.max_sequence_length = 24;

  const Tokenizer tok = Tokenizer::fit({&data.source, &data.target}, mcfg.vocab_size);
  const MergedSet merged = merge_domains(data.source, data.target);

  std::vector<double> ba_none, ba_self, ba_cadm, gap;
  for (const std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    EncoderConfig m = mcfg;
    m.seed = seed;
    AdaptationConfig t;
    t.seed = seed;
    t.pretrain_epochs = 3;
    t.disc_epochs = 5;
    t.adapt_epochs = 5;
    t.batch_size = 32;
    t.tau = 0.8;
    t.lambda = 1.0;

    ModelState pretrained = init_model(m);
    pretrain_source(pretrained, tok, data.source, t);
    ba_none.push_back(evaluate(pretrained, tok, data.target).balanced_accuracy);
    gap.push_back(evaluate(pretrained, tok, data.source).balanced_accuracy -
                  ba_none.back());

    ModelState self_trained = pretrained;
    self_train(self_trained, tok, data.source, data.target, t);
    ba_self.push_back(evaluate(self_trained, tok, data.target).balanced_accuracy);

    ModelState adapted = pretrained;
    train_domain_discriminator(adapted, tok, merged, t);
    adapt(adapted, tok, data.source, data.target, t);
    ba_cadm.push_back(evaluate(adapted, tok, data.target).balanced_accuracy);
  }

  const double none = mean(ba_none);
  const double self = mean(ba_self);
  const double cadm_ba = mean(ba_cadm);
  const double gap_mean = mean(gap);

  out.passed = cadm_ba > self && self > none &&
               (cadm_ba - none) >= kOrderingMarginMin && gap_mean >= kPretrainGapMin;
  out.detail = "target BA over 5 seeds: no-adaptation " + fmt(none) +
               ", self-training " + fmt(self) + ", cadm " + fmt(cadm_ba) +
               "; unadapted source-target gap " + fmt(gap_mean);
  return out;
}

Outcome criterion6_metrics() {
  Outcome out;
  std::vector<int> pred, label;
  for (int i = 0; i < 8; ++i) { pred.push_back(1); label.push_back(1); }  // TP
  for (int i = 0; i < 2; ++i) { pred.push_back(1); label.push_back(0); }  // FP
  for (int i = 0; i < 6; ++i) { pred.push_back(0); label.push_back(0); }  // TN
  for (int i = 0; i < 2; ++i) { pred.push_back(0); label.push_back(1); }  // FN
  const Metrics m = compute_metrics(pred, label);
  const bool exact = std::abs(m.accuracy - 14.0 / 18.0) < 1e-12 &&
                     std::abs(m.balanced_accuracy - 0.775) < 1e-12 &&
                     std::abs(m.f1 - 0.8) < 1e-12;

  bool balanced_ok = true;
  Rng rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    const int half = 1 + rng.uniform_int(40);
    std::vector<int> y(2 * half), p(2 * half);
    for (int i = 0; i < 2 * half; ++i) {
      y[i] = i < half ? 1 : 0;
      p[i] = rng.uniform_int(2);
    }
    const Metrics mm = compute_metrics(p, y);
    balanced_ok = balanced_ok && std::abs(mm.balanced_accuracy - mm.accuracy) < 1e-12;
  }
  out.passed = exact && balanced_ok;
  out.detail = "fixed confusion matrix exact to 1e-12; BA == accuracy on 100 balanced sets";
  return out;
}

struct SmallPipeline {
  SynthCorpora data;
  Tokenizer tok;
  EncoderConfig mcfg;
  AdaptationConfig tcfg;

  SmallPipeline() {
    SynthShiftConfig scfg;
    scfg.vocab_size = 256;
    scfg.n_source = 200;
    scfg.n_target = 200;
    scfg.shift_strength = 0.8;
    scfg.seed = 13;
    data = generate_synthetic_shift(scfg);
    mcfg.vocab_size = 320;
    mcfg.repr_dim = 16;
    mcfg.max_sequence_length = 24;
    mcfg.seed = 4;
    tok = Tokenizer::fit({&data.source, &data.target}, mcfg.vocab_size);
    tcfg.seed = 4;
    tcfg.pretrain_epochs = 3;
    tcfg.disc_epochs = 2;
    tcfg.adapt_epochs = 2;
    tcfg.batch_size = 16;
    tcfg.tau = 0.6;
    tcfg.lr_encoder = 5e-2;
    tcfg.lr_heads = 5e-2;
  }

  ModelState ready() const {
    ModelState state = init_model(mcfg);
    pretrain_source(state, tok, data.source, tcfg);
    train_domain_discriminator(state, tok, merge_domains(data.source, data.target),
                               tcfg);
    return state;
  }
};

Outcome criterion7_reproducibility_and_contract() {
  Outcome out;
  const SmallPipeline p;

  ModelState a = p.ready();
  ModelState b = p.ready();
  const TrainTrace ta = adapt(a, p.tok, p.data.source, p.data.target, p.tcfg);
  const TrainTrace tb = adapt(b, p.tok, p.data.source, p.data.target, p.tcfg);
  const Metrics ma = evaluate(a, p.tok, p.data.target);
  const Metrics mb = evaluate(b, p.tok, p.data.target);
  const bool reproducible = cadm_test::traces_equal(ta, tb) && params_equal(a, b) &&
                            ma.balanced_accuracy == mb.balanced_accuracy &&
                            ma.tp == mb.tp && ma.f1 == mb.f1;

  // Poison the quarantined target ground truth and adapt again.
  std::unordered_map<std::string, int> poisoned;
  for (const auto& [id, y] : p.data.target.eval_labels()) poisoned[id] = 1 - y;
  const DomainCorpus poisoned_target = p.data.target.with_eval_labels(poisoned);
  ModelState c = p.ready();
  const TrainTrace tc = adapt(c, p.tok, p.data.source, poisoned_target, p.tcfg);
  const bool unsupervised = params_equal(a, c) && cadm_test::traces_equal(ta, tc);

  out.passed = reproducible && unsupervised;
  out.detail = std::string("same seed bit-identical: ") +
               (reproducible ? "yes" : "NO") +
               "; poisoned labels bit-identical: " + (unsupervised ? "yes" : "NO");
  return out;
}

Outcome criterion8_ablation_identity() {
  Outcome out;
  const SmallPipeline p;
  AdaptationConfig ablation = p.tcfg;
  ablation.lambda = 0.0;
  ablation.pgd.epsilon = 0.0;

  ModelState via_adapt = p.ready();
  ModelState via_self = p.ready();
  const TrainTrace ta =
      adapt(via_adapt, p.tok, p.data.source, p.data.target, ablation);
  const TrainTrace ts =
      self_train(via_self, p.tok, p.data.source, p.data.target, ablation);

  const bool same_steps = cadm_test::traces_equal(ta, ts);
  const bool same_params = params_equal(via_adapt, via_self);
  out.passed = same_steps && same_params;
  out.detail = std::string("loss sequences identical: ") + (same_steps ? "yes" : "NO") +
               "; final parameters identical: " + (same_params ? "yes" : "NO") + " (" +
               std::to_string(ta.steps.size()) + " steps)";
  return out;
}

}  // namespace

int main() {
  set_log_quiet(true);

  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> run;
    double budget_seconds;
  };
  const std::vector<Entry> criteria{
      {1, "contrastive loss matches the nested-loop oracle", criterion1_loss_oracle, 10},
      {2, "analytic gradients match central finite differences", criterion2_gradient_checks, 10},
      {3, "PGD constraint, monotonicity and random-search oracle", criterion3_pgd, 60},
      {4, "adversarial mixup reduces domain separability", criterion4_mixup_separability, 180},
      {5, "end-to-end ordering: cadm > self-training > no-adaptation", criterion5_ordering, 600},
      {6, "metric exactness and balanced-set identity", criterion6_metrics, 10},
      {7, "bit-exact reproducibility and the unsupervised contract", criterion7_reproducibility_and_contract, 120},
      {8, "ablation identity with plain self-training", criterion8_ablation_identity, 120},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome.passed = false;
      outcome.detail = std::string("exception: ") + e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (seconds > c.budget_seconds) {
      outcome.passed = false;
      outcome.detail += " (exceeded " + std::to_string(c.budget_seconds) + "s budget)";
    }
    if (!outcome.passed) ++failures;
    std::printf("[%s] criterion %d: %s — %s (%.1fs)\n",
                outcome.passed ? "PASS" : "FAIL", c.id, c.name,
                outcome.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
