#include "cadm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "cadm/errors.hpp"
#include "cadm/log.hpp"
#include "cadm/optimizer.hpp"

namespace cadm {

namespace {

// Batch-order stream tags per phase. adapt() and self_train() share one tag
// on purpose: the ablation identity requires both loops to see the same
// permutations.
constexpr std::uint64_t kPhasePretrain = 101;
constexpr std::uint64_t kPhaseDisc = 102;
constexpr std::uint64_t kPhaseAdapt = 103;

struct TokenizedCorpus {
  std::vector<std::vector<int>> rows;
};

TokenizedCorpus tokenize_corpus(const Tokenizer& tokenizer,
                                const DomainCorpus& corpus) {
  TokenizedCorpus out;
  out.rows.reserve(corpus.size());
  for (const auto& ex : corpus.examples()) {
    out.rows.push_back(tokenizer.encode_text(ex.text));
  }
  return out;
}

struct PoolRow {
  const std::vector<int>* ids = nullptr;
  int domain = 0;
  int task_label = -1;
  int pseudo_label = -1;
  double confidence = 0.0;
};

// Source rows in corpus order, then surviving target rows in corpus order.
std::vector<PoolRow> build_adaptation_pool(const DomainCorpus& source,
                                           const TokenizedCorpus& source_tok,
                                           const DomainCorpus& target,
                                           const TokenizedCorpus& target_tok,
                                           const PseudoLabeledSet& pls) {
  std::vector<PoolRow> pool;
  pool.reserve(source.size() + pls.ids.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    PoolRow row;
    row.ids = &source_tok.rows[i];
    row.domain = 0;
    row.task_label = *source.examples()[i].label;
    pool.push_back(row);
  }
  std::unordered_map<std::string, std::pair<int, double>> survivors;
  survivors.reserve(pls.ids.size());
  for (std::size_t i = 0; i < pls.ids.size(); ++i) {
    survivors.emplace(pls.ids[i], std::make_pair(pls.labels[i], pls.confidences[i]));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto it = survivors.find(target.examples()[i].id);
    if (it == survivors.end()) continue;
    PoolRow row;
    row.ids = &target_tok.rows[i];
    row.domain = 1;
    row.pseudo_label = it->second.first;
    row.confidence = it->second.second;
    pool.push_back(row);
  }
  return pool;
}

TokenBatch pool_batch(const std::vector<PoolRow>& pool, const std::vector<int>& idx,
                      const EncoderConfig& cfg) {
  std::vector<BatchRow> rows;
  rows.reserve(idx.size());
  for (const int i : idx) {
    const PoolRow& p = pool[static_cast<std::size_t>(i)];
    rows.push_back({p.ids, p.domain, p.task_label, p.pseudo_label, p.confidence});
  }
  return make_token_batch(rows, cfg);
}

std::vector<ConstTensorView> grad_views(const ModelState& grads, ParamGroup group) {
  return param_views(grads, group);
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

const char* alternation_name(Alternation a) {
  return a == Alternation::PerBatch ? "per_batch" : "per_epoch";
}

Alternation alternation_from_name(const std::string& name) {
  if (name == "per_batch") return Alternation::PerBatch;
  if (name == "per_epoch") return Alternation::PerEpoch;
  throw ConfigError("unknown alternation '" + name + "'");
}

void AdaptationConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (!(tau > 0.5) || tau > 1.0) {
    throw ConfigError("tau must lie in (0.5, 1]; below 0.5 a binary pseudo-label is meaningless");
  }
  if (pseudo_refresh_every < 1) throw ConfigError("pseudo_refresh_every must be >= 1");
  if (pretrain_epochs < 1 || disc_epochs < 1 || adapt_epochs < 1) {
    throw ConfigError("all epoch counts must be >= 1");
  }
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(lr_encoder > 0.0) || !(lr_heads > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  pgd.validate();
  kernel.validate();
}

std::string describe(const AdaptationConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "lambda = " << cfg.lambda << "\n"
     << "tau = " << cfg.tau << "\n"
     << "pseudo_refresh_every = " << cfg.pseudo_refresh_every << "\n"
     << "refresh_pseudo_labels = " << (cfg.refresh_pseudo_labels ? "true" : "false") << "\n"
     << "pretrain_epochs = " << cfg.pretrain_epochs << "\n"
     << "disc_epochs = " << cfg.disc_epochs << "\n"
     << "adapt_epochs = " << cfg.adapt_epochs << "\n"
     << "alternation = " << alternation_name(cfg.alternation) << "\n"
     << "retrain_disc_on_refresh = " << (cfg.retrain_disc_on_refresh ? "true" : "false") << "\n"
     << "warmup_epochs = " << cfg.warmup_epochs << "\n"
     << "lr_encoder = " << cfg.lr_encoder << "\n"
     << "lr_heads = " << cfg.lr_heads << "\n"
     << "batch_size = " << cfg.batch_size << "\n"
     << "seed = " << cfg.seed << "\n"
     << "pgd.epsilon = " << cfg.pgd.epsilon << "\n"
     << "pgd.epsilon_mode = "
     << (cfg.pgd.epsilon_mode == EpsilonMode::Relative ? "relative" : "absolute") << "\n"
     << "pgd.norm = " << perturb_norm_name(cfg.pgd.norm) << "\n"
     << "pgd.steps = " << cfg.pgd.steps << "\n"
     << "pgd.step_size = " << cfg.pgd.step_size << "\n"
     << "pgd.keep_best = " << (cfg.pgd.keep_best ? "true" : "false") << "\n"
     << "pgd.random_start = " << (cfg.pgd.random_start ? "true" : "false") << "\n"
     << "kernel.mode = " << kernel_mode_name(cfg.kernel.mode) << "\n";
  os << "kernel.bandwidths =";
  for (const double b : cfg.kernel.bandwidths) os << " " << b;
  os << "\nkernel.multipliers =";
  for (const double m : cfg.kernel.multipliers) os << " " << m;
  os << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

TrainTrace pretrain_source(ModelState& state, const Tokenizer& tokenizer,
                           const DomainCorpus& source, const AdaptationConfig& cfg) {
  cfg.validate();
  if (source.domain() != Domain::Source) {
    throw ContractError("pretrain_source expects a source-domain corpus");
  }
  const TokenizedCorpus tokens = tokenize_corpus(tokenizer, source);
  const int n = static_cast<int>(source.size());

  AdamOptimizer adam_enc(cfg.lr_encoder);
  AdamOptimizer adam_task(cfg.lr_heads);

  TrainTrace trace;
  trace.phase = "pretrain";
  trace.seed = cfg.seed;
  trace.config_snapshot = describe(cfg);

  long step = 0;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    const auto batches = epoch_batches(n, cfg.batch_size,
                                       derive_seed(cfg.seed, kPhasePretrain), epoch);
    for (const auto& idx : batches) {
      std::vector<BatchRow> rows;
      rows.reserve(idx.size());
      for (const int i : idx) {
        rows.push_back({&tokens.rows[static_cast<std::size_t>(i)], 0,
                        *source.examples()[static_cast<std::size_t>(i)].label, -1, 0.0});
      }
      const TokenBatch batch = make_token_batch(rows, state.config);

      auto cache = make_encode_cache();
      const Matrix z = encode_forward(state, batch, cache.get());
      const Matrix logits = classify(state, z);
      const double l_ce = task_ce_loss(logits, batch.task_label);

      ModelState grads = zeros_like(state);
      const Matrix dlogits = task_ce_grad_logits(logits, batch.task_label);
      Matrix dz;
      classify_backward(state, z, dlogits, &dz, &grads);
      encode_backward(state, batch, *cache, dz, grads);

      adam_enc.step(param_views(state, ParamGroup::Encoder),
                    grad_views(grads, ParamGroup::Encoder));
      adam_task.step(param_views(state, ParamGroup::TaskHead),
                     grad_views(grads, ParamGroup::TaskHead));
      ++state.pretrain_steps;

      LossReport report;
      report.l_ce = l_ce;
      report.l_all = l_ce;
      trace.steps.push_back({step++, epoch, report});
    }
  }
  return trace;
}

DiscTrainReport train_domain_discriminator(ModelState& state,
                                           const Tokenizer& tokenizer,
                                           const MergedSet& merged,
                                           const AdaptationConfig& cfg) {
  cfg.validate();
  long n_source = 0;
  long n_target = 0;
  for (const auto& e : merged.entries) {
    (e.domain_label == 0 ? n_source : n_target)++;
  }
  if (n_source == 0 || n_target == 0) {
    throw ContractError("discriminator training needs both domains in the merged set");
  }

  std::vector<std::vector<int>> tokens;
  tokens.reserve(merged.entries.size());
  for (const auto& e : merged.entries) {
    tokens.push_back(tokenizer.encode_text(e.example.text));
  }

  const int n = static_cast<int>(merged.entries.size());
  Rng holdout_rng(derive_seed(cfg.seed, seed_tag::kHoldout));
  const std::vector<int> perm = holdout_rng.permutation(n);
  const int n_holdout = std::max(1, n / 10);
  const std::vector<int> holdout(perm.begin(), perm.begin() + n_holdout);
  const std::vector<int> train(perm.begin() + n_holdout, perm.end());

  const auto batch_for = [&](const std::vector<int>& entry_idx) {
    std::vector<BatchRow> rows;
    rows.reserve(entry_idx.size());
    for (const int i : entry_idx) {
      rows.push_back({&tokens[static_cast<std::size_t>(i)],
                      merged.entries[static_cast<std::size_t>(i)].domain_label, -1, -1,
                      0.0});
    }
    return make_token_batch(rows, state.config);
  };

  AdamOptimizer adam_disc(cfg.lr_heads);
  for (int epoch = 0; epoch < cfg.disc_epochs; ++epoch) {
    const auto batches =
        epoch_batches(static_cast<int>(train.size()), cfg.batch_size,
                      derive_seed(cfg.seed, kPhaseDisc), epoch);
    for (const auto& idx : batches) {
      std::vector<int> entry_idx;
      entry_idx.reserve(idx.size());
      for (const int i : idx) entry_idx.push_back(train[static_cast<std::size_t>(i)]);
      const TokenBatch batch = batch_for(entry_idx);

      // Encoder frozen: plain forward, no cache, no encoder gradients.
      const Matrix z = encode_forward(state, batch, nullptr);
      const Vector logits = discriminate(state, z);
      Vector dlogit = sigmoid(logits);
      for (Index r = 0; r < dlogit.size(); ++r) {
        dlogit(r) = (dlogit(r) - static_cast<double>(batch.domain(r))) /
                    static_cast<double>(batch.rows());
      }
      ModelState grads = zeros_like(state);
      discriminate_backward(state, z, dlogit, nullptr, &grads);
      adam_disc.step(param_views(state, ParamGroup::DiscHead),
                     grad_views(grads, ParamGroup::DiscHead));
      ++state.disc_steps;
    }
  }

  long correct = 0;
  const TokenBatch hold_batch = batch_for(holdout);
  const Matrix zh = encode_forward(state, hold_batch, nullptr);
  const Vector lh = discriminate(state, zh);
  for (Index r = 0; r < lh.size(); ++r) {
    const int pred = lh(r) > 0.0 ? 1 : 0;
    if (pred == hold_batch.domain(r)) ++correct;
  }
  DiscTrainReport report;
  report.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(n_holdout);
  report.epochs = cfg.disc_epochs;
  report.train_rows = static_cast<long>(train.size());
  report.holdout_rows = n_holdout;
  if (report.holdout_accuracy < 0.55) {
    log_warn("domain discriminator reached only " +
             std::to_string(report.holdout_accuracy) +
             " held-out accuracy; mixup directions may be noise");
  }
  return report;
}

PseudoLabeledSet pseudo_label(const ModelState& state, const Tokenizer& tokenizer,
                              const DomainCorpus& target, double tau,
                              int generation_epoch) {
  if (!(tau > 0.5) || tau > 1.0) {
    throw ContractError("tau must lie in (0.5, 1]");
  }
  if (target.domain() != Domain::Target) {
    throw ContractError("pseudo_label expects a target-domain corpus");
  }
  if (state.pretrain_steps == 0) {
    throw ContractError("pseudo_label requires a source-pretrained model");
  }

  const TokenizedCorpus tokens = tokenize_corpus(tokenizer, target);
  PseudoLabeledSet out;
  out.generation_epoch = generation_epoch;
  out.target_size = target.size();

  constexpr int kEvalBatch = 64;
  const int n = static_cast<int>(target.size());
  for (int at = 0; at < n; at += kEvalBatch) {
    const int end = std::min(n, at + kEvalBatch);
    std::vector<BatchRow> rows;
    for (int i = at; i < end; ++i) {
      rows.push_back({&tokens.rows[static_cast<std::size_t>(i)], 1, -1, -1, 0.0});
    }
    const TokenBatch batch = make_token_batch(rows, state.config);
    const ReprBatch repr = encode(state, batch);
    const Matrix logits = classify(state, repr.z);
    for (Index r = 0; r < logits.rows(); ++r) {
      const double margin = std::abs(logits(r, 1) - logits(r, 0));
      const double confidence = 1.0 / (1.0 + std::exp(-margin));
      if (confidence >= tau) {
        const int i = at + static_cast<int>(r);
        out.ids.push_back(target.examples()[static_cast<std::size_t>(i)].id);
        out.labels.push_back(logits(r, 1) > logits(r, 0) ? 1 : 0);
        out.confidences.push_back(confidence);
      }
    }
  }

  if (out.ids.empty()) {
    throw ValidationError(
        "no pseudo-labels survived tau = " + std::to_string(tau) +
        "; lower tau or pretrain longer, adaptation cannot proceed without them");
  }
  return out;
}

DomainSeparability domain_separability(const ModelState& state,
                                       const Tokenizer& tokenizer,
                                       const MergedSet& merged,
                                       const PerturbationConfig& pcfg,
                                       int batch_size) {
  std::vector<std::vector<int>> tokens;
  tokens.reserve(merged.entries.size());
  for (const auto& e : merged.entries) {
    tokens.push_back(tokenizer.encode_text(e.example.text));
  }
  PerturbationConfig probe_cfg = pcfg;
  probe_cfg.random_start = false;  // the probe is a deterministic measurement

  long clean_correct = 0;
  long perturbed_correct = 0;
  const int n = static_cast<int>(merged.entries.size());
  for (int at = 0; at < n; at += batch_size) {
    const int end = std::min(n, at + batch_size);
    std::vector<BatchRow> rows;
    for (int i = at; i < end; ++i) {
      rows.push_back({&tokens[static_cast<std::size_t>(i)],
                      merged.entries[static_cast<std::size_t>(i)].domain_label, -1, -1,
                      0.0});
    }
    const TokenBatch batch = make_token_batch(rows, state.config);
    const Matrix z = encode_forward(state, batch, nullptr);

    PerturbationConfig resolved = probe_cfg;
    if (probe_cfg.epsilon_mode == EpsilonMode::Relative) {
      resolved = probe_cfg.with_absolute_epsilon(probe_cfg.epsilon *
                                                 z.rowwise().norm().mean());
    }
    const Matrix delta =
        domain_adversarial_perturbation(state, z, batch.domain, resolved);

    const Vector clean_logits = discriminate(state, z);
    const Vector pert_logits = discriminate(state, z + delta);
    for (Index r = 0; r < clean_logits.size(); ++r) {
      if ((clean_logits(r) > 0.0 ? 1 : 0) == batch.domain(r)) ++clean_correct;
      if ((pert_logits(r) > 0.0 ? 1 : 0) == batch.domain(r)) ++perturbed_correct;
    }
  }
  DomainSeparability sep;
  sep.clean_accuracy = static_cast<double>(clean_correct) / static_cast<double>(n);
  sep.perturbed_accuracy =
      static_cast<double>(perturbed_correct) / static_cast<double>(n);
  return sep;
}

// ---------------------------------------------------------------------------

TrainTrace adapt(ModelState& state, const Tokenizer& tokenizer,
                 const DomainCorpus& source, const DomainCorpus& target,
                 const AdaptationConfig& cfg) {
  cfg.validate();
  if (source.domain() != Domain::Source || target.domain() != Domain::Target) {
    throw ContractError("adapt expects (source, target) corpora in that order");
  }
  if (state.pretrain_steps == 0) {
    throw ContractError("adapt requires a source-pretrained model");
  }
  if (state.disc_steps == 0) {
    throw ContractError("adapt requires a trained domain discriminator");
  }

  const TokenizedCorpus source_tok = tokenize_corpus(tokenizer, source);
  const TokenizedCorpus target_tok = tokenize_corpus(tokenizer, target);
  const MergedSet merged = merge_domains(source, target);
  const int d = state.config.repr_dim;

  AdamOptimizer adam_enc(cfg.lr_encoder);
  AdamOptimizer adam_task(cfg.lr_heads);

  TrainTrace trace;
  trace.phase = "adapt";
  trace.seed = cfg.seed;
  trace.config_snapshot = describe(cfg);

  PseudoLabeledSet pls;
  std::vector<PoolRow> pool;
  long step = 0;
  int consecutive_skips = 0;

  for (int epoch = 0; epoch < cfg.adapt_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();

    const bool refresh =
        epoch == 0 || (cfg.refresh_pseudo_labels && epoch % cfg.pseudo_refresh_every == 0);
    if (refresh) {
      pls = pseudo_label(state, tokenizer, target, cfg.tau, epoch);
      pool = build_adaptation_pool(source, source_tok, target, target_tok, pls);
      if (cfg.retrain_disc_on_refresh && epoch > 0) {
        train_domain_discriminator(state, tokenizer, merged, cfg);
      }
    }

    // Per-epoch running mean of ||z|| resolves relative epsilon budgets.
    double norm_sum = 0.0;
    long norm_count = 0;

    // Per-epoch alternation: one mixup construction against the parameters
    // at epoch start, reused by every batch of the epoch.
    Matrix delta_pool;
    if (cfg.lambda > 0.0 && cfg.alternation == Alternation::PerEpoch) {
      const int pn = static_cast<int>(pool.size());
      Matrix z_pool(pn, d);
      IntVector pool_domain(pn);
      for (int at = 0; at < pn; at += cfg.batch_size) {
        const int end = std::min(pn, at + cfg.batch_size);
        std::vector<int> idx(static_cast<std::size_t>(end - at));
        for (int i = at; i < end; ++i) idx[static_cast<std::size_t>(i - at)] = i;
        const TokenBatch tb = pool_batch(pool, idx, state.config);
        z_pool.middleRows(at, end - at) = encode_forward(state, tb, nullptr);
        pool_domain.segment(at, end - at) = tb.domain;
      }
      PerturbationConfig resolved = cfg.pgd;
      if (cfg.pgd.epsilon_mode == EpsilonMode::Relative) {
        resolved =
            cfg.pgd.with_absolute_epsilon(cfg.pgd.epsilon * z_pool.rowwise().norm().mean());
      }
      Rng pgd_rng(derive_seed(derive_seed(cfg.seed, seed_tag::kPgdStart),
                              static_cast<std::uint64_t>(epoch)));
      delta_pool =
          domain_adversarial_perturbation(state, z_pool, pool_domain, resolved, &pgd_rng);
    }

    const auto batches =
        epoch_batches(static_cast<int>(pool.size()), cfg.batch_size,
                      derive_seed(cfg.seed, kPhaseAdapt), epoch);
    long batch_index = -1;
    for (const auto& idx : batches) {
      ++batch_index;
      const TokenBatch tb = pool_batch(pool, idx, state.config);

      bool has_source = false;
      bool has_target = false;
      for (Index r = 0; r < tb.rows(); ++r) {
        (tb.domain(r) == 0 ? has_source : has_target) = true;
      }
      if (cfg.lambda > 0.0 && (!has_source || !has_target)) {
        log_warn("adaptation batch skipped: contrastive loss needs both domains");
        continue;
      }

      try {
        auto cache = make_encode_cache();
        const Matrix z = encode_forward(state, tb, cache.get());

        norm_sum += z.rowwise().norm().sum();
        norm_count += static_cast<long>(z.rows());

        ModelState grads = zeros_like(state);
        Matrix dz_total = Matrix::Zero(z.rows(), z.cols());

        // Cross-entropy on clean representations. During warm-up epochs only
        // source rows contribute.
        std::vector<int> ce_rows;
        for (Index r = 0; r < tb.rows(); ++r) {
          if (epoch < cfg.warmup_epochs && tb.domain(r) != 0) continue;
          ce_rows.push_back(static_cast<int>(r));
        }
        double l_ce = 0.0;
        if (!ce_rows.empty()) {
          Matrix z_ce(static_cast<Index>(ce_rows.size()), d);
          IntVector y_ce(static_cast<Index>(ce_rows.size()));
          const IntVector all_labels = tb.effective_label();
          for (std::size_t i = 0; i < ce_rows.size(); ++i) {
            z_ce.row(static_cast<Index>(i)) = z.row(ce_rows[i]);
            y_ce(static_cast<Index>(i)) = all_labels(ce_rows[i]);
          }
          const Matrix logits = classify(state, z_ce);
          l_ce = task_ce_loss(logits, y_ce);
          const Matrix dlogits = task_ce_grad_logits(logits, y_ce);
          Matrix dz_ce;
          classify_backward(state, z_ce, dlogits, &dz_ce, &grads);
          for (std::size_t i = 0; i < ce_rows.size(); ++i) {
            dz_total.row(ce_rows[i]) += dz_ce.row(static_cast<Index>(i));
          }
        }

        // Contrastive adaptation on the perturbed representations. delta is
        // detached: gradients reach the encoder through z only.
        double l_con = 0.0;
        ContrastiveBreakdown breakdown;
        if (cfg.lambda > 0.0) {
          Matrix delta;
          if (cfg.alternation == Alternation::PerBatch) {
            PerturbationConfig resolved = cfg.pgd;
            if (cfg.pgd.epsilon_mode == EpsilonMode::Relative) {
              resolved = cfg.pgd.with_absolute_epsilon(
                  cfg.pgd.epsilon * (norm_sum / static_cast<double>(norm_count)));
            }
            Rng pgd_rng(derive_seed(
                derive_seed(derive_seed(cfg.seed, seed_tag::kPgdStart),
                            static_cast<std::uint64_t>(epoch)),
                static_cast<std::uint64_t>(batch_index)));
            delta = domain_adversarial_perturbation(state, z, tb.domain, resolved,
                                                    &pgd_rng);
          } else {
            delta.resize(z.rows(), d);
            for (std::size_t i = 0; i < idx.size(); ++i) {
              delta.row(static_cast<Index>(i)) =
                  delta_pool.row(idx[i]);
            }
          }
          const Matrix z_prime = z + delta;
          Matrix grad_con;
          breakdown = contrastive_adaptation_loss(
              z_prime, tb.domain, tb.effective_label(),
              resolve_bandwidths(cfg.kernel, z_prime), &grad_con);
          l_con = breakdown.loss;
          dz_total += cfg.lambda * grad_con;
        }

        const double l_all = total_loss(l_ce, l_con, cfg.lambda);

        encode_backward(state, tb, *cache, dz_total, grads);
        adam_enc.step(param_views(state, ParamGroup::Encoder),
                      grad_views(grads, ParamGroup::Encoder));
        adam_task.step(param_views(state, ParamGroup::TaskHead),
                       grad_views(grads, ParamGroup::TaskHead));
        ++state.adapt_steps;
        consecutive_skips = 0;

        LossReport report;
        report.l_ce = l_ce;
        report.l_con = l_con;
        report.l_all = l_all;
        report.lambda = cfg.lambda;
        report.term = breakdown.term;
        report.pair_count = breakdown.pair_count;
        report.bandwidths = breakdown.bandwidths;
        trace.steps.push_back({step++, epoch, report});
      } catch (const NumericError& e) {
        ++consecutive_skips;
        log_warn("adaptation step skipped (" + std::string(e.what()) + "), " +
                 std::to_string(consecutive_skips) + " consecutive");
        if (consecutive_skips >= 10) {
          throw NumericError("aborting adaptation after 10 consecutive skipped steps; last error: " +
                             std::string(e.what()));
        }
      }
    }

    EpochRecord er;
    er.epoch = epoch;
    const DomainSeparability sep =
        domain_separability(state, tokenizer, merged, cfg.pgd, cfg.batch_size);
    er.disc_accuracy_clean = sep.clean_accuracy;
    er.disc_accuracy_perturbed = sep.perturbed_accuracy;
    er.pseudo_survival_rate = pls.survival_rate();
    er.pseudo_survivors = static_cast<long>(pls.ids.size());
    er.seconds = seconds_since(epoch_start);
    trace.epochs.push_back(er);
  }
  return trace;
}

TrainTrace self_train(ModelState& state, const Tokenizer& tokenizer,
                      const DomainCorpus& source, const DomainCorpus& target,
                      const AdaptationConfig& cfg) {
  cfg.validate();
  if (source.domain() != Domain::Source || target.domain() != Domain::Target) {
    throw ContractError("self_train expects (source, target) corpora in that order");
  }
  if (state.pretrain_steps == 0) {
    throw ContractError("self_train requires a source-pretrained model");
  }

  const TokenizedCorpus source_tok = tokenize_corpus(tokenizer, source);
  const TokenizedCorpus target_tok = tokenize_corpus(tokenizer, target);

  AdamOptimizer adam_enc(cfg.lr_encoder);
  AdamOptimizer adam_task(cfg.lr_heads);

  TrainTrace trace;
  trace.phase = "self_train";
  trace.seed = cfg.seed;
  trace.config_snapshot = describe(cfg);

  PseudoLabeledSet pls;
  std::vector<PoolRow> pool;
  long step = 0;

  for (int epoch = 0; epoch < cfg.adapt_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    if (epoch == 0 ||
        (cfg.refresh_pseudo_labels && epoch % cfg.pseudo_refresh_every == 0)) {
      pls = pseudo_label(state, tokenizer, target, cfg.tau, epoch);
      pool = build_adaptation_pool(source, source_tok, target, target_tok, pls);
    }

    const auto batches =
        epoch_batches(static_cast<int>(pool.size()), cfg.batch_size,
                      derive_seed(cfg.seed, kPhaseAdapt), epoch);
    for (const auto& idx : batches) {
      const TokenBatch tb = pool_batch(pool, idx, state.config);

      auto cache = make_encode_cache();
      const Matrix z = encode_forward(state, tb, cache.get());

      std::vector<int> ce_rows;
      for (Index r = 0; r < tb.rows(); ++r) {
        if (epoch < cfg.warmup_epochs && tb.domain(r) != 0) continue;
        ce_rows.push_back(static_cast<int>(r));
      }

      ModelState grads = zeros_like(state);
      Matrix dz_total = Matrix::Zero(z.rows(), z.cols());
      double l_ce = 0.0;
      if (!ce_rows.empty()) {
        Matrix z_ce(static_cast<Index>(ce_rows.size()), z.cols());
        IntVector y_ce(static_cast<Index>(ce_rows.size()));
        const IntVector all_labels = tb.effective_label();
        for (std::size_t i = 0; i < ce_rows.size(); ++i) {
          z_ce.row(static_cast<Index>(i)) = z.row(ce_rows[i]);
          y_ce(static_cast<Index>(i)) = all_labels(ce_rows[i]);
        }
        const Matrix logits = classify(state, z_ce);
        l_ce = task_ce_loss(logits, y_ce);
        const Matrix dlogits = task_ce_grad_logits(logits, y_ce);
        Matrix dz_ce;
        classify_backward(state, z_ce, dlogits, &dz_ce, &grads);
        for (std::size_t i = 0; i < ce_rows.size(); ++i) {
          dz_total.row(ce_rows[i]) += dz_ce.row(static_cast<Index>(i));
        }
      }

      encode_backward(state, tb, *cache, dz_total, grads);
      adam_enc.step(param_views(state, ParamGroup::Encoder),
                    grad_views(grads, ParamGroup::Encoder));
      adam_task.step(param_views(state, ParamGroup::TaskHead),
                     grad_views(grads, ParamGroup::TaskHead));
      ++state.adapt_steps;

      LossReport report;
      report.l_ce = l_ce;
      report.l_all = l_ce;
      trace.steps.push_back({step++, epoch, report});
    }

    EpochRecord er;
    er.epoch = epoch;
    er.pseudo_survival_rate = pls.survival_rate();
    er.pseudo_survivors = static_cast<long>(pls.ids.size());
    er.seconds = seconds_since(epoch_start);
    trace.epochs.push_back(er);
  }
  return trace;
}

}  // namespace cadm
