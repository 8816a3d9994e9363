#pragma once

// Shared test utilities. The oracles here are written independently of the
// library's production paths: the contrastive-loss oracle is a literal
// quadruple-nested-loop transcription of the class-aware objective, and the
// finite-difference helpers recompute losses through the public forward
// functions only.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cadm/corpus.hpp"
#include "cadm/model.hpp"
#include "cadm/random.hpp"
#include "cadm/trainer.hpp"
#include "cadm/types.hpp"

namespace cadm_test {

using cadm::Index;
using cadm::IntVector;
using cadm::Matrix;
using cadm::Vector;

// ---------------------------------------------------------------------------
// Contrastive-loss oracle: the four-term class-aware loss written exactly as
// the double sums with indicator-normalized denominators, one scalar kernel
// evaluation at a time. Terms whose denominator is zero are dropped.

inline double oracle_kernel(const Matrix& z, int i, int j,
                            const std::vector<double>& sigmas) {
  double acc = 0.0;
  for (const double s : sigmas) {
    acc += std::exp(-(z.row(i) - z.row(j)).squaredNorm() / (2.0 * s * s));
  }
  return acc / static_cast<double>(sigmas.size());
}

inline double contrastive_loss_loop_oracle(const Matrix& z, const IntVector& domain,
                                           const IntVector& label,
                                           const std::vector<double>& sigmas) {
  std::vector<int> s_rows, t_rows;
  for (Index r = 0; r < z.rows(); ++r) {
    (domain(r) == 0 ? s_rows : t_rows).push_back(static_cast<int>(r));
  }

  double loss = 0.0;

  // Cross-domain attraction, class c on both sides, negative sign.
  for (const int c : {0, 1}) {
    for (const int i : s_rows) {
      for (const int j : t_rows) {
        if (!(label(i) == c && label(j) == c)) continue;
        double denom = 0.0;
        for (const int l : s_rows) {
          for (const int m : t_rows) {
            if (label(l) == c && label(m) == c) denom += 1.0;
          }
        }
        loss -= oracle_kernel(z, i, j, sigmas) / denom;
      }
    }
  }

  // Within-source separation, class 1 against class 0, positive sign.
  for (const int i : s_rows) {
    for (const int j : s_rows) {
      if (!(label(i) == 1 && label(j) == 0)) continue;
      double denom = 0.0;
      for (const int l : s_rows) {
        for (const int m : s_rows) {
          if (label(l) == 1 && label(m) == 0) denom += 1.0;
        }
      }
      loss += oracle_kernel(z, i, j, sigmas) / denom;
    }
  }

  // Within-target separation on pseudo-labels.
  for (const int i : t_rows) {
    for (const int j : t_rows) {
      if (!(label(i) == 1 && label(j) == 0)) continue;
      double denom = 0.0;
      for (const int l : t_rows) {
        for (const int m : t_rows) {
          if (label(l) == 1 && label(m) == 0) denom += 1.0;
        }
      }
      loss += oracle_kernel(z, i, j, sigmas) / denom;
    }
  }

  return loss;
}

// ---------------------------------------------------------------------------
// Finite differences.

inline Matrix finite_difference(const Matrix& x,
                                const std::function<double(const Matrix&)>& f,
                                double h = 1e-5) {
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      probe(r, c) = x(r, c) + h;
      const double fp = f(probe);
      probe(r, c) = x(r, c) - h;
      const double fm = f(probe);
      probe(r, c) = x(r, c);
      grad(r, c) = (fp - fm) / (2.0 * h);
    }
  }
  return grad;
}

// Max relative error with a small absolute floor so exact zeros compare
// cleanly.
inline double max_relative_error(const Matrix& a, const Matrix& b,
                                 double floor = 1e-7) {
  double worst = 0.0;
  for (Index r = 0; r < a.rows(); ++r) {
    for (Index c = 0; c < a.cols(); ++c) {
      const double denom = std::max({std::abs(a(r, c)), std::abs(b(r, c)), floor});
      worst = std::max(worst, std::abs(a(r, c) - b(r, c)) / denom);
    }
  }
  return worst;
}

// FD check of a parameter group against an analytic gradient accumulator.
// `loss` must recompute the loss from the (mutated) state.
inline double param_group_fd_error(cadm::ModelState& state, cadm::ParamGroup group,
                                   const cadm::ModelState& analytic_grads,
                                   const std::function<double()>& loss,
                                   double h = 1e-5, double floor = 1e-7) {
  const auto views = cadm::param_views(state, group);
  const auto grad_views =
      cadm::param_views(const_cast<const cadm::ModelState&>(analytic_grads), group);
  double worst = 0.0;
  for (std::size_t t = 0; t < views.size(); ++t) {
    for (Index i = 0; i < views[t].size; ++i) {
      const double saved = views[t].data[i];
      views[t].data[i] = saved + h;
      const double fp = loss();
      views[t].data[i] = saved - h;
      const double fm = loss();
      views[t].data[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = grad_views[t].data[i];
      const double denom = std::max({std::abs(fd), std::abs(an), floor});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Small corpora and batches.

inline cadm::DomainCorpus tiny_corpus(cadm::Domain domain, int n, std::uint64_t seed,
                                      const std::string& name = "tiny") {
  cadm::Rng rng(seed);
  std::vector<cadm::Example> examples;
  const char* words[] = {"alpha", "beta", "gamma", "delta", "omega",
                         "kappa", "sigma", "tau",   "phi",   "chi"};
  for (int i = 0; i < n; ++i) {
    std::string text;
    const int len = 3 + rng.uniform_int(5);
    for (int t = 0; t < len; ++t) {
      if (!text.empty()) text += ' ';
      text += words[rng.uniform_int(10)];
    }
    examples.push_back({name + std::to_string(i), text, i % 2});
  }
  return cadm::DomainCorpus::make(domain, name, std::move(examples));
}

// Random token batch with a mix of domains and labels.
inline cadm::TokenBatch random_batch(const cadm::EncoderConfig& cfg, int n_source,
                                     int n_target, std::uint64_t seed,
                                     std::vector<std::vector<int>>& storage) {
  cadm::Rng rng(seed);
  storage.clear();
  std::vector<cadm::BatchRow> rows;
  for (int i = 0; i < n_source + n_target; ++i) {
    const int len = 2 + rng.uniform_int(std::min(6, cfg.max_sequence_length - 1));
    std::vector<int> ids;
    for (int t = 0; t < len; ++t) {
      ids.push_back(1 + rng.uniform_int(cfg.vocab_size - 1));
    }
    storage.push_back(std::move(ids));
  }
  for (int i = 0; i < n_source + n_target; ++i) {
    cadm::BatchRow row;
    row.ids = &storage[static_cast<std::size_t>(i)];
    row.domain = i < n_source ? 0 : 1;
    const int label = rng.uniform_int(2);
    if (row.domain == 0) {
      row.task_label = label;
    } else {
      row.pseudo_label = label;
      row.confidence = 0.9;
    }
    rows.push_back(row);
  }
  return cadm::make_token_batch(rows, cfg);
}

inline bool traces_equal(const cadm::TrainTrace& a, const cadm::TrainTrace& b) {
  if (a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const auto& sa = a.steps[i];
    const auto& sb = b.steps[i];
    if (sa.step != sb.step || sa.epoch != sb.epoch) return false;
    if (sa.loss.l_ce != sb.loss.l_ce || sa.loss.l_con != sb.loss.l_con ||
        sa.loss.l_all != sb.loss.l_all) {
      return false;
    }
  }
  return true;
}

}  // namespace cadm_test
