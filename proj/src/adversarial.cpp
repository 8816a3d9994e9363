#include "cadm/adversarial.hpp"

#include <cmath>

#include "cadm/errors.hpp"
#include "cadm/log.hpp"

namespace cadm {

const char* perturb_norm_name(PerturbNorm n) {
  return n == PerturbNorm::L2 ? "l2" : "linf";
}

PerturbNorm perturb_norm_from_name(const std::string& name) {
  if (name == "l2") return PerturbNorm::L2;
  if (name == "linf") return PerturbNorm::LInf;
  throw ConfigError("unknown perturbation norm '" + name + "' (expected l2 or linf)");
}

void PerturbationConfig::validate() const {
  if (epsilon < 0.0) {
    throw ContractError("perturbation epsilon must be >= 0");
  }
  if (steps < 1) {
    throw ContractError("pgd steps must be >= 1");
  }
  if (step_size < 0.0) {
    throw ContractError("pgd step_size must be positive (or 0 for automatic)");
  }
}

double PerturbationConfig::resolved_step_size(double epsilon_abs) const {
  if (step_size > 0.0) return step_size;
  return 2.5 * epsilon_abs / static_cast<double>(steps);
}

PerturbationConfig PerturbationConfig::with_absolute_epsilon(double epsilon_abs) const {
  PerturbationConfig out = *this;
  out.epsilon = epsilon_abs;
  out.epsilon_mode = EpsilonMode::Absolute;
  return out;
}

std::vector<int> MixupSet::source_rows() const {
  std::vector<int> rows;
  for (Index i = 0; i < domain.size(); ++i) {
    if (domain(i) == 0) rows.push_back(static_cast<int>(i));
  }
  return rows;
}

std::vector<int> MixupSet::target_rows() const {
  std::vector<int> rows;
  for (Index i = 0; i < domain.size(); ++i) {
    if (domain(i) == 1) rows.push_back(static_cast<int>(i));
  }
  return rows;
}

double max_row_norm(const Matrix& delta, PerturbNorm norm) {
  double worst = 0.0;
  for (Index r = 0; r < delta.rows(); ++r) {
    const double n = norm == PerturbNorm::L2 ? delta.row(r).norm()
                                             : delta.row(r).lpNorm<Eigen::Infinity>();
    worst = std::max(worst, n);
  }
  return worst;
}

namespace {

void project_rows(Matrix& delta, PerturbNorm norm, double epsilon) {
  if (norm == PerturbNorm::L2) {
    for (Index r = 0; r < delta.rows(); ++r) {
      const double n = delta.row(r).norm();
      if (n > epsilon) delta.row(r) *= epsilon / n;
    }
  } else {
    delta = delta.cwiseMax(-epsilon).cwiseMin(epsilon);
  }
}

Matrix random_in_ball(Index rows, Index cols, PerturbNorm norm, double epsilon,
                      Rng& rng) {
  Matrix delta(rows, cols);
  if (norm == PerturbNorm::L2) {
    for (Index r = 0; r < rows; ++r) {
      Vector dir(cols);
      for (Index c = 0; c < cols; ++c) dir(c) = rng.normal();
      const double n = dir.norm();
      if (n == 0.0) {
        delta.row(r).setZero();
        continue;
      }
      const double radius =
          epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(cols));
      delta.row(r) = dir.transpose() * (radius / n);
    }
  } else {
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) delta(r, c) = rng.uniform(-epsilon, epsilon);
  }
  return delta;
}

}  // namespace

Matrix domain_adversarial_perturbation(const ModelState& state, const Matrix& z,
                                       const IntVector& y_domain,
                                       const PerturbationConfig& pcfg, Rng* rng) {
  pcfg.validate();
  if (pcfg.epsilon_mode != EpsilonMode::Absolute) {
    throw ContractError(
        "domain_adversarial_perturbation needs an absolute epsilon; resolve the "
        "relative budget first (with_absolute_epsilon)");
  }
  if (!z.allFinite()) {
    throw NumericError("perturbation input representations are non-finite");
  }
  const double epsilon = pcfg.epsilon;
  if (epsilon == 0.0) {
    return Matrix::Zero(z.rows(), z.cols());
  }

  const double alpha = pcfg.resolved_step_size(epsilon);

  // Loss at delta = 0 is the monotonicity baseline; it seeds best-so-far even
  // under a random start.
  Vector best_loss = domain_bce_per_row(state, z, y_domain);
  Matrix best_delta = Matrix::Zero(z.rows(), z.cols());

  Matrix delta;
  if (pcfg.random_start) {
    if (rng == nullptr) {
      throw ContractError("random_start requires an rng");
    }
    delta = random_in_ball(z.rows(), z.cols(), pcfg.norm, epsilon, *rng);
    const Vector loss = domain_bce_per_row(state, z + delta, y_domain);
    for (Index r = 0; r < z.rows(); ++r) {
      if (loss(r) > best_loss(r)) {
        best_loss(r) = loss(r);
        best_delta.row(r) = delta.row(r);
      }
    }
  } else {
    delta = Matrix::Zero(z.rows(), z.cols());
  }

  for (int step = 0; step < pcfg.steps; ++step) {
    const Matrix grad = domain_bce_grad_z(state, z + delta, y_domain);

    if (pcfg.norm == PerturbNorm::L2) {
      for (Index r = 0; r < grad.rows(); ++r) {
        const double n = grad.row(r).norm();
        if (n > 0.0) delta.row(r) += (alpha / n) * grad.row(r);
      }
    } else {
      delta += alpha * grad.array().sign().matrix();
    }
    project_rows(delta, pcfg.norm, epsilon);

    const Vector loss = domain_bce_per_row(state, z + delta, y_domain);
    for (Index r = 0; r < z.rows(); ++r) {
      if (loss(r) > best_loss(r)) {
        best_loss(r) = loss(r);
        best_delta.row(r) = delta.row(r);
      }
    }
  }

  return pcfg.keep_best ? best_delta : delta;
}

std::optional<MixupSet> build_adversarial_mixup(const ModelState& state,
                                                const TokenBatch& batch,
                                                const PerturbationConfig& pcfg,
                                                Rng* rng) {
  batch.validate(state.config);

  int n_source = 0;
  int n_target = 0;
  for (Index r = 0; r < batch.rows(); ++r) {
    if (batch.domain(r) == 0) {
      if (batch.task_label(r) < 0) {
        throw ContractError("mixup source row " + std::to_string(r) +
                            " is missing its task label");
      }
      ++n_source;
    } else {
      if (batch.pseudo_label(r) < 0) {
        throw ContractError("mixup target row " + std::to_string(r) +
                            " is missing its pseudo-label; filter upstream");
      }
      ++n_target;
    }
  }
  if (n_source == 0 || n_target == 0) {
    log_warn("mixup batch skipped: needs rows from both domains (got " +
             std::to_string(n_source) + " source, " + std::to_string(n_target) +
             " target)");
    return std::nullopt;
  }

  const Matrix z = encode_forward(state, batch, nullptr);

  PerturbationConfig resolved = pcfg;
  if (pcfg.epsilon_mode == EpsilonMode::Relative) {
    const double mean_norm = z.rowwise().norm().mean();
    resolved = pcfg.with_absolute_epsilon(pcfg.epsilon * mean_norm);
  }

  MixupSet mix;
  mix.delta = domain_adversarial_perturbation(state, z, batch.domain, resolved, rng);
  mix.z_prime = z + mix.delta;
  mix.label = batch.effective_label();
  mix.domain = batch.domain;
  return mix;
}

}  // namespace cadm
