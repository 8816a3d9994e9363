#include "cadm/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "cadm/errors.hpp"
#include "cadm/log.hpp"

namespace cadm {

void KernelConfig::validate() const {
  if (mode == Mode::Fixed) {
    if (bandwidths.empty()) {
      throw ContractError("fixed kernel mode needs a non-empty bandwidth list");
    }
    for (const double s : bandwidths) {
      if (!(s > 0.0)) throw ContractError("kernel bandwidths must be positive");
    }
  } else {
    if (multipliers.empty()) {
      throw ContractError("median-heuristic mode needs a non-empty multiplier list");
    }
    for (const double m : multipliers) {
      if (!(m > 0.0)) throw ContractError("kernel multipliers must be positive");
    }
  }
}

const char* kernel_mode_name(KernelConfig::Mode mode) {
  return mode == KernelConfig::Mode::Fixed ? "fixed" : "median_heuristic";
}

KernelConfig::Mode kernel_mode_from_name(const std::string& name) {
  if (name == "fixed") return KernelConfig::Mode::Fixed;
  if (name == "median_heuristic") return KernelConfig::Mode::MedianHeuristic;
  throw ConfigError("unknown kernel mode '" + name + "'");
}

double rbf_kernel(const Vector& z1, const Vector& z2, double sigma) {
  if (z1.size() != z2.size()) {
    throw ContractError("rbf_kernel: dimension mismatch");
  }
  if (!(sigma > 0.0)) {
    throw ContractError("rbf_kernel: sigma must be positive");
  }
  if (!z1.allFinite() || !z2.allFinite()) {
    throw NumericError("rbf_kernel: non-finite input");
  }
  return std::exp(-(z1 - z2).squaredNorm() / (2.0 * sigma * sigma));
}

double multi_bandwidth_kernel(const Vector& z1, const Vector& z2,
                              const std::vector<double>& sigmas) {
  if (sigmas.empty()) {
    throw ContractError("multi_bandwidth_kernel: empty bandwidth set");
  }
  double acc = 0.0;
  for (const double s : sigmas) acc += rbf_kernel(z1, z2, s);
  return acc / static_cast<double>(sigmas.size());
}

double median_pairwise_distance(const Matrix& z) {
  const Index n = z.rows();
  if (n < 2) return 0.0;
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      dists.push_back((z.row(i) - z.row(j)).norm());
    }
  }
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<long>(mid), dists.end());
  return dists[mid];
}

std::vector<double> resolve_bandwidths(const KernelConfig& kcfg, const Matrix& z) {
  kcfg.validate();
  if (kcfg.mode == KernelConfig::Mode::Fixed) {
    return kcfg.bandwidths;
  }
  double base = median_pairwise_distance(z);
  if (!(base > 0.0)) {
    log_warn("median heuristic degenerate (all representations identical); falling back to sigma = 1");
    base = 1.0;
  }
  std::vector<double> sigmas;
  sigmas.reserve(kcfg.multipliers.size());
  for (const double m : kcfg.multipliers) sigmas.push_back(m * base);
  return sigmas;
}

namespace {

// Pairwise squared distances between row sets; Gram-matrix form. Tiny
// negative values from cancellation are clamped to zero.
Matrix pairwise_sqdist(const Matrix& a, const Matrix& b) {
  const Vector na = a.rowwise().squaredNorm();
  const Vector nb = b.rowwise().squaredNorm();
  Matrix d = (-2.0 * (a * b.transpose())).colwise() + na;
  d = d.rowwise() + nb.transpose();
  return d.cwiseMax(0.0);
}

Matrix mean_kernel(const Matrix& sqdist, const std::vector<double>& sigmas) {
  Matrix k = Matrix::Zero(sqdist.rows(), sqdist.cols());
  for (const double s : sigmas) {
    k += (-sqdist / (2.0 * s * s)).array().exp().matrix();
  }
  return k / static_cast<double>(sigmas.size());
}

Matrix gather_rows(const Matrix& z, const std::vector<int>& rows) {
  Matrix out(static_cast<Index>(rows.size()), z.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Index>(i)) = z.row(rows[i]);
  }
  return out;
}

Vector indicator(const IntVector& label, const std::vector<int>& rows, int cls) {
  Vector v(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    v(static_cast<Index>(i)) = label(rows[i]) == cls ? 1.0 : 0.0;
  }
  return v;
}

// Gradient of sum_ij C(i,j) * mean_sigma k_sigma(a_i, b_j) with respect to
// the rows of a and b. For the within-domain terms pass the same matrix for
// both sides and fold C + C^T before calling with accumulate_symmetric.
void accumulate_cross_grad(const Matrix& a, const Matrix& b, const Matrix& sqdist,
                           const Matrix& coeff, const std::vector<double>& sigmas,
                           Matrix& da, Matrix& db) {
  const double inv_count = 1.0 / static_cast<double>(sigmas.size());
  for (const double s : sigmas) {
    const Matrix k = (-sqdist / (2.0 * s * s)).array().exp().matrix();
    const Matrix w = (coeff.array() * k.array()).matrix() * (inv_count / (s * s));
    const Vector row_sum = w.rowwise().sum();
    const Vector col_sum = w.colwise().sum().transpose();
    da += w * b - row_sum.asDiagonal() * a;
    db += w.transpose() * a - col_sum.asDiagonal() * b;
  }
}

void scatter_rows(Matrix& grad, const std::vector<int>& rows, const Matrix& part) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    grad.row(rows[i]) += part.row(static_cast<Index>(i));
  }
}

}  // namespace

ContrastiveBreakdown contrastive_adaptation_loss(const Matrix& z,
                                                 const IntVector& domain,
                                                 const IntVector& label,
                                                 const std::vector<double>& sigmas,
                                                 Matrix* grad_z) {
  if (domain.size() != z.rows() || label.size() != z.rows()) {
    throw ContractError("contrastive loss: domain/label size mismatch");
  }
  if (sigmas.empty()) {
    throw ContractError("contrastive loss: empty bandwidth set");
  }
  for (const double s : sigmas) {
    if (!(s > 0.0)) throw ContractError("contrastive loss: bandwidths must be positive");
  }
  if (!z.allFinite()) {
    throw NumericError("contrastive loss: non-finite representations");
  }
  for (Index r = 0; r < z.rows(); ++r) {
    if (label(r) != 0 && label(r) != 1) {
      throw ContractError(
          "contrastive loss: row " + std::to_string(r) +
          (domain(r) == 1 ? " is missing its pseudo-label" : " is missing its label"));
    }
  }

  ContrastiveBreakdown out;
  out.bandwidths = sigmas;

  std::vector<int> s_rows, t_rows;
  for (Index r = 0; r < z.rows(); ++r) {
    (domain(r) == 0 ? s_rows : t_rows).push_back(static_cast<int>(r));
  }

  const Matrix zs = gather_rows(z, s_rows);
  const Matrix zt = gather_rows(z, t_rows);
  const Vector s0 = indicator(label, s_rows, 0);
  const Vector s1 = indicator(label, s_rows, 1);
  const Vector t0 = indicator(label, t_rows, 0);
  const Vector t1 = indicator(label, t_rows, 1);

  if (grad_z != nullptr) {
    *grad_z = Matrix::Zero(z.rows(), z.cols());
  }
  Matrix dzs = Matrix::Zero(zs.rows(), zs.cols());
  Matrix dzt = Matrix::Zero(zt.rows(), zt.cols());

  // Cross-domain attraction: same class, opposite domains, negative sign.
  if (zs.rows() > 0 && zt.rows() > 0) {
    const Matrix d_st = pairwise_sqdist(zs, zt);
    const Matrix k_st = mean_kernel(d_st, sigmas);
    Matrix coeff = Matrix::Zero(zs.rows(), zt.rows());
    const std::array<std::pair<const Vector*, const Vector*>, 2> cls{
        {{&s0, &t0}, {&s1, &t1}}};
    for (int c = 0; c < 2; ++c) {
      const Vector& a = *cls[static_cast<std::size_t>(c)].first;
      const Vector& b = *cls[static_cast<std::size_t>(c)].second;
      const double count = a.sum() * b.sum();
      out.pair_count[static_cast<std::size_t>(c)] = static_cast<std::int64_t>(count);
      if (count > 0.0) {
        const Matrix mask = a * b.transpose();
        out.term[static_cast<std::size_t>(c)] =
            -(mask.array() * k_st.array()).sum() / count;
        if (grad_z != nullptr) coeff -= mask / count;
      }
    }
    if (grad_z != nullptr && (out.pair_count[0] > 0 || out.pair_count[1] > 0)) {
      accumulate_cross_grad(zs, zt, d_st, coeff, sigmas, dzs, dzt);
    }
  }

  // Within-domain separation: class 1 against class 0, positive sign.
  const auto within_term =
      [&](const Matrix& zx, const Vector& c1v, const Vector& c0v, std::size_t slot,
          Matrix& dzx) {
        if (zx.rows() < 2) return;
        const double count = c1v.sum() * c0v.sum();
        out.pair_count[slot] = static_cast<std::int64_t>(count);
        if (count <= 0.0) return;
        const Matrix d = pairwise_sqdist(zx, zx);
        const Matrix k = mean_kernel(d, sigmas);
        const Matrix mask = c1v * c0v.transpose();
        out.term[slot] = (mask.array() * k.array()).sum() / count;
        if (grad_z != nullptr) {
          // Both endpoints of each ordered pair receive gradient; folding the
          // transpose makes the cross-grad helper handle it in one pass.
          const Matrix coeff = (mask + mask.transpose()) / count;
          Matrix da = Matrix::Zero(zx.rows(), zx.cols());
          Matrix db = Matrix::Zero(zx.rows(), zx.cols());
          accumulate_cross_grad(zx, zx, d, coeff, sigmas, da, db);
          // coeff is symmetric, so da == db and each already counts one
          // endpoint's full contribution.
          dzx += da;
        }
      };
  within_term(zs, s1, s0, 2, dzs);
  within_term(zt, t1, t0, 3, dzt);

  out.loss = out.term[0] + out.term[1] + out.term[2] + out.term[3];

  if (out.pair_count[0] == 0 && out.pair_count[1] == 0 && out.pair_count[2] == 0 &&
      out.pair_count[3] == 0) {
    log_warn("contrastive loss has no valid pairs in any term; returning 0");
  }

  if (grad_z != nullptr) {
    scatter_rows(*grad_z, s_rows, dzs);
    scatter_rows(*grad_z, t_rows, dzt);
    if (!grad_z->allFinite()) {
      throw NumericError("contrastive loss gradient is non-finite");
    }
  }
  return out;
}

ContrastiveBreakdown contrastive_adaptation_loss(const MixupSet& mix,
                                                 const KernelConfig& kcfg,
                                                 Matrix* grad_z) {
  const std::vector<double> sigmas = resolve_bandwidths(kcfg, mix.z_prime);
  return contrastive_adaptation_loss(mix.z_prime, mix.domain, mix.label, sigmas,
                                     grad_z);
}

double task_ce_loss(const Matrix& logits, const IntVector& labels) {
  if (labels.size() != logits.rows() || logits.cols() != 2) {
    throw ContractError("task_ce_loss: shape mismatch");
  }
  double total = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const int y = labels(r);
    if (y != 0 && y != 1) {
      throw ContractError("task_ce_loss: row " + std::to_string(r) +
                          " has no label");
    }
    const double mx = std::max(logits(r, 0), logits(r, 1));
    const double lse =
        mx + std::log(std::exp(logits(r, 0) - mx) + std::exp(logits(r, 1) - mx));
    total += lse - logits(r, y);
  }
  const double loss = total / static_cast<double>(logits.rows());
  if (!std::isfinite(loss)) {
    throw NumericError("task cross-entropy is non-finite");
  }
  return loss;
}

Matrix task_ce_grad_logits(const Matrix& logits, const IntVector& labels) {
  if (labels.size() != logits.rows() || logits.cols() != 2) {
    throw ContractError("task_ce_grad_logits: shape mismatch");
  }
  Matrix grad(logits.rows(), 2);
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (Index r = 0; r < logits.rows(); ++r) {
    const int y = labels(r);
    if (y != 0 && y != 1) {
      throw ContractError("task_ce_grad_logits: row " + std::to_string(r) +
                          " has no label");
    }
    const double mx = std::max(logits(r, 0), logits(r, 1));
    const double e0 = std::exp(logits(r, 0) - mx);
    const double e1 = std::exp(logits(r, 1) - mx);
    const double denom = e0 + e1;
    grad(r, 0) = (e0 / denom - (y == 0 ? 1.0 : 0.0)) * inv_n;
    grad(r, 1) = (e1 / denom - (y == 1 ? 1.0 : 0.0)) * inv_n;
  }
  return grad;
}

double total_loss(double l_ce, double l_con, double lambda) {
  if (lambda < 0.0) {
    throw ContractError("lambda must be >= 0");
  }
  if (!std::isfinite(l_ce) || !std::isfinite(l_con)) {
    throw NumericError("total_loss: non-finite loss term");
  }
  return l_ce + lambda * l_con;
}

}  // namespace cadm
