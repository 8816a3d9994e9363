#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cadm/adversarial.hpp"
#include "cadm/types.hpp"

namespace cadm {

struct KernelConfig {
  enum class Mode { Fixed, MedianHeuristic };
  Mode mode = Mode::MedianHeuristic;
  std::vector<double> bandwidths;  // Fixed mode
  std::vector<double> multipliers{0.25, 0.5, 1.0, 2.0, 4.0};  // MedianHeuristic

  void validate() const;
};

const char* kernel_mode_name(KernelConfig::Mode mode);
KernelConfig::Mode kernel_mode_from_name(const std::string& name);

// k(z1, z2) = exp(-||z1 - z2||^2 / (2 sigma^2)), in (0, 1].
double rbf_kernel(const Vector& z1, const Vector& z2, double sigma);

// Arithmetic mean of rbf_kernel over a bandwidth set.
double multi_bandwidth_kernel(const Vector& z1, const Vector& z2,
                              const std::vector<double>& sigmas);

// Median of pairwise Euclidean distances between rows. Returns 0 for
// batches with fewer than two rows or with all-identical rows.
double median_pairwise_distance(const Matrix& z);

// Resolves a KernelConfig to concrete bandwidths. In median-heuristic mode
// the base sigma is fitted on the given batch; a degenerate batch (median
// distance 0) falls back to sigma = 1 with a logged warning.
std::vector<double> resolve_bandwidths(const KernelConfig& kcfg, const Matrix& z);

struct ContrastiveBreakdown {
  double loss = 0.0;
  // Signed term values, in loss order: cross-domain class-0 attraction (-),
  // cross-domain class-1 attraction (-), within-source separation (+),
  // within-target separation (+). Terms with no pairs contribute exactly 0.
  std::array<double, 4> term{0.0, 0.0, 0.0, 0.0};
  std::array<std::int64_t, 4> pair_count{0, 0, 0, 0};
  std::vector<double> bandwidths;
};

// The class-aware contrastive adaptation loss over perturbed representations.
// Every row must carry a class label (ground truth on source rows,
// pseudo-label on target rows). When grad_z is non-null it receives
// d(loss)/dz, same shape as z.
ContrastiveBreakdown contrastive_adaptation_loss(const Matrix& z,
                                                 const IntVector& domain,
                                                 const IntVector& label,
                                                 const std::vector<double>& sigmas,
                                                 Matrix* grad_z = nullptr);

ContrastiveBreakdown contrastive_adaptation_loss(const MixupSet& mix,
                                                 const KernelConfig& kcfg,
                                                 Matrix* grad_z = nullptr);

// Mean softmax cross-entropy of the task head. Labels mix ground truth and
// pseudo-labels; every row must have one.
double task_ce_loss(const Matrix& logits, const IntVector& labels);
Matrix task_ce_grad_logits(const Matrix& logits, const IntVector& labels);

// L_all = L_ce + lambda * L_con. Non-finite inputs raise NumericError so the
// training loop can skip the step.
double total_loss(double l_ce, double l_con, double lambda);

// Per-step record of the combined objective.
struct LossReport {
  double l_ce = 0.0;
  double l_con = 0.0;
  double l_all = 0.0;
  double lambda = 0.0;
  std::array<double, 4> term{0.0, 0.0, 0.0, 0.0};
  std::array<std::int64_t, 4> pair_count{0, 0, 0, 0};
  std::vector<double> bandwidths;
};

}  // namespace cadm
