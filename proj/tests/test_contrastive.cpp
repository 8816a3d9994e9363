#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cadm/contrastive.hpp"
#include "cadm/errors.hpp"
#include "cadm/log.hpp"
#include "helpers.hpp"

using namespace cadm;
using cadm_test::contrastive_loss_loop_oracle;
using cadm_test::max_relative_error;

TEST_CASE("rbf kernel hits its analytic anchor points") {
  Vector a(3), b(3);
  a << 1.0, 2.0, 3.0;

  b = a;
  CHECK(rbf_kernel(a, b, 0.7) == 1.0);

  // ||a - b||^2 = 2 sigma^2 forces exp(-1).
  const double sigma = 1.3;
  b = a;
  b(0) += std::sqrt(2.0) * sigma;
  CHECK(rbf_kernel(a, b, sigma) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  // ||a - b||^2 = 4, sigma = 1 gives exp(-2).
  b = a;
  b(0) += 2.0;
  CHECK(rbf_kernel(a, b, 1.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(rbf_kernel(a, b, 0.0), ContractError);
  CHECK_THROWS_AS(rbf_kernel(a, Vector::Zero(2), 1.0), ContractError);
  Vector bad = b;
  bad(1) = std::nan("");
  CHECK_THROWS_AS(rbf_kernel(a, bad, 1.0), NumericError);
}

TEST_CASE("multi-bandwidth kernel is the arithmetic mean over bandwidths") {
  Vector a(2), b(2);
  a << 0.0, 0.0;
  b << std::sqrt(2.0), 0.0;  // squared distance 2

  CHECK(multi_bandwidth_kernel(a, b, {1.0}) ==
        doctest::Approx(rbf_kernel(a, b, 1.0)).epsilon(1e-15));
  const double expected = 0.5 * (std::exp(-1.0) + std::exp(-0.25));
  CHECK(multi_bandwidth_kernel(a, b, {1.0, 2.0}) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(multi_bandwidth_kernel(a, a, {0.3, 1.0, 5.0}) == 1.0);
}

TEST_CASE("kernel symmetry and bounds (property)") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector a = rng.normal_matrix(5, 1, 2.0);
    const Vector b = rng.normal_matrix(5, 1, 2.0);
    const std::vector<double> sigmas{0.5, 1.0, 3.0};
    const double kab = multi_bandwidth_kernel(a, b, sigmas);
    const double kba = multi_bandwidth_kernel(b, a, sigmas);
    CHECK(kab == kba);
    CHECK(kab > 0.0);
    CHECK(kab <= 1.0);
    if ((a - b).norm() > 0) CHECK(kab < 1.0);
  }
}

TEST_CASE("median heuristic with degenerate batch falls back with a warning") {
  std::vector<std::string> warnings;
  auto* previous = set_warn_capture(&warnings);

  KernelConfig kcfg;
  kcfg.mode = KernelConfig::Mode::MedianHeuristic;
  kcfg.multipliers = {1.0, 2.0};
  const Matrix identical = Matrix::Ones(4, 3);
  const auto sigmas = resolve_bandwidths(kcfg, identical);
  set_warn_capture(previous);

  REQUIRE(sigmas.size() == 2);
  CHECK(sigmas[0] == 1.0);
  CHECK(sigmas[1] == 2.0);
  REQUIRE_FALSE(warnings.empty());
  CHECK(warnings[0].find("median") != std::string::npos);
}

TEST_CASE("median heuristic scales with the data") {
  Rng rng(3);
  const Matrix z = rng.normal_matrix(12, 4, 1.0);
  const double base = median_pairwise_distance(z);
  CHECK(base > 0.0);
  const double scaled = median_pairwise_distance(2.0 * z);
  CHECK(scaled == doctest::Approx(2.0 * base).epsilon(1e-12));
}

TEST_CASE("all-identical representations with all pairings give exactly zero loss") {
  // kernel == 1 everywhere, so the four normalized terms cancel:
  // -1 - 1 + 1 + 1 = 0.
  Matrix z = Matrix::Ones(8, 4);
  IntVector domain(8), label(8);
  domain << 0, 0, 0, 0, 1, 1, 1, 1;
  label << 0, 0, 1, 1, 0, 0, 1, 1;
  const auto result = contrastive_adaptation_loss(z, domain, label, {1.0});
  CHECK(result.loss == 0.0);
  CHECK(result.term[0] == -1.0);
  CHECK(result.term[1] == -1.0);
  CHECK(result.term[2] == 1.0);
  CHECK(result.term[3] == 1.0);
  CHECK(result.pair_count[0] == 4);
  CHECK(result.pair_count[2] == 4);
}

TEST_CASE("single surviving pair reduces to minus one kernel value") {
  const double sigma = 0.9;
  Matrix z(2, 3);
  z.row(0) << 0.0, 0.0, 0.0;
  z.row(1) << std::sqrt(2.0) * sigma, 0.0, 0.0;  // squared distance 2 sigma^2
  IntVector domain(2), label(2);
  domain << 0, 1;
  label << 0, 0;
  const auto result = contrastive_adaptation_loss(z, domain, label, {sigma});
  CHECK(result.loss == doctest::Approx(-std::exp(-1.0)).epsilon(1e-12));
  CHECK(result.pair_count[0] == 1);
  CHECK(result.pair_count[1] == 0);
  CHECK(result.pair_count[2] == 0);
  CHECK(result.pair_count[3] == 0);
}

TEST_CASE("vectorized loss equals the quadruple-loop transcription (property)") {
  Rng rng(2024);
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

    const auto vectorized = contrastive_adaptation_loss(z, domain, label, sigmas);
    const double oracle = contrastive_loss_loop_oracle(z, domain, label, sigmas);
    CHECK(std::abs(vectorized.loss - oracle) < 1e-9);
  }
}

TEST_CASE("empty-term neutrality: removing one term's pairs changes the loss by that term") {
  Rng rng(7);
  const Matrix z = rng.normal_matrix(8, 4, 1.0);
  IntVector domain(8), label(8);
  domain << 0, 0, 0, 0, 1, 1, 1, 1;
  label << 0, 0, 1, 1, 0, 0, 1, 1;
  const std::vector<double> sigmas{1.0};
  const auto full = contrastive_adaptation_loss(z, domain, label, sigmas);

  // Flip all target pseudo-labels to 1: the within-target term (needs both
  // classes) and the cross-domain class-0 term lose all their pairs.
  IntVector label2 = label;
  label2(4) = label2(5) = 1;
  const auto reduced = contrastive_adaptation_loss(z, domain, label2, sigmas);
  CHECK(reduced.pair_count[0] == 0);
  CHECK(reduced.pair_count[3] == 0);
  CHECK(reduced.term[0] == 0.0);
  CHECK(reduced.term[3] == 0.0);
}

TEST_CASE("loss gradient matches finite differences on random 4+4 batches") {
  Rng rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix z = rng.normal_matrix(8, 6, 1.0);
    IntVector domain(8), label(8);
    for (int i = 0; i < 8; ++i) {
      domain(i) = i < 4 ? 0 : 1;
      label(i) = rng.uniform_int(2);
    }
    const std::vector<double> sigmas{0.7, 1.3};

    Matrix grad;
    contrastive_adaptation_loss(z, domain, label, sigmas, &grad);
    const Matrix fd = cadm_test::finite_difference(z, [&](const Matrix& probe) {
      return contrastive_adaptation_loss(probe, domain, label, sigmas).loss;
    });
    CHECK(max_relative_error(grad, fd) < 1e-4);
  }
}

TEST_CASE("sign semantics: per-term kernel monotonicity in pair distance") {
  const std::vector<double> sigmas{1.0};

  // Intra-class cross-domain pair in isolation: pulling it apart never
  // decreases the loss.
  {
    Matrix z(2, 2);
    z << 0.0, 0.0, 0.4, 0.1;
    IntVector domain(2), label(2);
    domain << 0, 1;
    label << 0, 0;
    const double base = contrastive_adaptation_loss(z, domain, label, sigmas).loss;
    Matrix far = z;
    far.row(1) << 3.0, 4.0;
    const double further = contrastive_adaptation_loss(far, domain, label, sigmas).loss;
    CHECK(further >= base);
  }

  // Inter-class same-domain pair in isolation: pushing it apart never
  // increases the loss.
  {
    Matrix z(2, 2);
    z << 0.0, 0.0, 1.0, 0.0;
    IntVector domain(2), label(2);
    domain << 0, 0;
    label << 0, 1;
    const double base = contrastive_adaptation_loss(z, domain, label, sigmas).loss;
    Matrix separated = z;
    separated.row(1) << 6.0, 0.0;
    const double sep =
        contrastive_adaptation_loss(separated, domain, label, sigmas).loss;
    CHECK(sep <= base);
  }
}

TEST_CASE("missing labels and empty pair sets are handled per contract") {
  Matrix z = Matrix::Random(4, 3);
  IntVector domain(4), label(4);
  domain << 0, 0, 1, 1;
  label << 0, 1, -1, 0;  // target row without pseudo-label
  CHECK_THROWS_AS(contrastive_adaptation_loss(z, domain, label, {1.0}),
                  ContractError);

  // No valid pairs anywhere: loss 0 and a warning.
  std::vector<std::string> warnings;
  auto* previous = set_warn_capture(&warnings);
  IntVector same(4);
  same << 1, 1, 1, 1;
  IntVector source_only(4);
  source_only << 0, 0, 0, 0;
  const auto result = contrastive_adaptation_loss(z, source_only, same, {1.0});
  set_warn_capture(previous);
  CHECK(result.loss == 0.0);
  REQUIRE_FALSE(warnings.empty());
}

TEST_CASE("task cross-entropy anchors") {
  // Uniform logits cost ln 2 per row.
  Matrix logits = Matrix::Zero(3, 2);
  IntVector labels(3);
  labels << 0, 1, 0;
  CHECK(task_ce_loss(logits, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Confident correct logits cost nearly nothing.
  Matrix confident(2, 2);
  confident << 20.0, -20.0, -20.0, 20.0;
  IntVector y(2);
  y << 0, 1;
  CHECK(task_ce_loss(confident, y) < 1e-6);

  // Hand-computed 3-row case.
  Matrix hand(3, 2);
  hand << 1.0, -1.0, 0.5, 0.25, -2.0, 0.0;
  IntVector yh(3);
  yh << 0, 1, 1;
  double expected = 0.0;
  for (int r = 0; r < 3; ++r) {
    const double lse = std::log(std::exp(hand(r, 0)) + std::exp(hand(r, 1)));
    expected += lse - hand(r, yh(r));
  }
  expected /= 3.0;
  CHECK(task_ce_loss(hand, yh) == doctest::Approx(expected).epsilon(1e-9));

  IntVector missing(3);
  missing << 0, -1, 1;
  CHECK_THROWS_AS(task_ce_loss(hand, missing), ContractError);
}

TEST_CASE("total loss is the exact affine combination") {
  CHECK(total_loss(0.5, -0.2, 1.0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(total_loss(0.7, 123.0, 0.0) == 0.7);

  // Linearity in lambda.
  const double l_ce = 0.42, l_con = -0.137;
  const double slope =
      (total_loss(l_ce, l_con, 2.5) - total_loss(l_ce, l_con, 1.0)) / 1.5;
  CHECK(slope == doctest::Approx(l_con).epsilon(1e-15));

  CHECK_THROWS_AS(total_loss(0.1, 0.1, -1.0), ContractError);
  CHECK_THROWS_AS(total_loss(std::nan(""), 0.0, 1.0), NumericError);
}
