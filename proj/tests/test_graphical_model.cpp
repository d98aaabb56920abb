#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace nt;

TEST(GraphicalModel, QuarterVariancesGiveTwoThirdsAndOne) {
  const LossWeights w = compute_not_weights({0.25, 0.25, 0.25});
  EXPECT_NEAR(w.lam_y1, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w.lam_y2, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w.lam_12_L, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w.lam_12_U, 1.0, 1e-15);
}

TEST(GraphicalModel, ClosedFormsOnRandomTriples) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e3));
  for (int i = 0; i < 1000; ++i) {
    const long double s1 = std::exp(u(rng)), s2 = std::exp(u(rng)), sy = std::exp(u(rng));
    const LossWeights w = compute_not_weights({double(s1), double(s2), double(sy)});
    const long double d = s1 * s2 + s2 * sy + s1 * sy;
    const long double expect[4] = {s2 / (2 * d), s1 / (2 * d), sy / (2 * d), 1.0L / (2 * (s1 + s2))};
    const double got[4] = {w.lam_y1, w.lam_y2, w.lam_12_L, w.lam_12_U};
    for (int k = 0; k < 4; ++k) EXPECT_LE(std::abs((got[k] - expect[k]) / expect[k]), 1e-12);
  }
}

TEST(GraphicalModel, GeneralWeightsReduceToNotWeights) {
  const GraphHyperParams h{0.3, 0.7, 0.11};
  const LossWeights w = compute_not_weights(h);
  const double v3[3] = {h.sigma1_sq, h.sigma2_sq, h.sigmay_sq};
  const auto lam = compute_general_weights(v3);
  EXPECT_NEAR(lam[0][2], w.lam_y1, 1e-15);
  EXPECT_NEAR(lam[1][2], w.lam_y2, 1e-15);
  EXPECT_NEAR(lam[0][1], w.lam_12_L, 1e-15);
  const double v2[2] = {h.sigma1_sq, h.sigma2_sq};
  EXPECT_NEAR(compute_general_weights(v2)[0][1], w.lam_12_U, 1e-15);
}

TEST(GraphicalModel, InvalidHyperParamsAreConfigErrors) {
  EXPECT_THROW(compute_not_weights({0.0, 1.0, 1.0}), ConfigError);
  EXPECT_THROW(compute_not_weights({1.0, -1.0, 1.0}), ConfigError);
  EXPECT_THROW(compute_not_weights({1.0, 1.0, INFINITY}), ConfigError);
}

TEST(GraphicalModel, MarginalizationMatchesQuadrature) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lv(std::log(0.05), std::log(5.0)), f(-1.0, 2.0);
  for (int cfg = 0; cfg < 50; ++cfg) {
    const std::size_t M = cfg % 2 == 0 ? 2 : 3;
    std::vector<double> var(M), a(M), b(M);
    for (std::size_t m = 0; m < M; ++m) {
      var[m] = std::exp(lv(rng));
      a[m] = f(rng);
      b[m] = f(rng);
    }
    const auto lam = compute_general_weights(var);
    const double quad = oracle::log_marginal_quadrature(a, var) - oracle::log_marginal_quadrature(b, var);
    const double pair = oracle::log_pairwise(a, lam) - oracle::log_pairwise(b, lam);
    EXPECT_LE(std::abs(quad - pair), 1e-6 * std::max(1.0, std::abs(pair))) << "config " << cfg;
  }
}

TEST(GraphicalModel, GammaOfDm3311) {
  const std::int64_t lab[4] = {200, 200, 600, 600};
  const std::int64_t unl[4] = {600, 600, 200, 200};
  const ClassDistribution d = compute_gamma(lab, unl);
  const double expect[4] = {0.25, 0.25, 0.75, 0.75};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(d.gamma[k], expect[k], 1e-12);
  EXPECT_NEAR(d.alpha_L[2], 0.375, 1e-15);
  EXPECT_NEAR(d.alpha_U[0], 0.375, 1e-15);
}

TEST(GraphicalModel, GammaOfBalancedSplitIsHalf) {
  const std::int64_t c[3] = {10, 20, 30};
  for (double g : compute_gamma(c, c).gamma) EXPECT_DOUBLE_EQ(g, 0.5);
}

TEST(GraphicalModel, EmptyClassNamesTheClass) {
  const std::int64_t lab[3] = {1, 0, 2};
  const std::int64_t unl[3] = {1, 0, 2};
  try {
    (void)compute_gamma(lab, unl);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos);
  }
}

TEST(GraphicalModel, UnlabeledCountsFromValidation) {
  const std::int64_t val[4] = {60, 60, 20, 20};
  const auto est = estimate_unlabeled_counts(val, 1600);
  EXPECT_EQ(est, (std::vector<std::int64_t>{600, 600, 200, 200}));
}
