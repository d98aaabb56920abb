#pragma once

// Loss weights obtained by integrating the latent consensus variable out of
// the Gaussian graphical model that ties the network posteriors (and the
// label) together, and the class-mismatch quantities used by NoT-GA.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "noteacher/error.hpp"

namespace nt {

/// Variances of the edges f1 - fc, f2 - fc and y - fc.
struct GraphHyperParams {
  double sigma1_sq = 0.25;
  double sigma2_sq = 0.25;
  double sigmay_sq = 0.25;

  void validate() const {
    auto check = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError(std::string("graph hyperparameter ") + name +
                          " must be positive and finite");
      }
    };
    check(sigma1_sq, "sigma1_sq");
    check(sigma2_sq, "sigma2_sq");
    check(sigmay_sq, "sigmay_sq");
  }
};

struct LossWeights {
  double lam_y1 = 0.0;    // label <-> network 1
  double lam_y2 = 0.0;    // label <-> network 2
  double lam_12_L = 0.0;  // network 1 <-> network 2, labeled sample
  double lam_12_U = 0.0;  // network 1 <-> network 2, unlabeled sample
};

/// Closed-form pairwise weights of the three-node (labeled) and two-node
/// (unlabeled) models.
inline LossWeights compute_not_weights(const GraphHyperParams& h) {
  h.validate();
  const double s1 = h.sigma1_sq, s2 = h.sigma2_sq, sy = h.sigmay_sq;
  const double denom = 2.0 * (s1 * s2 + s2 * sy + s1 * sy);
  return LossWeights{
      .lam_y1 = s2 / denom,
      .lam_y2 = s1 / denom,
      .lam_12_L = sy / denom,
      .lam_12_U = 1.0 / (2.0 * (s1 + s2)),
  };
}

/// Symmetric M x M matrix of pairwise weights for M posteriors attached to a
/// shared latent node: lambda_mk = 1 / (2 s_m s_k sum_i 1/s_i). The diagonal
/// is left at zero.
inline std::vector<std::vector<double>> compute_general_weights(std::span<const double> variances) {
  const std::size_t m = variances.size();
  if (m < 2) throw ConfigError("compute_general_weights: need at least two variances");
  double precision = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!(variances[i] > 0.0) || !std::isfinite(variances[i])) {
      throw ConfigError("compute_general_weights: variance " + std::to_string(i) +
                        " must be positive and finite");
    }
    precision += 1.0 / variances[i];
  }
  std::vector<std::vector<double>> lam(m, std::vector<double>(m, 0.0));
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b)
      lam[a][b] = lam[b][a] = 1.0 / (2.0 * variances[a] * variances[b] * precision);
  return lam;
}

/// Per-class labeled/unlabeled composition.
struct ClassDistribution {
  std::size_t K = 0;
  std::vector<std::int64_t> counts_labeled;
  std::vector<std::int64_t> counts_unlabeled;
  std::vector<double> alpha_L;
  std::vector<double> alpha_U;
  /// Probability that a sample of class k sits in the labeled set.
  std::vector<double> gamma;
};

namespace detail {
inline std::vector<double> normalize_counts(std::span<const std::int64_t> c) {
  double total = 0.0;
  for (auto v : c) total += static_cast<double>(v);
  std::vector<double> out(c.size(), 0.0);
  if (total <= 0.0) return out;
  for (std::size_t k = 0; k < c.size(); ++k) out[k] = static_cast<double>(c[k]) / total;
  return out;
}
}  // namespace detail

inline ClassDistribution compute_gamma(std::span<const std::int64_t> counts_labeled,
                                       std::span<const std::int64_t> counts_unlabeled) {
  if (counts_labeled.size() != counts_unlabeled.size()) {
    throw ConfigError("compute_gamma: labeled has " + std::to_string(counts_labeled.size()) +
                      " classes, unlabeled has " + std::to_string(counts_unlabeled.size()));
  }
  ClassDistribution d;
  d.K = counts_labeled.size();
  d.counts_labeled.assign(counts_labeled.begin(), counts_labeled.end());
  d.counts_unlabeled.assign(counts_unlabeled.begin(), counts_unlabeled.end());
  d.gamma.resize(d.K);
  for (std::size_t k = 0; k < d.K; ++k) {
    if (counts_labeled[k] < 0 || counts_unlabeled[k] < 0) {
      throw ConfigError("compute_gamma: negative count for class " + std::to_string(k));
    }
    const auto total = counts_labeled[k] + counts_unlabeled[k];
    if (total == 0) throw DataError("compute_gamma: class " + std::to_string(k) + " has no samples");
    d.gamma[k] = static_cast<double>(counts_labeled[k]) / static_cast<double>(total);
  }
  d.alpha_L = detail::normalize_counts(d.counts_labeled);
  d.alpha_U = detail::normalize_counts(d.counts_unlabeled);
  return d;
}

/// Estimates per-class unlabeled counts from a validation set drawn from the
/// unlabeled distribution: N_k^U ~ round(val_k * U / |val|).
inline std::vector<std::int64_t> estimate_unlabeled_counts(std::span<const std::int64_t> val_counts,
                                                           std::int64_t unlabeled_total) {
  std::int64_t n = 0;
  for (auto v : val_counts) n += v;
  if (n <= 0) throw DataError("estimate_unlabeled_counts: empty validation set");
  std::vector<std::int64_t> out(val_counts.size());
  for (std::size_t k = 0; k < val_counts.size(); ++k)
    out[k] = std::llround(static_cast<double>(val_counts[k]) * static_cast<double>(unlabeled_total) /
                          static_cast<double>(n));
  return out;
}

}  // namespace nt
