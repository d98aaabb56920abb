#pragma once

// Labeling-budget simulation and class-distribution-mismatch construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "noteacher/data.hpp"
#include "noteacher/graphical_model.hpp"
#include "noteacher/rng.hpp"

namespace nt {

struct BudgetPlan {
  std::vector<std::size_t> budgets;
  std::size_t min_positives_per_label = 1;
  std::size_t min_val_size = 1;
  double val_fraction = 0.2;

  void validate() const {
    if (budgets.empty()) throw ConfigError("sampling.budgets must not be empty");
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      if (budgets[i] < 1) throw ConfigError("sampling.budgets entries must be >= 1");
      if (i > 0 && budgets[i] <= budgets[i - 1]) throw ConfigError("sampling.budgets must be strictly ascending");
    }
    if (min_positives_per_label < 1) throw ConfigError("sampling.min_positives_per_label must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("sampling.val_fraction must lie in (0, 1)");
  }
};

/// Indices into the pool for one budget.
struct BudgetSplit {
  std::size_t budget = 0;
  std::size_t labeled_total = 0;  // L_F >= budget
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> unlabeled;

  friend bool operator==(const BudgetSplit&, const BudgetSplit&) = default;
};

namespace sampling_detail {
inline std::vector<std::size_t> positives_per_label(const Dataset& pool, std::span<const std::size_t> idx) {
  std::vector<std::size_t> c(pool.K, 0);
  for (std::size_t i : idx)
    for (std::size_t k = 0; k < pool.K; ++k) c[k] += pool.samples[i].y[k] == 1.0 ? 1 : 0;
  return c;
}
}  // namespace sampling_detail

/// Randomly annotates pool samples until each budget is spent, keeps drawing
/// (one sample at a time, rechecking every label) until each label has the
/// minimum number of positives, then splits the labeled set into train and
/// validation. Later budgets extend the labeled set of earlier ones.
inline std::vector<BudgetSplit> realistic_sample(const Dataset& pool, const BudgetPlan& plan, std::uint64_t seed) {
  plan.validate();
  for (const auto& s : pool.samples)
    if (!s.labeled) throw DataError("realistic_sample: pool must carry (hidden) ground truth for every sample");
  std::vector<std::size_t> all(pool.size());
  std::iota(all.begin(), all.end(), 0);
  const auto pool_pos = sampling_detail::positives_per_label(pool, all);
  for (std::size_t k = 0; k < pool.K; ++k) {
    if (pool_pos[k] < plan.min_positives_per_label) {
      throw DataError("realistic_sample: label " + std::to_string(k) + " has only " + std::to_string(pool_pos[k]) +
                      " positives in the pool, coverage of " + std::to_string(plan.min_positives_per_label) +
                      " is unsatisfiable");
    }
  }

  Rng draw_rng = make_rng(seed, "sampling/draw");
  std::vector<std::size_t> order = all;
  std::shuffle(order.begin(), order.end(), draw_rng);

  std::vector<std::size_t> labeled;
  std::vector<std::size_t> positives(pool.K, 0);
  std::size_t cursor = 0;
  auto annotate_next = [&]() {
    const std::size_t i = order[cursor++];
    labeled.push_back(i);
    for (std::size_t k = 0; k < pool.K; ++k) positives[k] += pool.samples[i].y[k] == 1.0 ? 1 : 0;
  };
  auto deficient_label = [&]() -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < pool.K; ++k)
      if (positives[k] < plan.min_positives_per_label) return k;
    return std::nullopt;
  };

  std::vector<BudgetSplit> out;
  for (std::size_t b = 0; b < plan.budgets.size(); ++b) {
    const std::size_t L = plan.budgets[b];
    if (L > pool.size()) {
      throw DataError("realistic_sample: budget " + std::to_string(L) + " exceeds pool size " +
                      std::to_string(pool.size()));
    }
    while (labeled.size() < L) annotate_next();
    while (auto k = deficient_label()) {
      if (cursor == order.size()) {
        throw DataError("realistic_sample: pool exhausted before label " + std::to_string(*k) + " reached " +
                        std::to_string(plan.min_positives_per_label) + " positives");
      }
      annotate_next();
    }

    BudgetSplit split;
    split.budget = L;
    split.labeled_total = labeled.size();
    const auto lf = static_cast<double>(labeled.size());
    const std::size_t nval =
        std::max(plan.min_val_size, static_cast<std::size_t>(std::llround(plan.val_fraction * lf)));
    if (nval >= labeled.size()) {
      throw DataError("realistic_sample: validation size " + std::to_string(nval) + " leaves no training samples at budget " +
                      std::to_string(L));
    }
    Rng split_rng = make_rng(seed, "sampling/split/" + std::to_string(b));
    std::vector<std::size_t> shuffled = labeled;
    std::shuffle(shuffled.begin(), shuffled.end(), split_rng);
    split.val.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(nval));
    split.train.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(nval), shuffled.end());
    split.unlabeled.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor), order.end());
    std::sort(split.unlabeled.begin(), split.unlabeled.end());
    out.push_back(std::move(split));
  }
  return out;
}

/// Datasets of one experiment: labeled train, validation, unlabeled train
/// (labels stripped) and an optional held-out test set.
struct SplitData {
  Dataset labeled;
  Dataset val;
  Dataset unlabeled;
  Dataset test;
};

inline SplitData materialize(const Dataset& pool, const BudgetSplit& s, const Dataset& test) {
  return SplitData{pool.subset(s.train), pool.subset(s.val), pool.subset(s.unlabeled).stripped(), test};
}

// ---------------------------------------------------------------------------
// Distribution mismatch

struct SplitCounts {
  std::vector<std::int64_t> labeled;
  std::vector<std::int64_t> unlabeled;
  std::vector<std::int64_t> val;
  std::vector<std::int64_t> test;

  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

struct MismatchSpec {
  std::vector<std::string> class_names;
  /// alpha^L and alpha^U up to scale; val and test follow alpha^U.
  std::vector<double> labeled_ratio;
  std::vector<double> unlabeled_ratio;
  /// Explicit per-class counts; when absent, counts are apportioned from the
  /// ratios and the totals below.
  std::optional<SplitCounts> counts;
  std::int64_t labeled_total = 0;
  std::int64_t unlabeled_total = 0;
  std::int64_t val_total = 0;
  std::int64_t test_total = 0;

  [[nodiscard]] std::size_t K() const { return class_names.size(); }
};

namespace sampling_detail {

/// Largest-remainder apportionment of `total` proportional to `ratio`.
inline std::vector<std::int64_t> apportion(std::span<const double> ratio, std::int64_t total) {
  const double s = std::accumulate(ratio.begin(), ratio.end(), 0.0);
  if (!(s > 0.0)) throw ConfigError("mismatch: ratios must have positive sum");
  std::vector<std::int64_t> out(ratio.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::int64_t used = 0;
  for (std::size_t k = 0; k < ratio.size(); ++k) {
    const double exact = static_cast<double>(total) * ratio[k] / s;
    out[k] = static_cast<std::int64_t>(std::floor(exact));
    used += out[k];
    rem.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; used < total; ++i, ++used) ++out[rem[i].second];
  return out;
}

inline void check_ratio_consistency(std::span<const std::int64_t> counts, std::span<const double> ratio,
                                    const std::string& what) {
  if (ratio.empty()) return;
  const double cs = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}));
  const double rs = std::accumulate(ratio.begin(), ratio.end(), 0.0);
  if (cs == 0.0) return;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (std::abs(static_cast<double>(counts[k]) / cs - ratio[k] / rs) > 0.02) {
      throw ConfigError("mismatch: " + what + " counts are inconsistent with the stated ratio at class " +
                        std::to_string(k));
    }
  }
}

}  // namespace sampling_detail

inline SplitCounts resolve_counts(const MismatchSpec& spec) {
  const std::size_t K = spec.K();
  if (K < 2) throw ConfigError("mismatch: need at least two classes");
  auto check_len = [K](std::size_t n, const char* what) {
    if (n != K) throw ConfigError(std::string("mismatch: ") + what + " must have one entry per class");
  };
  if (!spec.labeled_ratio.empty()) check_len(spec.labeled_ratio.size(), "labeled_ratio");
  if (!spec.unlabeled_ratio.empty()) check_len(spec.unlabeled_ratio.size(), "unlabeled_ratio");
  for (double r : spec.labeled_ratio)
    if (!(r >= 0.0)) throw ConfigError("mismatch: ratios must be nonnegative");
  for (double r : spec.unlabeled_ratio)
    if (!(r >= 0.0)) throw ConfigError("mismatch: ratios must be nonnegative");

  if (spec.counts) {
    const SplitCounts& c = *spec.counts;
    check_len(c.labeled.size(), "counts.labeled");
    check_len(c.unlabeled.size(), "counts.unlabeled");
    check_len(c.val.size(), "counts.val");
    check_len(c.test.size(), "counts.test");
    for (const auto* v : {&c.labeled, &c.unlabeled, &c.val, &c.test})
      for (auto x : *v)
        if (x < 0) throw ConfigError("mismatch: counts must be nonnegative");
    sampling_detail::check_ratio_consistency(c.labeled, spec.labeled_ratio, "labeled");
    sampling_detail::check_ratio_consistency(c.unlabeled, spec.unlabeled_ratio, "unlabeled");
    return c;
  }
  if (spec.labeled_ratio.empty() || spec.unlabeled_ratio.empty()) {
    throw ConfigError("mismatch: give either explicit counts or both ratios with totals");
  }
  return SplitCounts{sampling_detail::apportion(spec.labeled_ratio, spec.labeled_total),
                     sampling_detail::apportion(spec.unlabeled_ratio, spec.unlabeled_total),
                     sampling_detail::apportion(spec.unlabeled_ratio, spec.val_total),
                     sampling_detail::apportion(spec.unlabeled_ratio, spec.test_total)};
}

struct MismatchSplit {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  SplitCounts counts;
  ClassDistribution distribution;
};

/// Draws the requested per-class counts from a uni-label pool into the four
/// splits (without overlap) and computes gamma from the realized counts.
inline MismatchSplit build_mismatch(const Dataset& pool, const MismatchSpec& spec, std::uint64_t seed) {
  if (pool.mode != LabelMode::unilabel) throw DataError("build_mismatch: pool must be uni-label");
  const std::size_t K = spec.K();
  if (pool.K != K) {
    throw ConfigError("build_mismatch: spec names " + std::to_string(K) + " classes, pool has " + std::to_string(pool.K));
  }
  const SplitCounts counts = resolve_counts(spec);
  std::vector<std::vector<std::size_t>> by_class(K);
  const auto cls = pool.class_indices();
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[cls[i]].push_back(i);

  Rng rng = make_rng(seed, "mismatch");
  MismatchSplit out;
  out.counts = counts;
  const char* names[4] = {"labeled", "unlabeled", "val", "test"};
  for (std::size_t k = 0; k < K; ++k) {
    auto& idx = by_class[k];
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t o = 0;
    const std::int64_t want[4] = {counts.labeled[k], counts.unlabeled[k], counts.val[k], counts.test[k]};
    std::vector<std::size_t>* dst[4] = {&out.labeled, &out.unlabeled, &out.val, &out.test};
    for (int s = 0; s < 4; ++s) {
      const auto n = static_cast<std::size_t>(want[s]);
      if (o + n > idx.size()) {
        throw DataError("build_mismatch: class '" + spec.class_names[k] + "' has too few samples for split '" +
                        names[s] + "' (needs " + std::to_string(o + n) + ", pool has " +
                        std::to_string(idx.size()) + ")");
      }
      dst[s]->insert(dst[s]->end(), idx.begin() + static_cast<std::ptrdiff_t>(o),
                     idx.begin() + static_cast<std::ptrdiff_t>(o + n));
      o += n;
    }
  }
  for (auto* v : {&out.labeled, &out.unlabeled, &out.val, &out.test}) std::sort(v->begin(), v->end());

  std::vector<std::int64_t> realized_l(K, 0), realized_u(K, 0);
  for (std::size_t i : out.labeled) ++realized_l[cls[i]];
  for (std::size_t i : out.unlabeled) ++realized_u[cls[i]];
  out.distribution = compute_gamma(realized_l, realized_u);
  return out;
}

inline SplitData materialize(const Dataset& pool, const MismatchSplit& s) {
  return SplitData{pool.subset(s.labeled), pool.subset(s.val), pool.subset(s.unlabeled).stripped(),
                   pool.subset(s.test)};
}

// Four-class setups over (No Finding, Infiltration, Pneumothorax, Mass).

inline MismatchSpec dm7511_spec() {
  MismatchSpec s;
  s.class_names = {"No Finding", "Infiltration", "Pneumothorax", "Mass"};
  s.labeled_ratio = {1, 1, 1, 1};
  s.unlabeled_ratio = {7, 5, 1, 1};
  s.counts = SplitCounts{{243, 243, 243, 243}, {1452, 1019, 214, 231}, {73, 47, 6, 11}, {2835, 1843, 484, 423}};
  return s;
}

inline MismatchSpec dm3311_spec() {
  MismatchSpec s;
  s.class_names = {"No Finding", "Infiltration", "Pneumothorax", "Mass"};
  s.labeled_ratio = {1, 1, 3, 3};
  s.unlabeled_ratio = {3, 3, 1, 1};
  s.counts = SplitCounts{{200, 200, 600, 600}, {600, 600, 200, 200}, {60, 60, 20, 20}, {600, 600, 200, 200}};
  return s;
}

/// Ratio-defined variant with DM-3311's totals (1600 / 1600 / 160 / 1600).
inline MismatchSpec ratio_variant_spec(std::vector<double> labeled_ratio, std::vector<double> unlabeled_ratio) {
  MismatchSpec s;
  s.class_names = {"No Finding", "Infiltration", "Pneumothorax", "Mass"};
  s.labeled_ratio = std::move(labeled_ratio);
  s.unlabeled_ratio = std::move(unlabeled_ratio);
  s.labeled_total = 1600;
  s.unlabeled_total = 1600;
  s.val_total = 160;
  s.test_total = 1600;
  return s;
}

inline MismatchSpec dm1133_spec() { return ratio_variant_spec({3, 3, 1, 1}, {1, 1, 3, 3}); }
inline MismatchSpec dm1313_spec() { return ratio_variant_spec({3, 1, 3, 1}, {1, 3, 1, 3}); }

}  // namespace nt
