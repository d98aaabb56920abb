#pragma once

// Ranking metrics (AUROC, average precision), thresholded classification
// metrics, and the disagreement statistic between two networks.
//
// Undefined metrics (a label without positives or negatives) come back as
// std::nullopt and are skipped when averaging.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noteacher/autodiff.hpp"
#include "noteacher/error.hpp"

namespace nt {

namespace metric_detail {
inline void check_lengths(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": " + std::to_string(a) + " scores vs " + std::to_string(b) +
                     " labels");
  }
}
}  // namespace metric_detail

/// Mann-Whitney AUROC with ties counted as one half. O(n log n).
inline std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
  metric_detail::check_lengths(scores.size(), labels.size(), "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;  // sum of (1-based mid-)ranks of the positives
  std::size_t npos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t r = i; r < j; ++r) {
      if (labels[order[r]] != 0) {
        rank_sum += mid;
        ++npos;
      }
    }
    i = j;
  }
  const std::size_t nneg = n - npos;
  if (npos == 0 || nneg == 0) return std::nullopt;
  const double np = static_cast<double>(npos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(nneg));
}

/// Average precision: sum over distinct descending thresholds of
/// (R_i - R_{i-1}) * P_i. Tied scores enter together.
inline std::optional<double> auprc(std::span<const double> scores, std::span<const int> labels) {
  metric_detail::check_lengths(scores.size(), labels.size(), "auprc");
  const std::size_t n = scores.size();
  std::size_t npos = 0;
  for (int l : labels) npos += l != 0 ? 1 : 0;
  if (npos == 0) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] != 0 ? 1 : 0;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(npos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

/// Column k of a posterior matrix and of a target matrix.
inline std::vector<double> column(const Tensor& m, std::size_t k) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, k);
  return out;
}

inline std::vector<int> label_column(const Tensor& y, std::size_t k) {
  std::vector<int> out(y.rows());
  for (std::size_t i = 0; i < y.rows(); ++i) out[i] = y(i, k) >= 0.5 ? 1 : 0;
  return out;
}

inline std::vector<std::optional<double>> per_label_auroc(const Tensor& posteriors, const Tensor& targets) {
  if (posteriors.shape != targets.shape) {
    throw ShapeError("per_label_auroc: " + to_string(posteriors.shape) + " vs " + to_string(targets.shape));
  }
  std::vector<std::optional<double>> out;
  for (std::size_t k = 0; k < posteriors.cols(); ++k)
    out.push_back(auroc(column(posteriors, k), label_column(targets, k)));
  return out;
}

inline std::vector<std::optional<double>> per_label_auprc(const Tensor& posteriors, const Tensor& targets) {
  if (posteriors.shape != targets.shape) {
    throw ShapeError("per_label_auprc: " + to_string(posteriors.shape) + " vs " + to_string(targets.shape));
  }
  std::vector<std::optional<double>> out;
  for (std::size_t k = 0; k < posteriors.cols(); ++k)
    out.push_back(auprc(column(posteriors, k), label_column(targets, k)));
  return out;
}

/// Mean over defined entries; nullopt if none is defined.
inline std::optional<double> mean_defined(std::span<const std::optional<double>> v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

/// Index of the largest entry; lowest index wins ties.
inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

using ConfusionMatrix = std::vector<std::vector<std::int64_t>>;

/// Entry (i, j) counts samples of true class i predicted as class j.
inline ConfusionMatrix confusion_unilabel(std::span<const std::size_t> pred, std::span<const std::size_t> truth,
                                          std::size_t K) {
  metric_detail::check_lengths(pred.size(), truth.size(), "confusion_unilabel");
  ConfusionMatrix m(K, std::vector<std::int64_t>(K, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= K || truth[i] >= K) throw DataError("confusion_unilabel: class index out of range");
    ++m[truth[i]][pred[i]];
  }
  return m;
}

struct PrecisionRecall {
  std::vector<std::optional<double>> precision;
  std::vector<std::optional<double>> recall;
};

/// Per-class precision/recall binarizing each class posterior at `threshold`
/// (p >= threshold is positive).
inline PrecisionRecall precision_recall_at(const Tensor& posteriors, const Tensor& targets, double threshold) {
  if (posteriors.shape != targets.shape) throw ShapeError("precision_recall_at: shape mismatch");
  PrecisionRecall pr;
  for (std::size_t k = 0; k < posteriors.cols(); ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < posteriors.rows(); ++i) {
      const bool pred = posteriors(i, k) >= threshold;
      const bool truth = targets(i, k) >= 0.5;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
    pr.precision.push_back(tp + fp == 0 ? std::nullopt
                                        : std::optional<double>(double(tp) / double(tp + fp)));
    pr.recall.push_back(tp + fn == 0 ? std::nullopt : std::optional<double>(double(tp) / double(tp + fn)));
  }
  return pr;
}

/// Samples on which the tau-binarized predictions of two networks differ on
/// at least one label.
inline std::size_t disagreement_count(const Tensor& fa, const Tensor& fb, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("disagreement_count: tau must lie in (0, 1)");
  if (fa.shape != fb.shape) {
    throw ShapeError("disagreement_count: " + to_string(fa.shape) + " vs " + to_string(fb.shape));
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < fa.rows(); ++i) {
    for (std::size_t k = 0; k < fa.cols(); ++k) {
      if ((fa(i, k) >= tau) != (fb(i, k) >= tau)) {
        ++n;
        break;
      }
    }
  }
  return n;
}

/// Evaluation summary of one model on one split.
struct MetricsReport {
  std::vector<std::optional<double>> per_label_auroc;
  std::optional<double> mean_auroc;
  std::vector<std::optional<double>> per_class_auprc;
  std::optional<double> mean_auprc;
  PrecisionRecall at_threshold;
  ConfusionMatrix confusion;  // uni-label only
  std::vector<std::pair<std::int64_t, std::int64_t>> disagreement_series;
};

inline MetricsReport evaluate_posteriors(const Tensor& posteriors, const Tensor& targets, double threshold,
                                         bool unilabel) {
  MetricsReport r;
  r.per_label_auroc = per_label_auroc(posteriors, targets);
  r.mean_auroc = mean_defined(r.per_label_auroc);
  r.per_class_auprc = per_label_auprc(posteriors, targets);
  r.mean_auprc = mean_defined(r.per_class_auprc);
  r.at_threshold = precision_recall_at(posteriors, targets, threshold);
  if (unilabel) {
    std::vector<std::size_t> pred, truth;
    for (std::size_t i = 0; i < posteriors.rows(); ++i) {
      pred.push_back(argmax_row(posteriors.row(i)));
      truth.push_back(argmax_row(targets.row(i)));
    }
    r.confusion = confusion_unilabel(pred, truth, posteriors.cols());
  }
  return r;
}

}  // namespace nt
