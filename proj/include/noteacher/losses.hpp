#pragma once

// Training objectives. Every loss takes posteriors as Vars on a tape and
// returns a scalar Var; targets and masks are plain constants.
//
// Aggregation convention: each CE / MSE term is a mean over its own sample
// subset and over the K label dimensions.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "noteacher/autodiff.hpp"
#include "noteacher/graphical_model.hpp"

namespace nt {

/// Targets for a minibatch. Rows whose labeled flag is false carry no target
/// (their y row is ignored).
struct BatchTargets {
  Tensor y;
  std::vector<bool> labeled;

  [[nodiscard]] std::size_t size() const { return labeled.size(); }
  [[nodiscard]] std::size_t num_labeled() const {
    std::size_t n = 0;
    for (bool b : labeled) n += b ? 1 : 0;
    return n;
  }
  [[nodiscard]] std::vector<std::size_t> labeled_rows() const { return rows_where(true); }
  [[nodiscard]] std::vector<std::size_t> unlabeled_rows() const { return rows_where(false); }

  [[nodiscard]] Tensor labeled_targets() const {
    const auto rows = labeled_rows();
    Tensor out(rows.size(), y.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t k = 0; k < y.cols(); ++k) out(r, k) = y(rows[r], k);
    return out;
  }

 private:
  [[nodiscard]] std::vector<std::size_t> rows_where(bool flag) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labeled.size(); ++i)
      if (labeled[i] == flag) out.push_back(i);
    return out;
  }
};

namespace loss_detail {

inline void check_rows(const Var& f, const BatchTargets& t, const char* op) {
  if (f.shape().rows != t.size() || t.y.rows() != t.size() || t.y.cols() != f.shape().cols) {
    throw ShapeError(std::string(op) + ": posteriors " + to_string(f.shape()) + " vs targets " +
                     to_string(t.y.shape) + " with " + std::to_string(t.size()) + " mask rows");
  }
}

inline void check_counts(const BatchTargets& t, std::size_t nL, std::size_t nU, const char* op) {
  const std::size_t l = t.num_labeled();
  if (l != nL || t.size() - l != nU) {
    throw ShapeError(std::string(op) + ": batch holds " + std::to_string(l) + " labeled / " +
                     std::to_string(t.size() - l) + " unlabeled rows, caller declared " +
                     std::to_string(nL) + " / " + std::to_string(nU));
  }
}

inline Var zero(Tape& t) { return t.constant(Tensor::scalar(0.0)); }

}  // namespace loss_detail

/// Mean squared difference over all entries.
inline Var mse(const Var& a, const Var& b) { return ad::mean(ad::square(ad::sub(a, b))); }

/// Multi-label binary cross-entropy, averaged over labels and samples.
/// Posteriors are clamped into [1e-7, 1 - 1e-7] before the logs.
inline Var multilabel_ce(const Tensor& targets, const Var& posteriors) {
  if (targets.shape != posteriors.shape()) {
    throw ShapeError("multilabel_ce: targets " + to_string(targets.shape) + " vs posteriors " +
                     to_string(posteriors.shape()));
  }
  if (targets.size() == 0) throw ShapeError("multilabel_ce: empty batch");
  Tape& t = posteriors.tape();
  Tensor one_minus_y = targets;
  for (double& v : one_minus_y.data) v = 1.0 - v;
  const Var p = ad::clamp_prob(posteriors);
  const Var log_p = ad::log(p);
  const Var log_q = ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0));
  const Var ll = ad::add(ad::mul(t.constant(targets), log_p), ad::mul(t.constant(one_minus_y), log_q));
  return ad::scale(ad::mean(ll), -1.0);
}

/// NoT objective with CE on labeled rows and MSE consistency:
///   l_y1 CE(y, f1^L) + l_y2 CE(y, f2^L) + l_12L MSE(f1^L, f2^L)
///   + l_12U (nU/nL) MSE(f1^U, f2^U)
inline Var not_loss(const Var& f1, const Var& f2, const BatchTargets& targets,
                    const LossWeights& w, std::size_t nL, std::size_t nU) {
  loss_detail::check_rows(f1, targets, "not_loss");
  loss_detail::check_rows(f2, targets, "not_loss");
  loss_detail::check_counts(targets, nL, nU, "not_loss");
  if (nL == 0) throw ShapeError("not_loss: batch has no labeled rows");
  const auto L = targets.labeled_rows();
  const auto U = targets.unlabeled_rows();
  const Tensor yL = targets.labeled_targets();
  const Var f1L = ad::gather_rows(f1, L);
  const Var f2L = ad::gather_rows(f2, L);
  Var total = ad::add(ad::scale(multilabel_ce(yL, f1L), w.lam_y1),
                      ad::scale(multilabel_ce(yL, f2L), w.lam_y2));
  total = ad::add(total, ad::scale(mse(f1L, f2L), w.lam_12_L));
  if (nU > 0) {
    const double ratio = static_cast<double>(nU) / static_cast<double>(nL);
    const Var cons = mse(ad::gather_rows(f1, U), ad::gather_rows(f2, U));
    total = ad::add(total, ad::scale(cons, w.lam_12_U * ratio));
  }
  return total;
}

/// Sum-aggregated squared-error form: the negative log of the graphical-model
/// likelihood with constants dropped.
inline Var not_loss_squared(const Var& f1, const Var& f2, const BatchTargets& targets,
                            const LossWeights& w, std::size_t nL, std::size_t nU) {
  loss_detail::check_rows(f1, targets, "not_loss_squared");
  loss_detail::check_rows(f2, targets, "not_loss_squared");
  loss_detail::check_counts(targets, nL, nU, "not_loss_squared");
  if (nL == 0) throw ShapeError("not_loss_squared: batch has no labeled rows");
  Tape& t = f1.tape();
  const auto L = targets.labeled_rows();
  const auto U = targets.unlabeled_rows();
  const Var yL = t.constant(targets.labeled_targets());
  const Var f1L = ad::gather_rows(f1, L);
  const Var f2L = ad::gather_rows(f2, L);
  auto sq = [](const Var& a, const Var& b) { return ad::sum(ad::square(ad::sub(a, b))); };
  Var total = ad::add(ad::scale(sq(f1L, yL), w.lam_y1), ad::scale(sq(f2L, yL), w.lam_y2));
  total = ad::add(total, ad::scale(sq(f1L, f2L), w.lam_12_L));
  if (nU > 0) {
    total = ad::add(total, ad::scale(sq(ad::gather_rows(f1, U), ad::gather_rows(f2, U)), w.lam_12_U));
  }
  return total;
}

/// Per-row mean squared distance of each posterior row to every one-hot
/// class vector: (n x K) -> (n x K), entry (i, k) = MSE(f_i, e_k).
inline Var onehot_mse_matrix(const Var& f) {
  const std::size_t K = f.shape().cols;
  const Var sq = ad::row_sum(ad::square(f));
  const Var m = ad::add_scalar(ad::add_col(ad::scale(f, -2.0), sq), 1.0);
  return ad::scale(m, 1.0 / static_cast<double>(K));
}

/// NoT-GA objective for uni-label data with class-mismatch weights gamma.
///
/// Labeled rows contribute the NoT supervised terms, all rows contribute
/// l_12L MSE(f1, f2), and each unlabeled row contributes
///   -log sum_k exp[-l_y1 MSE(f1, e_k) - l_y2 MSE(f2, e_k)] (1 - gamma_k),
/// averaged over the unlabeled rows and evaluated through log-sum-exp.
inline Var notga_loss(const Var& f1, const Var& f2, const BatchTargets& targets,
                      const LossWeights& w, std::span<const double> gamma) {
  loss_detail::check_rows(f1, targets, "notga_loss");
  loss_detail::check_rows(f2, targets, "notga_loss");
  const std::size_t K = f1.shape().cols;
  if (gamma.size() != K) {
    throw ShapeError("notga_loss: gamma has " + std::to_string(gamma.size()) + " entries for K=" +
                     std::to_string(K));
  }
  bool any_unlabeled_mass = false;
  for (double g : gamma) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("notga_loss: gamma entries must lie in [0, 1]");
    any_unlabeled_mass = any_unlabeled_mass || g < 1.0;
  }
  if (!any_unlabeled_mass) {
    throw ConfigError("notga_loss: every gamma_k equals 1, the unlabeled term is undefined");
  }
  const auto L = targets.labeled_rows();
  const auto U = targets.unlabeled_rows();
  if (L.empty()) throw ShapeError("notga_loss: batch has no labeled rows");
  const Tensor yL = targets.labeled_targets();
  for (std::size_t r = 0; r < yL.rows(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = yL(r, k);
      if (v != 0.0 && v != 1.0) throw ConfigError("notga_loss: targets must be binary");
      s += v;
    }
    if (s != 1.0) throw ConfigError("notga_loss: multi-label targets are not supported (uni-label only)");
  }

  Tape& t = f1.tape();
  const Var f1L = ad::gather_rows(f1, L);
  const Var f2L = ad::gather_rows(f2, L);
  Var total = ad::add(ad::scale(multilabel_ce(yL, f1L), w.lam_y1),
                      ad::scale(multilabel_ce(yL, f2L), w.lam_y2));
  total = ad::add(total, ad::scale(mse(f1, f2), w.lam_12_L));
  if (!U.empty()) {
    Tensor log_prior(1, K);
    for (std::size_t k = 0; k < K; ++k)
      log_prior.data[k] = gamma[k] < 1.0 ? std::log1p(-gamma[k])
                                         : -std::numeric_limits<double>::infinity();
    const Var m1 = onehot_mse_matrix(ad::gather_rows(f1, U));
    const Var m2 = onehot_mse_matrix(ad::gather_rows(f2, U));
    const Var logits = ad::add_row(ad::add(ad::scale(m1, -w.lam_y1), ad::scale(m2, -w.lam_y2)),
                                   t.constant(log_prior));
    total = ad::add(total, ad::scale(ad::mean(ad::logsumexp_rows(logits)), -1.0));
  }
  return total;
}

/// Mean Teacher objective: CE on the student's labeled rows plus weighted
/// MSE between student and (detached) teacher on all rows.
inline Var mt_loss(const Var& fS, const Var& fT, const BatchTargets& targets, double lambda_cons) {
  if (!(lambda_cons >= 0.0)) throw ConfigError("mt_loss: lambda_cons must be nonnegative");
  loss_detail::check_rows(fS, targets, "mt_loss");
  loss_detail::check_rows(fT, targets, "mt_loss");
  Tape& t = fS.tape();
  const auto L = targets.labeled_rows();
  Var total = L.empty() ? loss_detail::zero(t)
                        : multilabel_ce(targets.labeled_targets(), ad::gather_rows(fS, L));
  if (lambda_cons > 0.0) total = ad::add(total, ad::scale(mse(fS, ad::detach(fT)), lambda_cons));
  return total;
}

/// Hard pseudo-label rule shared by PSU and evaluation: p >= threshold is positive.
inline double binarize(double p, double threshold) { return p >= threshold ? 1.0 : 0.0; }

/// CE on labeled rows plus w_unl times CE of the unlabeled rows against hard
/// pseudo-labels recomputed from the current (detached) posteriors.
inline Var pseudo_label_loss(const Var& f, const BatchTargets& targets, double w_unl,
                             double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("pseudo_label_loss: threshold must lie in (0, 1)");
  }
  if (!(w_unl >= 0.0)) throw ConfigError("pseudo_label_loss: w_unl must be nonnegative");
  loss_detail::check_rows(f, targets, "pseudo_label_loss");
  Tape& t = f.tape();
  const auto L = targets.labeled_rows();
  const auto U = targets.unlabeled_rows();
  Var total = L.empty() ? loss_detail::zero(t)
                        : multilabel_ce(targets.labeled_targets(), ad::gather_rows(f, L));
  if (!U.empty() && w_unl > 0.0) {
    const Var fU = ad::gather_rows(f, U);
    Tensor pseudo = fU.value();
    for (double& v : pseudo.data) v = binarize(v, threshold);
    total = ad::add(total, ad::scale(multilabel_ce(pseudo, fU), w_unl));
  }
  return total;
}

/// Mean over samples and labels of KL(Bern(p) || Bern(q)); p is a constant.
/// Each entry is p (log p - log q) + (1 - p)(log(1 - p) - log(1 - q)), so
/// q == p yields exactly zero.
inline Var bernoulli_kl_mean(const Tensor& p, const Var& q) {
  if (p.shape != q.shape()) {
    throw ShapeError("bernoulli_kl_mean: " + to_string(p.shape) + " vs " + to_string(q.shape()));
  }
  Tape& t = q.tape();
  Tensor pc = p, log_p(p.rows(), p.cols()), log_1mp(p.rows(), p.cols());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    pc.data[i] = std::clamp(pc.data[i], ad::kProbMin, ad::kProbMax);
    log_p.data[i] = std::log(pc.data[i]);
    log_1mp.data[i] = std::log(1.0 - pc.data[i]);
  }
  Tensor one_minus_p = pc;
  for (double& v : one_minus_p.data) v = 1.0 - v;
  const Var qc = ad::clamp_prob(q);
  const Var pos = ad::sub(t.constant(std::move(log_p)), ad::log(qc));
  const Var neg = ad::sub(t.constant(std::move(log_1mp)),
                          ad::log(ad::add_scalar(ad::scale(qc, -1.0), 1.0)));
  return ad::mean(ad::add(ad::mul(t.constant(std::move(pc)), pos),
                          ad::mul(t.constant(std::move(one_minus_p)), neg)));
}

/// Maps an input matrix on a tape to posteriors on the same tape.
using ModelEval = std::function<Var(Tape&, const Var&)>;

struct VatOptions {
  double epsilon = 2.0;
  double xi = 1e-6;
  int power_iters = 1;
};

namespace loss_detail {
inline void normalize_rows(Tensor& d) {
  for (std::size_t i = 0; i < d.rows(); ++i) {
    double s = 0.0;
    for (double v : d.row(i)) s += v * v;
    s = std::sqrt(s);
    if (s > 0.0)
      for (double& v : d.row(i)) v /= s;
  }
}
}  // namespace loss_detail

/// LDS at a given input perturbation: KL(clean || model(x + r)).
inline Var vat_lds_at(const ModelEval& model, Tape& tape, const Tensor& x, const Tensor& r,
                      const Tensor& clean) {
  if (r.shape != x.shape) {
    throw ShapeError("vat_lds_at: perturbation " + to_string(r.shape) + " vs input " +
                     to_string(x.shape));
  }
  Tensor xr = x;
  for (std::size_t i = 0; i < xr.size(); ++i) xr.data[i] += r.data[i];
  return bernoulli_kl_mean(clean, model(tape, tape.constant(std::move(xr))));
}

/// Adversarial direction (unit norm per input row) found by power iteration.
template <typename Rng>
Tensor vat_adversarial_direction(const ModelEval& model, const Tensor& x, const Tensor& clean,
                                 const VatOptions& opt, Rng& rng) {
  if (opt.power_iters < 1) throw ConfigError("vat: power_iters must be at least 1");
  if (!(opt.xi > 0.0)) throw ConfigError("vat: xi must be positive");
  Tensor d(x.rows(), x.cols());
  {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : d.data) v = normal(rng);
  }
  loss_detail::normalize_rows(d);
  for (int it = 0; it < opt.power_iters; ++it) {
    Tape scratch;
    Tensor probe = d;
    for (double& v : probe.data) v *= opt.xi;
    const Var r = scratch.leaf(std::move(probe));
    const Var q = model(scratch, ad::add(scratch.constant(x), r));
    scratch.backward(bernoulli_kl_mean(clean, q));
    Tensor g = r.grad();
    loss_detail::normalize_rows(g);
    bool nonzero = false;
    for (double v : g.data) nonzero = nonzero || v != 0.0;
    if (nonzero) d = std::move(g);
  }
  return d;
}

/// Multi-label virtual adversarial loss: per-label Bernoulli KL between the
/// clean (detached) posteriors and those at the adversarial perturbation of
/// radius epsilon.
template <typename Rng>
Var vat_lds_multilabel(const ModelEval& model, Tape& tape, const Tensor& x, const VatOptions& opt,
                       Rng& rng, const Tensor* clean_posteriors = nullptr) {
  if (!(opt.epsilon > 0.0)) throw ConfigError("vat: epsilon must be positive");
  Tensor clean;
  if (clean_posteriors != nullptr) {
    clean = *clean_posteriors;
  } else {
    Tape probe;
    clean = model(probe, probe.constant(x)).value();
  }
  Tensor r = vat_adversarial_direction(model, x, clean, opt, rng);
  for (double& v : r.data) v *= opt.epsilon;
  return vat_lds_at(model, tape, x, r, clean);
}

}  // namespace nt
