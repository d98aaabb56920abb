// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"

using namespace nt;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

void require(Outcome& o, bool cond, const std::string& what) {
  if (!cond && o.pass) {
    o.pass = false;
    o.detail = what;
  }
}

std::string f6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// 1 ---------------------------------------------------------------------------

Outcome weight_closed_forms() {
  Outcome o;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e3));
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const long double s1 = std::exp(u(rng)), s2 = std::exp(u(rng)), sy = std::exp(u(rng));
    const LossWeights w = compute_not_weights({double(s1), double(s2), double(sy)});
    const long double d = s1 * s2 + s2 * sy + s1 * sy;
    const long double expect[4] = {s2 / (2 * d), s1 / (2 * d), sy / (2 * d), 1.0L / (2 * (s1 + s2))};
    const double got[4] = {w.lam_y1, w.lam_y2, w.lam_12_L, w.lam_12_U};
    for (int k = 0; k < 4; ++k) worst = std::max(worst, double(std::abs((got[k] - expect[k]) / expect[k])));
  }
  require(o, worst <= 1e-12, "max rel error " + f6(worst));
  const LossWeights q = compute_not_weights({0.25, 0.25, 0.25});
  const double dq = std::max({std::abs(q.lam_y1 - 2.0 / 3), std::abs(q.lam_y2 - 2.0 / 3),
                              std::abs(q.lam_12_L - 2.0 / 3), std::abs(q.lam_12_U - 1.0)});
  require(o, dq <= 1e-15, "(1/4,1/4,1/4) off by " + f6(dq));
  if (o.pass) o.detail = "max rel error " + f6(worst);
  return o;
}

// 2 ---------------------------------------------------------------------------

Outcome marginalization() {
  Outcome o;
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> lv(std::log(0.05), std::log(5.0)), f(-1.0, 2.0);
  double worst = 0.0;
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
    worst = std::max(worst, std::abs(quad - pair) / std::max(1.0, std::abs(pair)));
  }
  require(o, worst <= 1e-6, "max rel diff " + f6(worst));
  if (o.pass) o.detail = "max rel diff " + f6(worst);
  return o;
}

// 3 ---------------------------------------------------------------------------

BatchTargets random_targets(std::mt19937_64& rng, std::size_t nL, std::size_t nU, std::size_t K, bool unilabel) {
  BatchTargets t{Tensor(nL + nU, K), std::vector<bool>(nL + nU, false)};
  std::uniform_int_distribution<std::size_t> cls(0, K - 1);
  std::bernoulli_distribution coin(0.4);
  for (std::size_t i = 0; i < nL; ++i) {
    t.labeled[i] = true;
    if (unilabel) t.y(i, cls(rng)) = 1.0;
    else
      for (std::size_t k = 0; k < K; ++k) t.y(i, k) = coin(rng) ? 1.0 : 0.0;
  }
  return t;
}

Outcome gradient_suite() {
  Outcome o;
  std::mt19937_64 rng(303);
  const LossWeights w = compute_not_weights({0.25, 0.25, 0.1});
  std::map<std::string, double> worst;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t nL = 1 + trial % 4, nU = 1 + trial % 3, K = 2 + trial % 3, n = nL + nU;
    const BatchTargets ml = random_targets(rng, nL, nU, K, false);
    const BatchTargets ul = random_targets(rng, nL, nU, K, true);
    const std::vector<Tensor> z = {oracle::random_tensor(rng, n, K, -2, 2), oracle::random_tensor(rng, n, K, -2, 2)};
    const std::vector<double> gamma = {0.3, 0.6, 0.8, 0.45};
    const std::span<const double> g(gamma.data(), K);
    const Tensor x = oracle::random_tensor(rng, n, 3, -1, 1);
    const Tensor W = oracle::random_tensor(rng, 3, K, -1, 1);
    Tensor r(n, 3);
    for (std::size_t i = 0; i < r.size(); ++i) r.data[i] = 0.2 * std::sin(1.0 + double(i));
    const Tensor clean = ad::sigmoid(Tape{}.constant(z[1])).value();

    auto check = [&](const std::string& name, const std::vector<Tensor>& in, const oracle::Builder& f) {
      worst[name] = std::max(worst[name], oracle::tape_gradient_error(f, in));
    };
    auto sig = [](const Var& v) { return ad::sigmoid(v); };
    auto soft = [](const Var& v) { return ad::softmax_rows(v); };
    check("multilabel_ce", z, [&](Tape&, const std::vector<Var>& v) {
      return multilabel_ce(ml.labeled_targets(), ad::gather_rows(sig(v[0]), ml.labeled_rows()));
    });
    check("not_loss", z, [&](Tape&, const std::vector<Var>& v) { return not_loss(sig(v[0]), sig(v[1]), ml, w, nL, nU); });
    check("not_loss_squared", z, [&](Tape&, const std::vector<Var>& v) {
      return not_loss_squared(sig(v[0]), sig(v[1]), ml, w, nL, nU);
    });
    check("notga_loss", z, [&](Tape&, const std::vector<Var>& v) { return notga_loss(soft(v[0]), soft(v[1]), ul, w, g); });
    check("mt_loss", {z[0]}, [&](Tape& t, const std::vector<Var>& v) {
      return mt_loss(sig(v[0]), t.constant(clean), ml, 10.0);
    });
    check("pseudo_label_loss", {z[0]}, [&](Tape&, const std::vector<Var>& v) {
      return pseudo_label_loss(sig(v[0]), ml, 1.0, 0.5);
    });
    check("vat_lds", {W}, [&](Tape& t, const std::vector<Var>& v) {
      const Var Wv = v[0];
      const ModelEval model = [Wv](Tape&, const Var& in) { return ad::sigmoid(ad::matmul(in, Wv)); };
      return vat_lds_at(model, t, x, r, clean);
    });
  }
  std::string summary;
  for (const auto& [name, e] : worst) {
    require(o, e <= 1e-4, name + " rel error " + f6(e));
    summary += (summary.empty() ? "" : ", ") + name + " " + f6(e);
  }
  if (o.pass) o.detail = summary;
  return o;
}

// 4 ---------------------------------------------------------------------------

Outcome notga_equivalence() {
  Outcome o;
  std::mt19937_64 rng(404);
  const LossWeights w = compute_not_weights({0.25, 0.25, 0.1});
  const double gamma[4] = {0.2, 0.5, 0.9, 0.35};
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 8, K = 2 + trial % 3;
    const BatchTargets bt = random_targets(rng, n, 0, K, true);
    const Tensor z1 = oracle::random_tensor(rng, n, K, -3, 3), z2 = oracle::random_tensor(rng, n, K, -3, 3);
    Tape ta, tb;
    const Var a1 = ta.leaf(z1), a2 = ta.leaf(z2), b1 = tb.leaf(z1), b2 = tb.leaf(z2);
    const Var la = notga_loss(ad::softmax_rows(a1), ad::softmax_rows(a2), bt, w, std::span<const double>(gamma, K));
    const Var lb = not_loss(ad::softmax_rows(b1), ad::softmax_rows(b2), bt, w, n, 0);
    ta.backward(la);
    tb.backward(lb);
    worst = std::max(worst, std::abs(la.item() - lb.item()));
    for (std::size_t i = 0; i < z1.size(); ++i) {
      worst = std::max(worst, std::abs(a1.grad().data[i] - b1.grad().data[i]));
      worst = std::max(worst, std::abs(a2.grad().data[i] - b2.grad().data[i]));
    }
  }
  require(o, worst <= 1e-12, "max diff " + f6(worst));
  if (o.pass) o.detail = "max value/gradient diff " + f6(worst);
  return o;
}

// 5 ---------------------------------------------------------------------------

Outcome likelihood_consistency() {
  Outcome o;
  std::mt19937_64 rng(505);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_real_distribution<double> lv(std::log(0.01), std::log(10.0));
    const LossWeights w = compute_not_weights({std::exp(lv(rng)), std::exp(lv(rng)), std::exp(lv(rng))});
    const std::size_t nL = 1 + trial % 5, nU = trial % 4, K = 1 + trial % 3;
    const BatchTargets bt = random_targets(rng, nL, nU, K, false);
    Tape t;
    const Var f1 = ad::sigmoid(t.leaf(oracle::random_tensor(rng, nL + nU, K, -3, 3)));
    const Var f2 = ad::sigmoid(t.leaf(oracle::random_tensor(rng, nL + nU, K, -3, 3)));
    const double got = not_loss_squared(f1, f2, bt, w, nL, nU).item();
    const double expect = oracle::not_neg_log_likelihood(f1.value(), f2.value(), bt.y, bt.labeled, w);
    worst = std::max(worst, std::abs(got - expect) / std::max(1.0, std::abs(expect)));
  }
  require(o, worst <= 1e-10, "max diff " + f6(worst));
  if (o.pass) o.detail = "max diff " + f6(worst);
  return o;
}

// 6 ---------------------------------------------------------------------------

Outcome sampling_invariants() {
  Outcome o;
  ClassGeometry g;
  g.dim = 4;
  g.prevalence = {0.3, 0.01, 0.5};
  const Dataset pool = gen_synthetic(606, 1000, 3, LabelMode::multilabel, Structure::flat, g);
  BudgetPlan plan;
  plan.budgets = {10, 20, 50, 100};
  std::size_t max_extra = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::set<std::size_t> prev;
    for (const auto& s : realistic_sample(pool, plan, seed)) {
      std::set<std::size_t> labeled(s.train.begin(), s.train.end());
      labeled.insert(s.val.begin(), s.val.end());
      require(o, labeled.size() == s.train.size() + s.val.size(), "train/val overlap");
      require(o, labeled.size() >= s.budget, "L_F < L");
      max_extra = std::max(max_extra, labeled.size() - s.budget);
      for (std::size_t k = 0; k < pool.K; ++k) {
        std::size_t pos = 0;
        for (std::size_t i : labeled) pos += pool.samples[i].y[k] == 1.0;
        require(o, pos >= plan.min_positives_per_label, "label " + std::to_string(k) + " uncovered");
      }
      require(o, std::includes(labeled.begin(), labeled.end(), prev.begin(), prev.end()), "budgets not nested");
      std::vector<std::size_t> all(labeled.begin(), labeled.end());
      all.insert(all.end(), s.unlabeled.begin(), s.unlabeled.end());
      std::sort(all.begin(), all.end());
      bool partition = all.size() == pool.size();
      for (std::size_t i = 0; partition && i < all.size(); ++i) partition = all[i] == i;
      require(o, partition, "splits do not partition the pool (seed " + std::to_string(seed) + ")");
      prev = labeled;
    }
  }
  if (o.pass) o.detail = "100 seeds x 4 budgets, max L_F - L = " + std::to_string(max_extra);
  return o;
}

// 7 ---------------------------------------------------------------------------

std::vector<std::int64_t> counts_of(const Dataset& pool, const std::vector<std::size_t>& idx) {
  std::vector<std::int64_t> c(pool.K, 0);
  const auto cls = pool.class_indices();
  for (std::size_t i : idx) ++c[cls[i]];
  return c;
}

Outcome mismatch_tables() {
  Outcome o;
  for (const MismatchSpec& spec : {dm7511_spec(), dm3311_spec()}) {
    const SplitCounts& want = *spec.counts;
    ClassGeometry g;
    g.dim = 2;
    for (std::size_t k = 0; k < 4; ++k)
      g.class_counts.push_back(std::size_t(want.labeled[k] + want.unlabeled[k] + want.val[k] + want.test[k] + 17));
    const Dataset pool = gen_synthetic(707, 0, 4, LabelMode::unilabel, Structure::flat, g);
    const MismatchSplit m = build_mismatch(pool, spec, 7);
    require(o, counts_of(pool, m.labeled) == want.labeled, "labeled counts differ");
    require(o, counts_of(pool, m.unlabeled) == want.unlabeled, "unlabeled counts differ");
    require(o, counts_of(pool, m.val) == want.val, "val counts differ");
    require(o, counts_of(pool, m.test) == want.test, "test counts differ");
    if (spec.unlabeled_ratio == std::vector<double>{3, 3, 1, 1}) {
      const double expect[4] = {0.25, 0.25, 0.75, 0.75};
      double worst = 0.0;
      for (int k = 0; k < 4; ++k) worst = std::max(worst, std::abs(m.distribution.gamma[k] - expect[k]));
      require(o, worst <= 1e-12, "DM-3311 gamma off by " + f6(worst));
    }
  }
  if (o.pass) o.detail = "DM-7511 and DM-3311 counts exact, gamma(DM-3311) = [0.25, 0.25, 0.75, 0.75]";
  return o;
}

// 8 ---------------------------------------------------------------------------

Outcome metric_oracles() {
  Outcome o;
  std::mt19937_64 rng(808);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial) * 198 / 99;
    std::vector<double> s(n);
    std::vector<int> y(n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> coarse(0, 9);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 3 == 0 ? coarse(rng) / 9.0 : u(rng);
      y[i] = u(rng) < 0.3 ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    worst = std::max(worst, std::abs(*auroc(s, y) - oracle::auroc_pairs(s, y)));
    worst = std::max(worst, std::abs(*auprc(s, y) - oracle::ap_sweep(s, y)));
  }
  require(o, worst <= 1e-12, "max oracle diff " + f6(worst));
  const std::vector<double> ties = {0.4, 0.4, 0.4, 0.4}, four = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> yt = {1, 0, 1, 0}, y4 = {0, 0, 1, 1};
  require(o, *auroc(ties, yt) == 0.5, "all-ties case");
  require(o, std::abs(*auroc(four, y4) - 0.75) <= 1e-15, "4-point case");
  if (o.pass) o.detail = "max oracle diff " + f6(worst);
  return o;
}

// 9 ---------------------------------------------------------------------------

Outcome ema_closed_form() {
  Outcome o;
  const MlpSpec spec{3, {4}, 2};
  const ParamSet t0 = init_params(spec, 1), c = init_params(spec, 2);
  double worst = 0.0;
  for (double a : {0.91, 0.95, 0.99}) {
    for (int n : {1, 10, 1000}) {
      ParamSet t = t0;
      for (int i = 0; i < n; ++i) ema_update(t, c, a);
      const auto got = t.flatten(), x0 = t0.flatten(), cc = c.flatten();
      for (std::size_t j = 0; j < got.size(); ++j)
        worst = std::max(worst, std::abs(got[j] - (cc[j] + std::pow(a, n) * (x0[j] - cc[j]))));
    }
  }
  require(o, worst <= 1e-12, "max deviation " + f6(worst));
  if (o.pass) o.detail = "max deviation " + f6(worst);
  return o;
}

// 10 --------------------------------------------------------------------------

struct MethodStats {
  std::vector<double> auroc, auprc, low_recall;

  [[nodiscard]] static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
  }
};

TrainConfig toy_train(Method m, std::uint64_t seed) {
  TrainConfig c;
  c.method = m;
  c.seed = seed;
  c.nL = 16;
  c.nU = 16;
  c.lr = 1e-3;
  c.hidden_dims = {32};
  c.max_epochs = 60;
  c.checkpoint_interval_iters = 10;
  c.early_stop_patience = 15;
  c.reduce_lr_patience = 5;
  return c;
}

Outcome toy_ssl() {
  Outcome o;
  std::map<Method, MethodStats> stats;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ClassGeometry g;
    g.dim = 20;
    g.overlap = 0.5;
    const Dataset all = gen_synthetic(derive_seed(seed, "dataset"), 3000, 2, LabelMode::multilabel, Structure::flat, g);
    const Dataset pool = all.subset(std::vector<std::size_t>(
        [] { std::vector<std::size_t> v(2000); std::iota(v.begin(), v.end(), 0); return v; }()));
    const Dataset test = all.subset(std::vector<std::size_t>(
        [] { std::vector<std::size_t> v(1000); std::iota(v.begin(), v.end(), 2000); return v; }()));
    BudgetPlan plan;
    plan.budgets = {100};  // 5% of the pool
    const SplitData data = materialize(pool, realistic_sample(pool, plan, derive_seed(seed, "sampling"))[0], test);
    for (Method m : {Method::SUP, Method::MT, Method::NoT}) {
      const TrainedRun r = train(toy_train(m, seed), data);
      const MetricsReport rep = evaluate_posteriors(predict(r.spec, r.best_params, test), test.targets(), 0.5, false);
      stats[m].auroc.push_back(rep.mean_auroc.value_or(0.0));
    }
  }
  const double sup = MethodStats::mean(stats[Method::SUP].auroc);
  const double mt = MethodStats::mean(stats[Method::MT].auroc);
  const double nott = MethodStats::mean(stats[Method::NoT].auroc);
  o.detail = "mean test AUROC SUP " + f6(sup) + ", MT " + f6(mt) + ", NoT " + f6(nott);
  require(o, nott >= sup, "NoT below SUP: " + o.detail);
  require(o, nott >= mt - 0.01, "NoT below MT - 0.01: " + o.detail);
  return o;
}

// 11 --------------------------------------------------------------------------

Outcome toy_mismatch() {
  Outcome o;
  std::map<Method, MethodStats> stats;
  const MismatchSpec spec = dm3311_spec();
  const SplitCounts& n = *spec.counts;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ClassGeometry g;
    g.dim = 10;
    g.overlap = 0.7;
    for (std::size_t k = 0; k < 4; ++k) g.class_counts.push_back(std::size_t(n.labeled[k] + n.unlabeled[k] + n.val[k] + n.test[k]));
    const Dataset pool = gen_synthetic(derive_seed(seed, "dataset"), 0, 4, LabelMode::unilabel, Structure::flat, g);
    const MismatchSplit m = build_mismatch(pool, spec, derive_seed(seed, "sampling"));
    const SplitData data = materialize(pool, m);
    const auto& gamma = m.distribution.gamma;
    std::vector<std::size_t> low;
    const double gmin = *std::min_element(gamma.begin(), gamma.end());
    for (std::size_t k = 0; k < gamma.size(); ++k)
      if (gamma[k] == gmin) low.push_back(k);
    for (Method meth : {Method::NoT, Method::NoTGA}) {
      TrainConfig c = toy_train(meth, seed);
      c.max_epochs = 20;
      c.checkpoint_interval_iters = 50;
      c.gamma = gamma;
      c.graph.sigmay_sq = 0x1p-7;
      const TrainedRun r = train(c, data);
      const MetricsReport rep =
          evaluate_posteriors(predict(r.spec, r.best_params, data.test), data.test.targets(), 0.5, true);
      stats[meth].auprc.push_back(rep.mean_auprc.value_or(0.0));
      double rec = 0.0;
      for (std::size_t k : low) rec += rep.at_threshold.recall[k].value_or(0.0);
      stats[meth].low_recall.push_back(rec / double(low.size()));
    }
  }
  const double ap_not = MethodStats::mean(stats[Method::NoT].auprc);
  const double ap_ga = MethodStats::mean(stats[Method::NoTGA].auprc);
  const double rc_not = MethodStats::mean(stats[Method::NoT].low_recall);
  const double rc_ga = MethodStats::mean(stats[Method::NoTGA].low_recall);
  o.detail = "mean AUPRC NoT-GA " + f6(ap_ga) + " vs NoT " + f6(ap_not) + "; low-gamma recall NoT-GA " + f6(rc_ga) +
             " vs NoT " + f6(rc_not);
  require(o, ap_ga >= ap_not, "AUPRC ordering fails: " + o.detail);
  require(o, rc_ga > rc_not, "recall ordering fails: " + o.detail);
  return o;
}

// 12 --------------------------------------------------------------------------

Outcome determinism_and_resume() {
  Outcome o;
  ClassGeometry g;
  g.dim = 5;
  const Dataset pool = gen_synthetic(1212, 400, 2, LabelMode::multilabel, Structure::flat, g);
  const Dataset upool = gen_synthetic(1213, 400, 2, LabelMode::unilabel, Structure::flat, g);
  BudgetPlan plan;
  plan.budgets = {60};
  const SplitData multi = materialize(pool, realistic_sample(pool, plan, 1)[0], Dataset{});
  const SplitData uni = materialize(upool, realistic_sample(upool, plan, 1)[0], Dataset{});
  for (Method m : {Method::SUP, Method::PSU, Method::VAT, Method::MT, Method::NoT, Method::NoTGA}) {
    const SplitData& data = m == Method::NoTGA ? uni : multi;
    TrainConfig c = toy_train(m, 3);
    c.nL = 8;
    c.nU = 8;
    c.max_iters = 120;
    c.augment.level = AugLevel::noise_affine_intensity;
    if (m == Method::NoTGA) c.gamma = std::vector<double>{0.4, 0.6};
    const TrainedRun a = train(c, data), b = train(c, data);
    require(o, history_csv(a.history, m) == history_csv(b.history, m), to_string(m) + ": history differs");
    Trainer first(c, data);
    first.run_until(50);
    const Checkpoint ck = parse_checkpoint(serialize_checkpoint(c, first.state()));
    Trainer resumed(ck.config, data, ck.state);
    resumed.run();
    const TrainedRun rr = resumed.result();
    require(o, history_csv(rr.history, m) == history_csv(a.history, m) && rr.best_params == a.best_params &&
                   rr.loss_trace == a.loss_trace,
            to_string(m) + ": resumed run differs");
  }
  if (o.pass) o.detail = "6 methods: repeat runs and checkpoint resume at iter 50 are bit-identical";
  return o;
}

// 13 --------------------------------------------------------------------------

struct CountingRng {
  using result_type = Rng::result_type;
  Rng inner;
  std::size_t calls = 0;
  explicit CountingRng(std::uint64_t s) : inner(s) {}
  static constexpr result_type min() { return Rng::min(); }
  static constexpr result_type max() { return Rng::max(); }
  result_type operator()() {
    ++calls;
    return inner();
  }
};

Outcome bag_invariances() {
  Outcome o;
  std::mt19937_64 rng(1313);
  const MlpSpec spec{6, {8}, 3};
  for (int trial = 0; trial < 100; ++trial) {
    const ParamSet p = init_params(spec, static_cast<std::uint64_t>(trial));
    const std::size_t n = 1 + trial % 12;
    const Tensor scan = oracle::random_tensor(rng, n, 6, -2, 2);
    const Tensor base = forward_bag(spec, p, scan);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    perm.push_back(perm[static_cast<std::size_t>(trial) % n]);
    for (bool dup : {false, true}) {
      const std::size_t rows = dup ? perm.size() : n;
      Tensor t(rows, 6);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < 6; ++j) t(r, j) = scan(perm[r], j);
      require(o, forward_bag(spec, p, t).data == base.data,
              dup ? "duplicate slice changed the output" : "slice permutation changed the output");
    }
  }

  // Per-scan augmentation: engine draws equal one transform draw, and every
  // slice sees the same parameters.
  for (AugLevel level : {AugLevel::noise, AugLevel::noise_affine, AugLevel::noise_affine_intensity}) {
    AugPolicy policy;
    policy.level = level;
    Sample s;
    s.x = oracle::random_tensor(rng, 7, 4, 0.1, 2.0);
    s.y = {1.0, 0.0};
    CountingRng counted(9), reference(9);
    const Sample out = augment(s, policy, counted);
    const AugTransform t = draw_transform(policy, 4, reference);
    require(o, counted.calls == reference.calls, "augment drew more than one transform per scan");
    for (std::size_t r = 0; r < 7; ++r) {
      Sample slice;
      slice.x = Tensor(1, 4);
      for (std::size_t j = 0; j < 4; ++j) slice.x(0, j) = s.x(r, j);
      const Sample one = apply_transform(slice, t);
      for (std::size_t j = 0; j < 4; ++j) require(o, one.x(0, j) == out.x(r, j), "slice saw different parameters");
    }
    require(o, out.y == s.y, "augmentation changed the target");
  }
  if (o.pass) o.detail = "100 bags bitwise invariant; 1 transform draw per scan at 3 levels";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"weight closed forms", weight_closed_forms},
      {"marginalization oracle", marginalization},
      {"loss gradient suite", gradient_suite},
      {"NoT-GA / NoT labeled equivalence", notga_equivalence},
      {"likelihood / squared-loss consistency", likelihood_consistency},
      {"sampling invariants", sampling_invariants},
      {"mismatch construction", mismatch_tables},
      {"metric oracles", metric_oracles},
      {"EMA closed form", ema_closed_form},
      {"toy SSL replication", toy_ssl},
      {"toy mismatch replication", toy_mismatch},
      {"determinism and resume", determinism_and_resume},
      {"bag-model invariances", bag_invariances},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %2zu. %s (%.2fs): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
