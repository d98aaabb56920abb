#pragma once

// Semi-supervised training loop shared by every method.
//
// One epoch walks the labeled training set once in nL-sized batches
// (shuffled, without replacement); each batch is topped up with nU unlabeled
// samples drawn uniformly with replacement. Every `validation_interval`
// iterations both constituent networks are scored on the validation split,
// which drives best-model selection, LR reduction and early stopping.
//
// Constituent networks per method:
//   SUP, VAT: trained model (a) and its EMA copy (b)
//   PSU:      trained model (a)
//   MT:       student (a) and teacher (b)
//   NoT/NoT-GA: f1 (a) and f2 (b)

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "noteacher/data.hpp"
#include "noteacher/graphical_model.hpp"
#include "noteacher/losses.hpp"
#include "noteacher/metrics.hpp"
#include "noteacher/models.hpp"
#include "noteacher/optimizer.hpp"
#include "noteacher/rng.hpp"
#include "noteacher/sampling.hpp"

namespace nt {

enum class Method { SUP, PSU, VAT, MT, NoT, NoTGA };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::SUP: return "SUP";
    case Method::PSU: return "PSU";
    case Method::VAT: return "VAT";
    case Method::MT: return "MT";
    case Method::NoT: return "NoT";
    case Method::NoTGA: return "NoT-GA";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::SUP, Method::PSU, Method::VAT, Method::MT, Method::NoT, Method::NoTGA})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "' (expected SUP, PSU, VAT, MT, NoT, NoT-GA)");
}

/// Whether a method keeps a second network.
inline bool has_second_network(Method m) { return m != Method::PSU; }

struct TrainConfig {
  Method method = Method::SUP;
  std::size_t nL = 16;
  std::size_t nU = 16;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.99;
  double lambda_cons = 10.0;
  double vat_epsilon = 2.0;
  double vat_xi = 1e-6;
  int vat_power_iters = 1;
  double vat_weight = 1.0;
  double psu_weight = 1.0;
  double psu_threshold = 0.5;
  GraphHyperParams graph;
  std::optional<std::vector<double>> gamma;
  std::size_t max_epochs = 100;
  /// Optional hard cap on iterations (0: none).
  std::size_t max_iters = 0;
  std::size_t early_stop_patience = 15;
  std::size_t reduce_lr_patience = 5;
  double lr_reduce_factor = 0.1;
  /// Validation checkpoint every I iterations.
  std::size_t checkpoint_interval_iters = 40;
  double binarize_tau = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_dims{32};
  Activation activation = Activation::relu;
  AugPolicy augment;

  void validate() const {
    if (nL < 1) throw ConfigError("train.nL must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be nonnegative");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw ConfigError("train.adam_betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("train.ema_decay must lie in [0, 1]");
    if (!(lambda_cons >= 0.0)) throw ConfigError("train.lambda_cons must be nonnegative");
    if (!(vat_epsilon > 0.0)) throw ConfigError("train.vat_epsilon must be positive");
    if (!(vat_xi > 0.0)) throw ConfigError("train.vat_xi must be positive");
    if (vat_power_iters < 1) throw ConfigError("train.vat_power_iters must be >= 1");
    if (!(psu_threshold > 0.0 && psu_threshold < 1.0)) throw ConfigError("train.psu_threshold must lie in (0, 1)");
    if (early_stop_patience < 1 || reduce_lr_patience < 1) throw ConfigError("train: patience values must be >= 1");
    if (!(lr_reduce_factor > 0.0 && lr_reduce_factor <= 1.0)) {
      throw ConfigError("train.lr_reduce_factor must lie in (0, 1]");
    }
    if (checkpoint_interval_iters < 1) throw ConfigError("train.checkpoint_interval_iters must be >= 1");
    if (!(binarize_tau > 0.0 && binarize_tau < 1.0)) throw ConfigError("train.binarize_tau must lie in (0, 1)");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    graph.validate();
    if (method == Method::NoTGA && !gamma) throw ConfigError("train.gamma is required for NoT-GA");
  }
};

/// One validation checkpoint.
struct HistoryRow {
  std::int64_t iter = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean over the iterations since the previous row
  std::optional<double> auroc_a;
  std::optional<double> auroc_b;
  std::optional<std::int64_t> disagreement;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

/// Validation posteriors of both networks at one checkpoint.
struct ValSnapshot {
  std::int64_t iter = 0;
  Tensor post_a;
  Tensor post_b;

  friend bool operator==(const ValSnapshot&, const ValSnapshot&) = default;
};

struct ValidationResult {
  std::vector<std::optional<double>> per_label_auroc;
  std::optional<double> mean_auroc;
  Tensor posteriors;
  Tensor binarized;
};

inline Tensor predict(const MlpSpec& spec, const ParamSet& params, const Dataset& d) {
  if (d.size() == 0) return Tensor(0, spec.output_dim);
  return forward_batch(spec, params, stack(d));
}

/// Deterministic evaluation on a split without augmentation.
inline ValidationResult validate(const MlpSpec& spec, const ParamSet& params, const Dataset& val, double tau) {
  if (val.size() == 0) throw DataError("validate: empty validation split");
  ValidationResult r;
  r.posteriors = predict(spec, params, val);
  r.per_label_auroc = per_label_auroc(r.posteriors, val.targets());
  r.mean_auroc = mean_defined(r.per_label_auroc);
  r.binarized = r.posteriors;
  for (double& v : r.binarized.data) v = binarize(v, tau);
  return r;
}

/// Complete mutable state of a run; enough to resume bit-exactly.
struct TrainerState {
  std::int64_t iter = 0;
  std::int64_t epoch = 0;
  std::size_t batch_cursor = 0;  // next labeled position within the epoch order
  std::vector<std::size_t> epoch_order;
  double lr = 0.0;
  ParamSet net_a;
  ParamSet net_b;
  ParamSet adam_a_m, adam_a_v, adam_b_m, adam_b_v;
  std::int64_t adam_a_steps = 0, adam_b_steps = 0;
  std::string rng_batching, rng_augment, rng_vat;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::int64_t best_iter = -1;
  int best_net = 0;  // 0: a, 1: b
  ParamSet best_params;
  std::size_t since_improvement = 0;
  std::size_t since_lr_change = 0;
  bool finished = false;
  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  std::vector<HistoryRow> history;
  std::vector<ValSnapshot> snapshots;
  std::vector<double> loss_trace;

  friend bool operator==(const TrainerState&, const TrainerState&) = default;
};

struct TrainedRun {
  MlpSpec spec;
  ParamSet best_params;
  int best_net = 0;
  std::int64_t best_iter = -1;
  double best_metric = 0.0;
  std::vector<HistoryRow> history;
  std::vector<ValSnapshot> snapshots;
  std::vector<double> loss_trace;
};

inline MlpSpec model_spec_for(const TrainConfig& c, const Dataset& d) {
  return MlpSpec{d.dim, c.hidden_dims, d.K, c.activation,
                 d.mode == LabelMode::unilabel ? OutputMode::softmax_unilabel : OutputMode::sigmoid_multilabel};
}

class Trainer {
 public:
  /// `data` must outlive the trainer.
  Trainer(TrainConfig config, const SplitData& data) : cfg_(std::move(config)), data_(&data) {
    check_config();
    spec_ = model_spec_for(cfg_, data.labeled);
    const AdamOptions opt{cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps, cfg_.weight_decay};
    s_.lr = cfg_.lr;
    s_.net_a = init_params(spec_, derive_seed(cfg_.seed, "init-1"));
    if (cfg_.method == Method::NoT || cfg_.method == Method::NoTGA) {
      s_.net_b = init_params(spec_, derive_seed(cfg_.seed, "init-2"));
    } else if (has_second_network(cfg_.method)) {
      s_.net_b = s_.net_a;  // teacher / EMA copy starts from the student
    }
    adam_a_ = Adam(s_.net_a, opt);
    if (trains_b()) adam_b_ = Adam(s_.net_b, opt);
    batching_ = make_rng(cfg_.seed, "batching");
    augment_rng_ = make_rng(cfg_.seed, "augmentation");
    vat_rng_ = make_rng(cfg_.seed, "vat");
  }

  /// Resume from a saved state.
  Trainer(TrainConfig config, const SplitData& data, const TrainerState& state) : Trainer(std::move(config), data) {
    restore(state);
  }

  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] const MlpSpec& spec() const { return spec_; }
  [[nodiscard]] bool done() const { return s_.finished; }
  [[nodiscard]] std::int64_t iteration() const { return s_.iter; }
  [[nodiscard]] const ParamSet& net_a() const { return s_.net_a; }
  [[nodiscard]] const ParamSet& net_b() const { return s_.net_b; }

  /// One optimization step (plus validation when due).
  void step() {
    if (s_.finished) return;
    if (s_.epoch_order.empty() || s_.batch_cursor >= s_.epoch_order.size()) start_epoch();
    const double loss = optimize_batch();
    s_.loss_trace.push_back(loss);
    s_.loss_sum += loss;
    ++s_.loss_count;
    ++s_.iter;
    if (s_.iter % static_cast<std::int64_t>(cfg_.checkpoint_interval_iters) == 0) validation_checkpoint();
    if (s_.finished) return;
    const bool epoch_end = s_.batch_cursor >= s_.epoch_order.size();
    const bool out_of_epochs = epoch_end && static_cast<std::size_t>(s_.epoch) >= cfg_.max_epochs;
    const bool out_of_iters = cfg_.max_iters > 0 && static_cast<std::size_t>(s_.iter) >= cfg_.max_iters;
    if (out_of_epochs || out_of_iters) finish();
  }

  void run() {
    while (!s_.finished) step();
  }

  /// Runs until `iter` iterations are done or training stops.
  void run_until(std::int64_t iter) {
    while (!s_.finished && s_.iter < iter) step();
  }

  [[nodiscard]] TrainerState state() const {
    TrainerState st = s_;
    st.adam_a_m = adam_a_.first_moment();
    st.adam_a_v = adam_a_.second_moment();
    st.adam_a_steps = adam_a_.steps();
    if (trains_b()) {
      st.adam_b_m = adam_b_.first_moment();
      st.adam_b_v = adam_b_.second_moment();
      st.adam_b_steps = adam_b_.steps();
    }
    st.rng_batching = rng_state(batching_);
    st.rng_augment = rng_state(augment_rng_);
    st.rng_vat = rng_state(vat_rng_);
    return st;
  }

  [[nodiscard]] TrainedRun result() const {
    TrainedRun r;
    r.spec = spec_;
    r.best_params = s_.best_params.tensors.empty() ? s_.net_a : s_.best_params;
    r.best_net = s_.best_net;
    r.best_iter = s_.best_iter;
    r.best_metric = s_.best_metric;
    r.history = s_.history;
    r.snapshots = s_.snapshots;
    r.loss_trace = s_.loss_trace;
    return r;
  }

 private:
  [[nodiscard]] bool trains_b() const { return cfg_.method == Method::NoT || cfg_.method == Method::NoTGA; }
  [[nodiscard]] bool uses_unlabeled() const { return cfg_.method != Method::SUP && cfg_.nU > 0; }

  void check_config() const {
    cfg_.validate();
    const SplitData& d = *data_;
    if (d.labeled.size() == 0) throw DataError("train: labeled training split is empty");
    if (d.val.size() == 0) throw DataError("train: validation split is empty");
    if (cfg_.method != Method::SUP && cfg_.nU > 0 && d.unlabeled.size() == 0) {
      throw ConfigError("train: nU > 0 but the unlabeled pool is empty");
    }
    if (cfg_.method == Method::NoTGA) {
      if (d.labeled.mode != LabelMode::unilabel) throw ConfigError("train: NoT-GA supports uni-label data only");
      if (cfg_.gamma->size() != d.labeled.K) throw ConfigError("train.gamma must have K entries");
    }
    for (const Dataset* x : {&d.labeled, &d.val, &d.unlabeled}) {
      if (x->size() > 0 && (x->dim != d.labeled.dim || x->K != d.labeled.K)) {
        throw DataError("train: splits disagree on feature dimension or K");
      }
    }
  }

  void restore(const TrainerState& st) {
    const bool shapes_ok = st.net_a.same_shapes(s_.net_a) &&
                           (!has_second_network(cfg_.method) || st.net_b.same_shapes(s_.net_b));
    if (!shapes_ok) throw DataError("resume: checkpoint parameters do not match the model spec");
    s_ = st;
    adam_a_.restore(st.adam_a_m, st.adam_a_v, st.adam_a_steps);
    if (trains_b()) adam_b_.restore(st.adam_b_m, st.adam_b_v, st.adam_b_steps);
    batching_ = rng_from_state(st.rng_batching);
    augment_rng_ = rng_from_state(st.rng_augment);
    vat_rng_ = rng_from_state(st.rng_vat);
    s_.adam_a_m = s_.adam_a_v = s_.adam_b_m = s_.adam_b_v = ParamSet{};
  }

  void start_epoch() {
    s_.epoch_order.resize(data_->labeled.size());
    std::iota(s_.epoch_order.begin(), s_.epoch_order.end(), 0);
    std::shuffle(s_.epoch_order.begin(), s_.epoch_order.end(), batching_);
    s_.batch_cursor = 0;
    ++s_.epoch;
  }

  struct Batch {
    std::vector<const Sample*> samples;
    BatchTargets targets;
    std::size_t nL = 0;
    std::size_t nU = 0;
  };

  Batch next_batch() {
    Batch b;
    const auto& order = s_.epoch_order;
    const std::size_t end = std::min(order.size(), s_.batch_cursor + cfg_.nL);
    for (std::size_t i = s_.batch_cursor; i < end; ++i) b.samples.push_back(&data_->labeled.samples[order[i]]);
    s_.batch_cursor = end;
    b.nL = b.samples.size();
    if (uses_unlabeled()) {
      std::uniform_int_distribution<std::size_t> pick(0, data_->unlabeled.size() - 1);
      for (std::size_t i = 0; i < cfg_.nU; ++i) b.samples.push_back(&data_->unlabeled.samples[pick(batching_)]);
      b.nU = cfg_.nU;
    }
    const std::size_t K = spec_.output_dim;
    b.targets.y = Tensor(b.samples.size(), K);
    b.targets.labeled.assign(b.samples.size(), false);
    for (std::size_t i = 0; i < b.nL; ++i) {
      b.targets.labeled[i] = true;
      for (std::size_t k = 0; k < K; ++k) b.targets.y(i, k) = b.samples[i]->y[k];
    }
    return b;
  }

  BagBatch augmented_view(const Batch& b) {
    std::vector<Sample> aug;
    aug.reserve(b.samples.size());
    for (const Sample* s : b.samples) aug.push_back(augment(*s, cfg_.augment, augment_rng_));
    std::vector<const Sample*> ptrs;
    for (const auto& s : aug) ptrs.push_back(&s);
    return stack(ptrs, spec_.input_dim);
  }

  double optimize_batch() {
    const Batch b = next_batch();
    const BagBatch v1 = augmented_view(b);
    Tape tape;
    const BoundParams pa = bind(tape, s_.net_a, true);
    const Var fa = forward_stacked(spec_, pa, tape.constant(v1.slices), v1.offsets);
    Var loss;
    switch (cfg_.method) {
      case Method::SUP:
        loss = multilabel_ce(b.targets.labeled_targets(), ad::gather_rows(fa, b.targets.labeled_rows()));
        break;
      case Method::PSU:
        loss = pseudo_label_loss(fa, b.targets, cfg_.psu_weight, cfg_.psu_threshold);
        break;
      case Method::VAT: {
        const Var ce = multilabel_ce(b.targets.labeled_targets(), ad::gather_rows(fa, b.targets.labeled_rows()));
        Tape* main = &tape;
        const ModelEval model = [&, main](Tape& t, const Var& x) {
          if (&t == main) return forward_stacked(spec_, pa, x, v1.offsets);
          return forward_stacked(spec_, bind(t, s_.net_a, false), x, v1.offsets);
        };
        const VatOptions opt{cfg_.vat_epsilon, cfg_.vat_xi, cfg_.vat_power_iters};
        const Tensor clean = fa.value();
        const Var lds = vat_lds_multilabel(model, tape, v1.slices, opt, vat_rng_, &clean);
        loss = ad::add(ce, ad::scale(lds, cfg_.vat_weight));
        break;
      }
      case Method::MT: {
        const BagBatch v2 = augmented_view(b);
        const Var fb = forward_stacked(spec_, bind(tape, s_.net_b, false), tape.constant(v2.slices), v2.offsets);
        loss = mt_loss(fa, fb, b.targets, cfg_.lambda_cons);
        break;
      }
      case Method::NoT:
      case Method::NoTGA: {
        const BagBatch v2 = augmented_view(b);
        const BoundParams pb = bind(tape, s_.net_b, true);
        const Var fb = forward_stacked(spec_, pb, tape.constant(v2.slices), v2.offsets);
        const LossWeights w = compute_not_weights(cfg_.graph);
        loss = cfg_.method == Method::NoT ? not_loss(fa, fb, b.targets, w, b.nL, b.nU)
                                          : notga_loss(fa, fb, b.targets, w, *cfg_.gamma);
        tape.backward(loss);
        adam_a_.step(s_.net_a, grads_of(pa), s_.lr);
        adam_b_.step(s_.net_b, grads_of(pb), s_.lr);
        return loss.item();
      }
    }
    tape.backward(loss);
    adam_a_.step(s_.net_a, grads_of(pa), s_.lr);
    if (has_second_network(cfg_.method)) ema_update(s_.net_b, s_.net_a, cfg_.ema_decay);
    return loss.item();
  }

  void validation_checkpoint() {
    const double tau = cfg_.binarize_tau;
    const ValidationResult va = validate(spec_, s_.net_a, data_->val, tau);
    HistoryRow row;
    row.iter = s_.iter;
    row.epoch = s_.epoch;
    row.lr = s_.lr;
    row.train_loss = s_.loss_count > 0 ? s_.loss_sum / static_cast<double>(s_.loss_count) : 0.0;
    row.auroc_a = va.mean_auroc;
    ValSnapshot snap{s_.iter, va.posteriors, {}};
    double metric = va.mean_auroc.value_or(-std::numeric_limits<double>::infinity());
    int which = 0;
    if (has_second_network(cfg_.method)) {
      const ValidationResult vb = validate(spec_, s_.net_b, data_->val, tau);
      row.auroc_b = vb.mean_auroc;
      row.disagreement = static_cast<std::int64_t>(disagreement_count(va.posteriors, vb.posteriors, tau));
      snap.post_b = vb.posteriors;
      if (vb.mean_auroc && *vb.mean_auroc > metric) {
        metric = *vb.mean_auroc;
        which = 1;
      }
    }
    s_.history.push_back(row);
    s_.snapshots.push_back(std::move(snap));
    s_.loss_sum = 0.0;
    s_.loss_count = 0;

    if (metric - s_.best_metric >= kImprovementEpsilon) {
      s_.best_metric = metric;
      s_.best_iter = s_.iter;
      s_.best_net = which;
      s_.best_params = which == 0 ? s_.net_a : s_.net_b;
      s_.since_improvement = 0;
      s_.since_lr_change = 0;
      return;
    }
    ++s_.since_improvement;
    ++s_.since_lr_change;
    if (s_.since_improvement >= cfg_.early_stop_patience) {
      s_.finished = true;
      return;
    }
    if (s_.since_lr_change >= cfg_.reduce_lr_patience) {
      s_.lr *= cfg_.lr_reduce_factor;
      s_.since_lr_change = 0;
    }
  }

  void finish() {
    if (s_.history.empty() || s_.history.back().iter != s_.iter) validation_checkpoint();
    s_.finished = true;
  }

  static constexpr double kImprovementEpsilon = 1e-5;

  TrainConfig cfg_;
  const SplitData* data_;
  MlpSpec spec_;
  TrainerState s_;
  Adam adam_a_;
  Adam adam_b_;
  Rng batching_;
  Rng augment_rng_;
  Rng vat_rng_;
};

inline TrainedRun train(const TrainConfig& config, const SplitData& data) {
  Trainer t(config, data);
  t.run();
  return t.result();
}

}  // namespace nt
