#pragma once

// Backbones: a dense MLP whose hidden layers double as the per-slice trunk
// of the multi-instance (scan-bag) model. A flat sample is a bag with one
// slice, so both share one parameter layout:
//
//   trunk:  h = act(x W_i + b_i) for every hidden layer
//   pool:   element-wise max over the slices of each bag
//   head:   z = h W_out + b_out, then sigmoid (multi-label) or softmax

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "noteacher/autodiff.hpp"
#include "noteacher/error.hpp"
#include "noteacher/rng.hpp"

namespace nt {

enum class Activation { relu, tanh };
enum class OutputMode { sigmoid_multilabel, softmax_unilabel };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  Activation activation = Activation::relu;
  OutputMode output = OutputMode::sigmoid_multilabel;

  void validate() const {
    if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
    if (output_dim < 1) throw ConfigError("model: output_dim must be >= 1");
    for (std::size_t h : hidden_dims)
      if (h < 1) throw ConfigError("model: hidden dims must be >= 1");
  }

  /// (fan_in, fan_out) of every dense layer, trunk first, head last.
  [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> layers() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t in = input_dim;
    for (std::size_t h : hidden_dims) {
      out.emplace_back(in, h);
      in = h;
    }
    out.emplace_back(in, output_dim);
    return out;
  }

  [[nodiscard]] std::size_t param_count() const {
    std::size_t n = 0;
    for (auto [in, out] : layers()) n += in * out + out;
    return n;
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Weights and biases in layer order: W0, b0, W1, b1, ...
struct ParamSet {
  std::vector<Tensor> tensors;

  [[nodiscard]] std::size_t size() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& t : tensors) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    if (flat.size() != size()) throw ShapeError("ParamSet: flat size mismatch");
    std::size_t o = 0;
    for (auto& t : tensors) {
      std::copy(flat.begin() + o, flat.begin() + o + t.size(), t.data.begin());
      o += t.size();
    }
  }

  [[nodiscard]] bool same_shapes(const ParamSet& other) const {
    if (tensors.size() != other.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (tensors[i].shape != other.tensors[i].shape) return false;
    return true;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

/// Glorot-uniform weights, zero biases, reproducible from the seed.
inline ParamSet init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamSet p;
  for (auto [in, out] : spec.layers()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> uni(-limit, limit);
    Tensor w(in, out);
    for (double& v : w.data) v = uni(rng);
    p.tensors.push_back(std::move(w));
    p.tensors.emplace_back(1, out);
  }
  return p;
}

inline ParamSet zero_params(const MlpSpec& spec) {
  spec.validate();
  ParamSet p;
  for (auto [in, out] : spec.layers()) {
    p.tensors.emplace_back(in, out);
    p.tensors.emplace_back(1, out);
  }
  return p;
}

/// Parameters placed on a tape.
struct BoundParams {
  std::vector<Var> vars;
};

inline BoundParams bind(Tape& tape, const ParamSet& p, bool trainable = true) {
  BoundParams b;
  b.vars.reserve(p.tensors.size());
  for (const auto& t : p.tensors) b.vars.push_back(trainable ? tape.leaf(t) : tape.constant(t));
  return b;
}

inline ParamSet grads_of(const BoundParams& b) {
  ParamSet g;
  for (const Var& v : b.vars) g.tensors.push_back(v.grad());
  return g;
}

/// Stacked slices of a batch of bags; bag i owns rows [offsets[i], offsets[i+1]).
struct BagBatch {
  Tensor slices;
  std::vector<std::size_t> offsets{0};

  [[nodiscard]] std::size_t num_bags() const { return offsets.size() - 1; }
};

namespace model_detail {

inline void check_bound(const MlpSpec& spec, const BoundParams& p) {
  if (p.vars.size() != 2 * (spec.hidden_dims.size() + 1)) {
    throw ShapeError("model: parameter set has " + std::to_string(p.vars.size()) +
                     " tensors, spec expects " + std::to_string(2 * (spec.hidden_dims.size() + 1)));
  }
}

inline Var dense(const Var& x, const Var& w, const Var& b) { return ad::add_row(ad::matmul(x, w), b); }

inline Var activate(const MlpSpec& spec, const Var& x) {
  return spec.activation == Activation::relu ? ad::relu(x) : ad::tanh(x);
}

inline Var output(const MlpSpec& spec, const Var& z) {
  return spec.output == OutputMode::sigmoid_multilabel ? ad::sigmoid(z) : ad::softmax_rows(z);
}

}  // namespace model_detail

/// Per-slice trunk features.
inline Var forward_trunk(const MlpSpec& spec, const BoundParams& p, const Var& x) {
  model_detail::check_bound(spec, p);
  if (x.shape().cols != spec.input_dim) {
    throw ShapeError("model: input has " + std::to_string(x.shape().cols) + " features, spec expects " +
                     std::to_string(spec.input_dim));
  }
  Var h = x;
  for (std::size_t l = 0; l < spec.hidden_dims.size(); ++l)
    h = model_detail::activate(spec, model_detail::dense(h, p.vars[2 * l], p.vars[2 * l + 1]));
  return h;
}

inline Var forward_head(const MlpSpec& spec, const BoundParams& p, const Var& pooled) {
  const std::size_t l = spec.hidden_dims.size();
  return model_detail::output(spec, model_detail::dense(pooled, p.vars[2 * l], p.vars[2 * l + 1]));
}

/// Posteriors for stacked slices grouped by `offsets` (one output row per bag).
inline Var forward_stacked(const MlpSpec& spec, const BoundParams& p, const Var& slices,
                           std::span<const std::size_t> offsets) {
  const Var h = forward_trunk(spec, p, slices);
  bool singleton = offsets.size() == slices.shape().rows + 1;
  const Var pooled = singleton ? h : ad::segment_max(h, offsets);
  return forward_head(spec, p, pooled);
}

/// Flat MLP forward over a (batch x input_dim) input already on the tape.
inline Var forward_mlp(const MlpSpec& spec, const BoundParams& p, const Var& x) {
  const Var h = forward_trunk(spec, p, x);
  return forward_head(spec, p, h);
}

/// Evaluation-only convenience: posteriors for a constant input.
inline Tensor forward_mlp(const MlpSpec& spec, const ParamSet& params, const Tensor& x) {
  for (double v : x.data)
    if (!std::isfinite(v)) throw DomainError("forward_mlp: non-finite input");
  Tape t;
  return forward_mlp(spec, bind(t, params, false), t.constant(x)).value();
}

/// Multi-instance forward for one scan: shared trunk per slice, max over
/// slices (lowest index wins ties), head on the pooled features. One row out.
inline Var forward_bag(const MlpSpec& spec, const BoundParams& p, const Var& scan) {
  if (scan.shape().rows == 0) throw DataError("forward_bag: empty scan");
  const std::size_t offsets[2] = {0, scan.shape().rows};
  const Var h = forward_trunk(spec, p, scan);
  return forward_head(spec, p, ad::segment_max(h, offsets));
}

inline Tensor forward_bag(const MlpSpec& spec, const ParamSet& params, const Tensor& scan) {
  Tape t;
  return forward_bag(spec, bind(t, params, false), t.constant(scan)).value();
}

inline Tensor forward_batch(const MlpSpec& spec, const ParamSet& params, const BagBatch& batch) {
  Tape t;
  return forward_stacked(spec, bind(t, params, false), t.constant(batch.slices), batch.offsets).value();
}

/// The two independently initialized views of NoT.
struct ModelPair {
  MlpSpec spec;
  ParamSet f1;
  ParamSet f2;
};

inline ModelPair init_pair(const MlpSpec& spec, std::uint64_t seed1, std::uint64_t seed2) {
  return ModelPair{spec, init_params(spec, seed1), init_params(spec, seed2)};
}

/// Mean Teacher student/teacher container. The teacher only moves through
/// ema_update().
struct EmaPair {
  MlpSpec spec;
  ParamSet student;
  ParamSet teacher;
  double ema_decay = 0.99;
};

inline EmaPair init_ema_pair(const MlpSpec& spec, std::uint64_t seed, double decay) {
  ParamSet s = init_params(spec, seed);
  return EmaPair{spec, s, s, decay};
}

/// teacher <- decay * teacher + (1 - decay) * student, element-wise.
inline void ema_update(ParamSet& teacher, const ParamSet& student, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("ema_update: decay must lie in [0, 1]");
  if (!teacher.same_shapes(student)) throw ShapeError("ema_update: parameter shapes differ");
  for (std::size_t i = 0; i < teacher.tensors.size(); ++i) {
    auto& t = teacher.tensors[i].data;
    const auto& s = student.tensors[i].data;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = decay * t[j] + (1.0 - decay) * s[j];
  }
}

inline void ema_update(EmaPair& pair) { ema_update(pair.teacher, pair.student, pair.ema_decay); }

}  // namespace nt
