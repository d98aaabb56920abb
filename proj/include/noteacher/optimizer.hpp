#pragma once

#include <cmath>
#include <cstdint>

#include "noteacher/models.hpp"

namespace nt {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// Adam with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet& like, AdamOptions opt) : opt_(opt), m_(like), v_(like) { reset(); }

  void reset() {
    for (auto* s : {&m_, &v_})
      for (auto& t : s->tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
    step_ = 0;
  }

  void step(ParamSet& params, const ParamSet& grads, double lr) {
    if (!params.same_shapes(grads) || !params.same_shapes(m_)) {
      throw ShapeError("Adam: parameter / gradient / state shapes differ");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      auto& p = params.tensors[i].data;
      const auto& g = grads.tensors[i].data;
      auto& m = m_.tensors[i].data;
      auto& v = v_.tensors[i].data;
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
        v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        p[j] -= lr * (mh / (std::sqrt(vh) + opt_.eps) + opt_.weight_decay * p[j]);
      }
    }
  }

  [[nodiscard]] const AdamOptions& options() const { return opt_; }
  [[nodiscard]] const ParamSet& first_moment() const { return m_; }
  [[nodiscard]] const ParamSet& second_moment() const { return v_; }
  [[nodiscard]] std::int64_t steps() const { return step_; }

  void restore(ParamSet m, ParamSet v, std::int64_t steps) {
    m_ = std::move(m);
    v_ = std::move(v);
    step_ = steps;
  }

 private:
  AdamOptions opt_;
  ParamSet m_;
  ParamSet v_;
  std::int64_t step_ = 0;
};

}  // namespace nt
