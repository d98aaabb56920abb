#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace nt;

namespace {

MlpSpec spec(std::size_t in, std::size_t out, OutputMode mode = OutputMode::sigmoid_multilabel) {
  return MlpSpec{in, {8, 5}, out, Activation::relu, mode};
}

Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& idx) {
  Tensor out(idx.size(), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) = x(idx[r], j);
  return out;
}

}  // namespace

TEST(Models, InitIsDeterministicAndGlorotBounded) {
  const MlpSpec s = spec(6, 3);
  const ParamSet a = init_params(s, 42), b = init_params(s, 42), c = init_params(s, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.flatten(), c.flatten());
  EXPECT_EQ(a.size(), s.param_count());
  const auto layers = s.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const double lim = std::sqrt(6.0 / double(layers[l].first + layers[l].second));
    for (double v : a.tensors[2 * l].data) EXPECT_LE(std::abs(v), lim);
    for (double v : a.tensors[2 * l + 1].data) EXPECT_EQ(v, 0.0);
  }
}

TEST(Models, PairViewsAreIndependent) {
  const ModelPair p = init_pair(spec(4, 2), derive_seed(0, "init-1"), derive_seed(0, "init-2"));
  EXPECT_NE(p.f1.flatten(), p.f2.flatten());
}

TEST(Models, OutputsAreProbabilities) {
  std::mt19937_64 rng(1);
  const Tensor x = oracle::random_tensor(rng, 7, 4, -3, 3);
  const Tensor sig = forward_mlp(spec(4, 3), init_params(spec(4, 3), 1), x);
  for (double v : sig.data) EXPECT_TRUE(v > 0.0 && v < 1.0);
  const MlpSpec sm = spec(4, 3, OutputMode::softmax_unilabel);
  const Tensor soft = forward_mlp(sm, init_params(sm, 1), x);
  for (std::size_t i = 0; i < soft.rows(); ++i) {
    double s = 0.0;
    for (double v : soft.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
}

TEST(Models, InputWidthMismatchIsShapeError) {
  Tensor x(2, 5);
  EXPECT_THROW((void)forward_mlp(spec(4, 2), init_params(spec(4, 2), 0), x), ShapeError);
  EXPECT_THROW((void)init_params(MlpSpec{0, {}, 1}, 0), ConfigError);
}

TEST(Models, BagOutputIgnoresSliceOrderAndDuplicates) {
  std::mt19937_64 rng(5);
  const MlpSpec s = spec(6, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const ParamSet p = init_params(s, static_cast<std::uint64_t>(trial));
    const std::size_t n = 2 + trial % 9;
    const Tensor scan = oracle::random_tensor(rng, n, 6, -2, 2);
    const Tensor base = forward_bag(s, p, scan);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_EQ(forward_bag(s, p, rows_of(scan, perm)).data, base.data);
    std::vector<std::size_t> dup = perm;
    dup.push_back(perm[trial % n]);
    dup.push_back(perm[0]);
    EXPECT_EQ(forward_bag(s, p, rows_of(scan, dup)).data, base.data);
  }
}

TEST(Models, SingleSliceBagEqualsFlatForward) {
  std::mt19937_64 rng(6);
  const MlpSpec s = spec(3, 2);
  const ParamSet p = init_params(s, 9);
  const Tensor x = oracle::random_tensor(rng, 1, 3);
  EXPECT_EQ(forward_bag(s, p, x).data, forward_mlp(s, p, x).data);
  EXPECT_THROW((void)forward_bag(s, p, Tensor(0, 3)), DataError);
}

TEST(Models, StackedBatchMatchesPerBagForward) {
  std::mt19937_64 rng(7);
  const MlpSpec s = spec(4, 2);
  const ParamSet p = init_params(s, 3);
  std::vector<Tensor> bags = {oracle::random_tensor(rng, 3, 4), oracle::random_tensor(rng, 1, 4),
                              oracle::random_tensor(rng, 5, 4)};
  BagBatch b;
  b.slices = Tensor(9, 4);
  std::size_t o = 0;
  for (const auto& t : bags) {
    std::copy(t.data.begin(), t.data.end(), b.slices.data.begin() + o * 4);
    o += t.rows();
    b.offsets.push_back(o);
  }
  const Tensor out = forward_batch(s, p, b);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const Tensor one = forward_bag(s, p, bags[i]);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(out(i, k), one(0, k));
  }
}

TEST(Models, EmaMatchesClosedForm) {
  const MlpSpec s = spec(3, 2);
  ParamSet teacher = init_params(s, 1);
  const ParamSet t0 = teacher;
  std::vector<ParamSet> students;
  for (int i = 0; i < 10; ++i) students.push_back(init_params(s, 100 + static_cast<std::uint64_t>(i)));
  const double a = 0.9;
  for (const auto& st : students) ema_update(teacher, st, a);
  const auto got = teacher.flatten();
  auto expect = t0.flatten();
  for (double& v : expect) v *= std::pow(a, 10);
  for (int i = 0; i < 10; ++i) {
    const auto f = students[static_cast<std::size_t>(i)].flatten();
    const double w = (1 - a) * std::pow(a, 9 - i);
    for (std::size_t j = 0; j < f.size(); ++j) expect[j] += w * f[j];
  }
  for (std::size_t j = 0; j < got.size(); ++j) EXPECT_NEAR(got[j], expect[j], 1e-14);
  EXPECT_THROW(ema_update(teacher, t0, 1.5), ConfigError);
}

TEST(Models, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  const MlpSpec s{3, {4}, 2, Activation::tanh, OutputMode::softmax_unilabel};
  const ParamSet p = init_params(s, 2);
  const Tensor x = oracle::random_tensor(rng, 5, 3);
  const oracle::Builder f = [&](Tape& t, const std::vector<Var>& v) {
    BoundParams b{v};
    return ad::sum(ad::square(forward_mlp(s, b, t.constant(x))));
  };
  EXPECT_LE(oracle::tape_gradient_error(f, p.tensors), 1e-5);
}

TEST(Models, AdamFirstStepMovesByLearningRate) {
  ParamSet p{{Tensor(1, 2, std::vector<double>{1.0, -2.0})}};
  ParamSet g{{Tensor(1, 2, std::vector<double>{0.5, -3.0})}};
  Adam opt(p, AdamOptions{0.9, 0.999, 1e-8, 0.0});
  opt.step(p, g, 0.01);
  // Bias-corrected first step is sign(g) * lr (up to eps).
  EXPECT_NEAR(p.tensors[0].data[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.tensors[0].data[1], -2.0 + 0.01, 1e-9);
}

TEST(Models, AdamWeightDecayIsDecoupled) {
  ParamSet p{{Tensor(1, 1, std::vector<double>{2.0})}};
  ParamSet g{{Tensor(1, 1, 0.0)}};
  Adam opt(p, AdamOptions{0.9, 0.999, 1e-8, 0.1});
  opt.step(p, g, 0.5);
  EXPECT_DOUBLE_EQ(p.tensors[0].data[0], 2.0 - 0.5 * 0.1 * 2.0);
}
