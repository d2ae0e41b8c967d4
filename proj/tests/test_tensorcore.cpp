#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "whilter/attention.hpp"
#include "whilter/gradcheck.hpp"
#include "whilter/optim.hpp"
#include "whilter/rng.hpp"
#include "whilter/tensor.hpp"

using namespace whilter;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, Rng& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD::from(std::move(shape), std::move(v), grad);
}

// Weighted sum with fixed random coefficients, so every output element feeds the loss.
TD probe(const TD& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  TD w = random_tensor(t.shape(), rng, false);
  return sum(mul(t, w));
}

void expect_grads_match(const std::function<TD()>& f, std::vector<std::pair<std::string, TD>> params,
                        double tol = 1e-6) {
  const auto res = grad_check(f, std::move(params));
  EXPECT_LT(res.max_relative_error, tol) << "worst: " << res.worst_param << "[" << res.worst_index << "]";
  EXPECT_GT(res.checked, 0u);
}

}  // namespace

TEST(Tensor, FactoriesAndShape) {
  auto z = TD::zeros({2, 3});
  EXPECT_EQ(z.numel(), 6u);
  EXPECT_EQ(z.rows(), 2u);
  EXPECT_EQ(z.cols(), 3u);
  EXPECT_EQ(TD::scalar(2.5).item(), 2.5);
  EXPECT_EQ(TD::scalar(1.0).rank(), 0u);
  EXPECT_THROW(TD::from({2, 2}, {1.0, 2.0}), std::invalid_argument);
  EXPECT_EQ(shape_str({4, 5}), "[4x5]");
}

TEST(Tensor, MatmulMatchesNaiveLoops) {
  Rng rng(1);
  TD a = random_tensor({3, 4}, rng, false);
  TD b = random_tensor({4, 5}, rng, false);
  TD c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), acc, 1e-12);
    }
  }
  TD bt = random_tensor({5, 4}, rng, false);
  TD c2 = matmul_nt(a, bt);
  TD at = random_tensor({4, 3}, rng, false);
  TD c3 = matmul_tn(at, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double acc2 = 0, acc3 = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        acc2 += a.at(i, k) * bt.at(j, k);
        acc3 += at.at(k, i) * b.at(k, j);
      }
      EXPECT_NEAR(c2.at(i, j), acc2, 1e-12);
      EXPECT_NEAR(c3.at(i, j), acc3, 1e-12);
    }
  }
}

TEST(Tensor, ElementwiseGradients) {
  Rng rng(2);
  TD a = random_tensor({3, 4}, rng);
  TD b = random_tensor({3, 4}, rng);
  expect_grads_match([&] { return probe(add(a, b)); }, {{"a", a}, {"b", b}});
  expect_grads_match([&] { return probe(mul(a, b)); }, {{"a", a}, {"b", b}});
  expect_grads_match([&] { return probe(scale(a, 1.7)); }, {{"a", a}});
  expect_grads_match([&] { return probe(gelu(a)); }, {{"a", a}});
  expect_grads_match([&] { return probe(sigmoid(a)); }, {{"a", a}});
  expect_grads_match([&] { return probe(tanh(a)); }, {{"a", a}});
  expect_grads_match([&] { return probe(reshape(a, {4, 3})); }, {{"a", a}});
  expect_grads_match([&] { return probe(mean_rows(a)); }, {{"a", a}});
}

TEST(Tensor, ReluGradientAwayFromKink) {
  Rng rng(3);
  TD a = random_tensor({4, 4}, rng);
  for (auto& v : a.data())
    if (std::abs(v) < 0.05) v = 0.3;
  expect_grads_match([&] { return probe(relu(a)); }, {{"a", a}});
}

TEST(Tensor, SquaringThroughMulAccumulatesBothPaths) {
  TD a = TD::from({3}, {1.0, -2.0, 0.5}, true);
  sum(mul(a, a)).backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], -4.0);
  EXPECT_DOUBLE_EQ(a.grad()[2], 1.0);
}

TEST(Tensor, ReusedNodeGetsSummedGradient) {
  TD a = TD::from({2}, {1.0, 2.0}, true);
  TD b = scale(a, 3.0);
  sum(add(b, b)).backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], 6.0);
}

TEST(Tensor, MatmulAndLinearGradients) {
  Rng rng(4);
  TD x = random_tensor({5, 3}, rng);
  TD w = random_tensor({4, 3}, rng);
  TD bias = random_tensor({4}, rng);
  TD b = random_tensor({3, 2}, rng);
  TD c = random_tensor({5, 2}, rng);
  expect_grads_match([&] { return probe(matmul(x, b)); }, {{"x", x}, {"b", b}});
  expect_grads_match([&] { return probe(matmul_nt(x, w)); }, {{"x", x}, {"w", w}});
  expect_grads_match([&] { return probe(matmul_tn(x, c)); }, {{"x", x}, {"c", c}});
  expect_grads_match([&] { return probe(linear(x, w, bias)); }, {{"x", x}, {"w", w}, {"bias", bias}});
  expect_grads_match([&] { return probe(linear(x, w, TD{})); }, {{"x", x}, {"w", w}});
}

TEST(Tensor, SoftmaxGradientsBothAxes) {
  Rng rng(5);
  TD x = random_tensor({4, 6}, rng, true, -3, 3);
  TD v = random_tensor({7}, rng, true, -3, 3);
  expect_grads_match([&] { return probe(softmax(x, 1)); }, {{"x", x}});
  expect_grads_match([&] { return probe(softmax(x, 0)); }, {{"x", x}});
  expect_grads_match([&] { return probe(softmax(v, 0)); }, {{"v", v}});
}

TEST(Tensor, SoftmaxIsStableForLargeInputs) {
  TD x = TD::from({1, 3}, {1000.0, 1001.0, 1002.0});
  TD y = softmax(x, 1);
  const double e0 = std::exp(-2.0), e1 = std::exp(-1.0);
  const double z = e0 + e1 + 1.0;
  EXPECT_NEAR(y.at(0), e0 / z, 1e-15);
  EXPECT_NEAR(y.at(2), 1.0 / z, 1e-15);
  EXPECT_TRUE(y.all_finite());
}

TEST(Tensor, LayerNormNormalizesRowsAndHasCorrectGradients) {
  Rng rng(6);
  TD x = random_tensor({3, 8}, rng, true, -2, 2);
  TD g = random_tensor({8}, rng, true, 0.5, 1.5);
  TD b = random_tensor({8}, rng);
  TD ones = TD::full({8}, 1.0);
  TD zeros = TD::zeros({8});
  TD y = layer_norm(x, ones, zeros, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    double m = 0, s = 0;
    for (std::size_t j = 0; j < 8; ++j) m += y.at(i, j);
    m /= 8;
    for (std::size_t j = 0; j < 8; ++j) s += (y.at(i, j) - m) * (y.at(i, j) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(s / 8, 1.0, 1e-12);
  }
  expect_grads_match([&] { return probe(layer_norm(x, g, b, 1e-5)); }, {{"x", x}, {"g", g}, {"b", b}});
}

TEST(Tensor, GeluUsesExactErfForm) {
  TD x = TD::from({3}, {-1.0, 0.0, 1.0});
  TD y = gelu(x);
  auto phi = [](double v) { return 0.5 * std::erfc(-v / std::numbers::sqrt2); };
  EXPECT_NEAR(y.at(0), -1.0 * phi(-1.0), 1e-15);
  EXPECT_EQ(y.at(1), 0.0);
  EXPECT_NEAR(y.at(2), phi(1.0), 1e-15);
}

TEST(Tensor, SliceConcatAndWeightedLayerSumGradients) {
  Rng rng(7);
  TD x = random_tensor({3, 6}, rng);
  TD y = random_tensor({3, 2}, rng);
  expect_grads_match([&] { return probe(slice_cols(x, 2, 3)); }, {{"x", x}});
  expect_grads_match([&] { return probe(concat_cols(std::vector<TD>{x, y})); }, {{"x", x}, {"y", y}});

  std::vector<float> stack(4 * 5 * 3);
  for (auto& v : stack) v = static_cast<float>(rng.uniform(-1, 1));
  TD w = random_tensor({4}, rng);
  expect_grads_match([&] { return probe(weighted_layer_sum<double>(stack, 4, 5, 3, w)); }, {{"w", w}});
  TD fused = weighted_layer_sum<double>(stack, 4, 5, 3, w);
  double expect = 0;
  for (std::size_t l = 0; l < 4; ++l) expect += w.at(l) * stack[(l * 5 + 2) * 3 + 1];
  EXPECT_NEAR(fused.at(2, 1), expect, 1e-12);
}

TEST(Tensor, BinaryCrossEntropyValueAndGradient) {
  Rng rng(8);
  TD logits = random_tensor({1, 5}, rng, true, -2, 2);
  const std::vector<double> y = {1, 0, 1, 1, 0};
  expect_grads_match([&] { return binary_cross_entropy<double>(logits, y); }, {{"logits", logits}});
  TD zero = TD::zeros({1, 5});
  EXPECT_NEAR(binary_cross_entropy<double>(zero, y).item(), std::log(2.0), 1e-15);
}

TEST(Tensor, BinaryCrossEntropyClampStopsGradient) {
  TD logits = TD::from({2}, {40.0, -40.0}, true);
  const std::vector<double> y = {0, 0};
  TD loss = binary_cross_entropy<double>(logits, y);
  EXPECT_NEAR(loss.item(), 0.5 * (-std::log(1e-7)), 1e-6);
  loss.backward();
  EXPECT_EQ(logits.grad()[0], 0.0);
}

TEST(Tensor, DropoutModes) {
  Rng rng(9);
  TD x = TD::full({1000}, 1.0, true);
  EXPECT_EQ(dropout(x, 0.5, &rng, false).impl_ptr(), x.impl_ptr());
  TD y = dropout(x, 0.25, &rng, true);
  std::size_t zeros = 0;
  for (double v : y.data()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
    }
  }
  EXPECT_GT(zeros, 180u);
  EXPECT_LT(zeros, 320u);
  sum(y).backward();
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], y.at(i));
}

TEST(Tensor, NoGradGuardSkipsGraph) {
  TD a = TD::from({2}, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    TD b = scale(a, 2.0);
    EXPECT_FALSE(b.requires_grad());
    EXPECT_TRUE(b.impl().parents.empty());
  }
  TD c = scale(a, 2.0);
  EXPECT_TRUE(c.requires_grad());
}

TEST(Attention, MatchesReferenceLoops) {
  Rng rng(10);
  const std::size_t T = 4, d = 6, heads = 2, hd = 3;
  auto mk = [&](Shape s) { return random_tensor(std::move(s), rng, true, -0.7, 0.7); };
  AttentionParams<double> p{mk({d, d}), mk({d}), mk({d, d}), mk({d}), mk({d, d}), mk({d}), mk({d, d}), mk({d})};
  TD x = mk({T, d});
  TD out = multi_head_attention(x, x, x, p, heads);

  auto proj = [&](const TD& w, const TD& b) {
    std::vector<double> r(T * d);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t o = 0; o < d; ++o) {
        double acc = b.at(o);
        for (std::size_t i = 0; i < d; ++i) acc += w.at(o, i) * x.at(t, i);
        r[t * d + o] = acc;
      }
    return r;
  };
  const auto q = proj(p.wq, p.bq), k = proj(p.wk, p.bk), v = proj(p.wv, p.bv);
  std::vector<double> merged(T * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> s(T);
      double mx = -1e300;
      for (std::size_t j = 0; j < T; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < hd; ++c) acc += q[i * d + h * hd + c] * k[j * d + h * hd + c];
        s[j] = acc / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < T; ++j)
        for (std::size_t c = 0; c < hd; ++c) merged[i * d + h * hd + c] += s[j] / z * v[j * d + h * hd + c];
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t o = 0; o < d; ++o) {
      double acc = p.bo.at(o);
      for (std::size_t i = 0; i < d; ++i) acc += p.wo.at(o, i) * merged[t * d + i];
      EXPECT_NEAR(out.at(t, o), acc, 1e-12);
    }
  }
  expect_grads_match([&] { return probe(multi_head_attention(x, x, x, p, heads)); },
                     {{"x", x}, {"wq", p.wq}, {"wk", p.wk}, {"wv", p.wv}, {"wo", p.wo}, {"bq", p.bq}});
  EXPECT_THROW(multi_head_attention(x, x, x, p, 4), ConfigError);
}

TEST(Adam, MatchesScalarReference) {
  TD w = TD::from({2}, {0.5, -1.0}, true);
  Adam<double> opt({{"w", w}});
  // Reference: plain per-element Adam written out independently.
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {0.5, -1.0};
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int step = 1; step <= 5; ++step) {
    opt.zero_grad();
    // loss = sum(w^3)  =>  grad = 3 w^2
    sum(mul(mul(w, w), w)).backward();
    double g[2];
    for (int i = 0; i < 2; ++i) g[i] = 3 * ref[i] * ref[i];
    opt.step(lr);
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, step));
      const double vh = v[i] / (1 - std::pow(b2, step));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    EXPECT_NEAR(w.at(0), ref[0], 1e-14);
    EXPECT_NEAR(w.at(1), ref[1], 1e-14);
  }
  EXPECT_EQ(opt.state().step, 5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  TD w = TD::from({3}, {0.0, 1.0, 2.0}, true);
  Adam<double> opt({{"w", w}});
  sum(scale(w, -4.0)).backward();
  opt.step(1e-3);
  EXPECT_NEAR(w.at(0), 1e-3, 1e-10);
  EXPECT_NEAR(w.at(2), 2.0 + 1e-3, 1e-10);
}

TEST(Adam, RejectsNonFiniteGradientNamingParameter) {
  TD w = TD::from({2}, {1.0, 2.0}, true);
  Adam<double> opt({{"layers.0.ff1.weight", w}});
  w.grad()[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step(1e-3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layers.0.ff1.weight"), std::string::npos);
  }
  EXPECT_EQ(w.at(0), 1.0);
}

TEST(Adam, StateRoundTripRejectsShapeMismatch) {
  TD w = TD::from({2}, {1.0, 2.0}, true);
  Adam<double> opt({{"w", w}});
  AdamState<double> bad;
  bad.m = {{0.0}};
  bad.v = {{0.0}};
  EXPECT_THROW(opt.load_state(bad), DataError);
  AdamState<double> good = opt.state();
  good.step = 7;
  opt.load_state(good);
  EXPECT_EQ(opt.state().step, 7);
}

TEST(LrSchedule, ExponentialDecay) {
  LrSchedule s{1e-5, 0.7};
  EXPECT_EQ(s.lr_at(0), 1e-5);
  EXPECT_NEAR(s.lr_at(1), 7e-6, 1e-20);
  EXPECT_NEAR(LrSchedule({1e-5, 0.98}).lr_at(100), 1.326e-6, 1e-9);
  EXPECT_THROW(s.lr_at(-1), std::invalid_argument);
}

TEST(Rng, ReproducibleAndSerializable) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  const std::string st = a.state();
  const double u = a.uniform();
  Rng c(0);
  c.set_state(st);
  EXPECT_EQ(c.uniform(), u);
  EXPECT_THROW(c.set_state("garbage"), DataError);
  Rng s0 = Rng::stream(5, 0), s1 = Rng::stream(5, 1);
  EXPECT_NE(s0.next(), s1.next());
}

TEST(Rng, DrawsStayInRange) {
  Rng r(3);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.index(7);
    ASSERT_LT(k, 7u);
    ++counts[k];
    const auto n = r.integer(-2, 2);
    ASSERT_GE(n, -2);
    ASSERT_LE(n, 2);
  }
  for (int c : counts) EXPECT_NEAR(c, 1000, 150);
}
