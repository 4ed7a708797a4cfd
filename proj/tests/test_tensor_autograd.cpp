#include <doctest.h>

#include <cmath>

#include "microdense/autograd.hpp"
#include "microdense/layers.hpp"
#include "microdense/tensor.hpp"
#include "oracles.hpp"

using namespace microdense;

TEST_CASE("tensor shape bookkeeping") {
  Tensord t({2, 3, 4, 4});
  CHECK(t.size() == 96);
  CHECK(numel(t.shape()) == t.size());
  CHECK_THROWS_AS(Tensord({2, 0, 3}), Error);
  CHECK_THROWS_AS(Tensord({2, 2}, {1.0, 2.0, 3.0}), Error);
  t.at(1, 2, 3, 3) = 7.0;
  CHECK(t[95] == 7.0);
}

TEST_CASE("forward: single identity node returns the input unchanged") {
  Graph<double> g;
  Rng rng(11);
  auto t = oracles::random_tensor<double>(rng, {1, 3, 4, 4});
  Value x = g.input("x", t);
  Value y = identity(g, x);
  CHECK(g.out(y).same_values(t));
}

TEST_CASE("forward: add(x, x) doubles an all-ones tensor") {
  Graph<double> g;
  Value x = g.input("x", Tensord::full({2, 2}, 1.0));
  Value y = add(g, x, x);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(g.out(y)[i] == 2.0);
}

TEST_CASE("forward: conv-relu-sum chain matches a hand single-pass evaluation") {
  Rng rng(5);
  auto xt = oracles::random_tensor<double>(rng, {1, 2, 5, 5});
  ConvSpec spec{2, 3, 3, 3, 1, 1, 1, false};
  auto wt = oracles::random_tensor<double>(rng, spec.weight_shape());

  Graph<double> g;
  Value x = g.input("x", xt);
  Value w = g.constant(wt);
  Value c = conv2d(g, x, w, std::nullopt, spec);
  Value r = relu(g, c);
  Value s = sum(g, r);

  // Independent single pass outside the graph machinery.
  auto ref = oracles::reference_conv2d<double>(xt, wt, nullptr, spec);
  double expect = 0;
  for (std::int64_t i = 0; i < ref.size(); ++i)
    expect += ref[i] > 0 ? ref[i] : 0.0;
  CHECK(g.out(s)[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("forward: rebinding a named input reruns the tape deterministically") {
  Graph<double> g;
  Value x = g.input("x", Tensord::full({2, 2}, 1.0));
  Value y = add(g, x, x);
  g.forward({{"x", Tensord::full({2, 2}, 3.0)}});
  CHECK(g.out(y)[0] == 6.0);
  CHECK_THROWS_WITH_AS(g.rebind("x", Tensord({3, 2})),
                       doctest::Contains("expected shape"), Error);
  CHECK_THROWS_AS(g.rebind("nope", Tensord({2, 2})), Error);
}

TEST_CASE("backward: d(sum)/dx is all ones") {
  Graph<double> g;
  Rng rng(3);
  Value x = g.input("x", oracles::random_tensor<double>(rng, {2, 3}));
  Value s = sum(g, x);
  g.backward(s);
  for (std::int64_t i = 0; i < 6; ++i) CHECK(g.grad(x)[i] == 1.0);
}

TEST_CASE("backward: d(sum(x*x))/dx = 2x") {
  Graph<double> g;
  Value x = g.input("x", Tensord::from({3}, {1.0, 2.0, 3.0}));
  Value s = sum(g, mul(g, x, x));
  g.backward(s);
  CHECK(g.grad(x)[0] == doctest::Approx(2.0));
  CHECK(g.grad(x)[1] == doctest::Approx(4.0));
  CHECK(g.grad(x)[2] == doctest::Approx(6.0));
}

TEST_CASE("backward: terminal must be scalar") {
  Graph<double> g;
  Value x = g.input("x", Tensord::full({2, 2}, 1.0));
  Value y = add(g, x, x);
  CHECK_THROWS_WITH_AS(g.backward(y), doctest::Contains("scalar"), Error);
}

TEST_CASE("backward: fan-out accumulates branch gradients") {
  Rng rng(17);
  auto xt = oracles::random_tensor<double>(rng, {3, 3});

  // y = sum(x*x + x*x) consumed through two branches...
  Graph<double> g;
  Value x = g.input("x", xt);
  Value a = mul(g, x, x);
  Value b = mul(g, x, x);
  Value s = sum(g, add(g, a, b));
  g.backward(s);

  // ...equals the manually-summed single branch 2*(x*x).
  Graph<double> g2;
  Value x2 = g2.input("x", xt);
  Value m = mul(g2, x2, x2);
  Value s2 = sum(g2, add(g2, m, m));
  g2.backward(s2);

  for (std::int64_t i = 0; i < xt.size(); ++i)
    CHECK(g.grad(x)[i] == doctest::Approx(g2.grad(x2)[i]).epsilon(1e-14));
  CHECK(g.grad(x)[0] == doctest::Approx(4.0 * xt[0]).epsilon(1e-12));
}

TEST_CASE("parameter gradients accumulate across backward calls until zero_grad") {
  Parameter<double> p("w", Tensord::from({2}, {1.0, 2.0}));
  Graph<double> g;
  Value w = g.param(p);
  Value s = sum(g, mul(g, w, w));
  g.backward(s);
  CHECK(p.grad[0] == doctest::Approx(2.0));
  g.forward();
  g.backward(s);
  CHECK(p.grad[0] == doctest::Approx(4.0));  // accumulated
  p.zero_grad();
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("determinism: identical graphs produce bit-identical results") {
  auto run = [] {
    Rng rng(123);
    auto xt = oracles::random_tensor<double>(rng, {2, 3, 6, 6});
    ConvSpec spec{3, 4, 3, 3, 1, 1, 1, false};
    auto wt = oracles::random_tensor<double>(rng, spec.weight_shape());
    Graph<double> g;
    Value x = g.input("x", xt);
    Value w = g.constant(wt);
    Value s = sum(g, relu(g, conv2d(g, x, w, std::nullopt, spec)));
    g.backward(s);
    return std::pair{g.out(s)[0], g.grad(x)};
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1.same_values(g2));
}

TEST_CASE("finite_diff_grad: sum of squares at x=[3] is about 6") {
  auto f = [](const Tensord& t) {
    double acc = 0;
    for (std::int64_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
    return acc;
  };
  auto g = finite_diff_grad<double>(f, Tensord::from({1}, {3.0}), 1e-5);
  CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("finite_diff_grad: constant function has zero gradient") {
  auto g = finite_diff_grad<double>([](const Tensord&) { return 4.2; },
                                    Tensord::full({5}, 1.0), 1e-5);
  for (std::int64_t i = 0; i < 5; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("finite_diff_grad: rejects bad step and non-finite values") {
  CHECK_THROWS_AS(finite_diff_grad<double>([](const Tensord&) { return 0.0; },
                                           Tensord({1}), 0.0),
                  Error);
  CHECK_THROWS_AS(
      finite_diff_grad<double>(
          [](const Tensord& t) { return std::log(t[0]); },  // -inf at 0
          Tensord::from({1}, {0.0}), 1e-3),
      Error);
}

TEST_CASE("finite_diff_grad: softmax-CE of a 4-logit row matches softmax-onehot") {
  Rng rng(29);
  auto logits = oracles::random_tensor<double>(rng, {1, 4});
  std::vector<int> labels{2};
  auto f = [&](const Tensord& t) {
    Graph<double> g;
    Value x = g.input("x", t);
    Value l = softmax_cross_entropy(g, x, labels);
    return g.out(l)[0];
  };
  auto fd = finite_diff_grad<double>(f, logits, 1e-6);
  std::vector<double> flat(logits.data(), logits.data() + 4);
  auto analytic = oracles::softmax_ce_grad(flat, 1, 4, labels);
  for (std::int64_t i = 0; i < 4; ++i)
    CHECK(fd[i] == doctest::Approx(analytic[static_cast<std::size_t>(i)])
                       .epsilon(1e-5));
}

TEST_CASE("gradient-check property: random conv/relu/add graphs vs central differences") {
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    Rng rng(100 + trial);
    const std::int64_t ci = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t co = ci * (1 + static_cast<std::int64_t>(rng.below(2)));
    ConvSpec spec{ci, co, 3, 3, 1, 1, ci, false};  // depthwise-style groups
    if (co % ci != 0) spec.groups = 1;
    auto xt = oracles::random_tensor<double>(rng, {2, ci, 5, 5});
    auto wt = oracles::random_tensor<double>(rng, spec.weight_shape(), 0.5);
    Parameter<double> wp("w", wt);

    auto build = [&](Graph<double>& g) {
      Value x = g.input("x", xt);
      Value w = g.param(wp);
      Value c = conv2d(g, x, w, std::nullopt, spec);
      Value r = relu(g, c);
      return sum(g, mul(g, r, r));
    };

    Graph<double> g;
    Value loss = build(g);
    g.backward(loss);
    Tensord analytic = wp.grad;

    auto f = [&](const Tensord& t) {
      Tensord saved = wp.value;
      wp.value = t;
      g.forward();
      double v = g.out(loss)[0];
      wp.value = saved;
      return v;
    };
    auto fd = finite_diff_grad<double>(f, wp.value, 1e-5);
    CHECK(oracles::max_rel_error(analytic, fd) < 1e-4);
  }
}
