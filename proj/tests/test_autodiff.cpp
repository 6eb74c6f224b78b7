#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "msg3d/autodiff/checkpoint.hpp"
#include "msg3d/autodiff/gradcheck.hpp"
#include "msg3d/autodiff/ops.hpp"
#include "msg3d/autodiff/optim.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace msg3d::ad;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(numel(shape));
  for (double& x : v) x = nd(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Weighted sum with fixed random weights, so every output entry matters.
Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  return sum(mul(y, randn(y.shape(), seed, false)));
}

void expect_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& at) {
  const auto report = finite_diff_check(f, at);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-4);
}

// Direct loops over x[B,T,N,Cin], w[k,Cin,Cout].
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, int stride, int dilation) {
  const std::size_t b = x.dim(0), t = x.dim(1), n = x.dim(2), ci = x.dim(3), co = w.dim(2), k = w.dim(0);
  const std::size_t to = (t + stride - 1) / stride;
  std::vector<double> out(b * to * n * co, 0.0);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t tt = 0; tt < to; ++tt)
      for (std::size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(tt) * stride + dilation * (static_cast<long>(j) - static_cast<long>(k / 2));
        if (src < 0 || src >= static_cast<long>(t)) continue;
        for (std::size_t v = 0; v < n; ++v)
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t o = 0; o < co; ++o)
              out[((bi * to + tt) * n + v) * co + o] +=
                  x.values()[((bi * t + src) * n + v) * ci + c] * w.values()[(j * ci + c) * co + o];
      }
  return out;
}

}  // namespace

TEST_CASE("tensor construction") {
  const Tensor z({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.rank() == 2);
  CHECK(z.dim(1) == 3);
  CHECK(std::all_of(z.values().begin(), z.values().end(), [](double v) { return v == 0.0; }));
  CHECK(Tensor::filled({2}, 1.5).values()[1] == 1.5);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
  CHECK_THROWS(z.item());
  CHECK_THROWS(z.dim(2));
  CHECK(to_string(Shape{2, 3}) == "[2,3]");
}

TEST_CASE("detach copies") {
  Tensor a = randn({3}, 1);
  Tensor d = a.detach();
  d.values()[0] = 42.0;
  CHECK(a.values()[0] != 42.0);
  CHECK_FALSE(d.requires_grad());
}

TEST_CASE("elementwise ops and accumulation") {
  Tensor a({2}, {1.0, 2.0}, true), b({2}, {3.0, -1.0}, true);
  const Tensor y = sum(a * b + 2.0 * a - b);
  CHECK(y.item() == doctest::Approx(1 * 3 - 2 + 2 * 3 - 2));
  backward(y);
  CHECK(a.grad()[0] == doctest::Approx(5.0));
  CHECK(a.grad()[1] == doctest::Approx(1.0));
  CHECK(b.grad()[0] == doctest::Approx(0.0));
  CHECK(b.grad()[1] == doctest::Approx(1.0));
  backward(sum(a * b + 2.0 * a - b));
  CHECK(a.grad()[0] == doctest::Approx(10.0));
  a.zero_grad();
  CHECK(a.grad()[0] == 0.0);
  CHECK_THROWS_AS(add(a, Tensor({3})), std::invalid_argument);
  CHECK_THROWS_AS(backward(a), std::invalid_argument);
  CHECK(mean(Tensor({4}, {1, 2, 3, 6})).item() == 3.0);
}

TEST_CASE("no-grad guard") {
  Tensor a = randn({3}, 2);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(relu(a).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(relu(a).requires_grad());
}

TEST_CASE("shared subexpressions accumulate") {
  Tensor x({1}, {3.0}, true);
  const Tensor y = x * x;
  backward(sum(y + y));
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("layout ops") {
  const Tensor a({2, 3}, {0, 1, 2, 3, 4, 5});
  const auto p = permute(a, {1, 0});
  CHECK(p.shape() == Shape{3, 2});
  CHECK(std::vector<double>(p.values().begin(), p.values().end()) == std::vector<double>{0, 3, 1, 4, 2, 5});
  CHECK_THROWS_AS(permute(a, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(reshape(a, {4}), std::invalid_argument);
  CHECK(reshape(a, {3, 2}).shape() == Shape{3, 2});
  const auto c = concat_last({a, Tensor({2, 1}, {9, 8})});
  CHECK(std::vector<double>(c.values().begin(), c.values().end()) ==
        std::vector<double>{0, 1, 2, 9, 3, 4, 5, 8});
  CHECK_THROWS_AS(concat_last({a, Tensor({3, 1})}), std::invalid_argument);
  expect_gradients([](const Tensor& x) { return probe(permute(x, {2, 0, 1})); }, randn({2, 3, 4}, 3));
  expect_gradients([](const Tensor& x) { return probe(concat_last({x, x})); }, randn({2, 3}, 4));
}

TEST_CASE("contract matches naive loops") {
  const auto a = randn({3, 4, 5}, 5), b = randn({3, 5, 2}, 6);
  const auto c = contract(a, b, "tij,tjc->tic");
  REQUIRE(c.shape() == Shape{3, 4, 2});
  std::vector<double> ref(24, 0.0);
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j)
        for (int k = 0; k < 2; ++k)
          ref[(t * 4 + i) * 2 + k] += a.values()[(t * 4 + i) * 5 + j] * b.values()[(t * 5 + j) * 2 + k];
  CHECK(max_abs_diff(c.values(), ref) < 1e-12);

  const auto m = randn({4, 3}, 7), v = randn({2, 3, 5}, 8);
  const auto r = contract(m, v, "ij,bjk->bik");
  CHECK(r.shape() == Shape{2, 4, 5});
  CHECK(contract(v, m, "bjk,ij->bki").shape() == Shape{2, 5, 4});

  CHECK_THROWS_AS(contract(a, b, "tij,tjc"), std::invalid_argument);
  CHECK_THROWS_AS(contract(a, b, "tij,tjc->tiz"), std::invalid_argument);
  CHECK_THROWS_AS(contract(a, b, "tii,tjc->tic"), std::invalid_argument);
  CHECK_THROWS_AS(contract(a, a, "tij,tjc->tic"), std::invalid_argument);

  expect_gradients([&](const Tensor& x) { return probe(contract(x, b, "tij,tjc->tic")); }, randn({3, 4, 5}, 9));
  expect_gradients([&](const Tensor& x) { return probe(contract(a, x, "tij,tjc->tic")); }, randn({3, 5, 2}, 10));
  expect_gradients([&](const Tensor& x) { return probe(contract(x, v, "ij,bjk->bik")); }, randn({4, 3}, 11));
}

TEST_CASE("matmul and bias") {
  const Tensor x({2, 2}, {1, 2, 3, 4}), w({2, 1}, {1, -1});
  const auto y = add_bias(matmul(x, w), Tensor(Shape{1}, std::vector<double>{0.5}));
  CHECK(y.values()[0] == -0.5);
  CHECK(y.values()[1] == -0.5);
  CHECK_THROWS_AS(matmul(x, Tensor({3, 1})), std::invalid_argument);
  CHECK_THROWS_AS(add_bias(x, Tensor({3})), std::invalid_argument);
  const auto wg = randn({4, 3}, 12);
  expect_gradients([&](const Tensor& t) { return probe(matmul(t, wg)); }, randn({2, 5, 4}, 13));
  const auto xg = randn({2, 5, 4}, 14);
  expect_gradients([&](const Tensor& t) { return probe(matmul(xg, t)); }, randn({4, 3}, 15));
  expect_gradients([&](const Tensor& t) { return probe(add_bias(xg, t)); }, randn({4}, 16));
}

TEST_CASE("softmax and cross entropy") {
  const Tensor logits({2, 3}, {1, 2, 3, 0, 0, 0});
  const auto p = softmax(logits);
  CHECK(p.values()[0] + p.values()[1] + p.values()[2] == doctest::Approx(1.0));
  CHECK(p.values()[3] == doctest::Approx(1.0 / 3.0));
  const Tensor shifted({2, 3}, {101, 102, 103, -7, -7, -7});
  CHECK(max_abs_diff(softmax(shifted).values(), p.values()) < 1e-15);
  const Tensor uniform({2, 4});
  const int labels[] = {0, 3};
  CHECK(softmax_cross_entropy(uniform, labels).item() == doctest::Approx(std::log(4.0)));
  const int bad[] = {0, 4};
  CHECK_THROWS_AS(softmax_cross_entropy(uniform, bad), std::invalid_argument);
  const int short_labels[] = {0};
  CHECK_THROWS_AS(softmax_cross_entropy(uniform, short_labels), std::invalid_argument);
  const int lab[] = {2, 0, 1};
  expect_gradients([&](const Tensor& t) { return softmax_cross_entropy(t, lab); }, randn({3, 4}, 17));
  expect_gradients([](const Tensor& t) { return probe(softmax(t)); }, randn({3, 4}, 18));
}

TEST_CASE("relu and pooling") {
  const Tensor x({4}, {-1, 0, 2, -3});
  const auto r = relu(x);
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) == std::vector<double>{0, 0, 2, 0});
  const Tensor y({1, 2, 2}, {1, 2, 3, 4});
  const auto m = mean_pool(y);
  CHECK(m.shape() == Shape{1, 2});
  CHECK(m.values()[0] == 2.0);
  CHECK(m.values()[1] == 3.0);
  expect_gradients([](const Tensor& t) { return probe(relu(t)); }, randn({3, 5}, 19));
  expect_gradients([](const Tensor& t) { return probe(mean_pool(t)); }, randn({2, 3, 4, 5}, 20));
}

TEST_CASE("batch norm") {
  const auto x = randn({4, 3, 2}, 21, false);
  const Tensor gamma = Tensor::filled({2}, 1.0), beta({2});
  BatchNormStats stats(2);
  const auto y = batch_norm(x, gamma, beta, stats, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double mu = 0.0, var = 0.0, x_mu = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
      mu += y.values()[i * 2 + c] / 12;
      x_mu += x.values()[i * 2 + c] / 12;
    }
    for (std::size_t i = 0; i < 12; ++i) var += std::pow(y.values()[i * 2 + c] - mu, 2) / 12;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(stats.running_mean.values()[c] == doctest::Approx(0.1 * x_mu));
  }
  BatchNormStats fixed(2);
  const auto e = batch_norm(x, gamma, beta, fixed, false);
  CHECK(max_abs_diff(e.values(), scale(x, 1.0 / std::sqrt(1.0 + 1e-5)).values()) < 1e-15);
  CHECK(fixed.running_mean.values()[0] == 0.0);
  CHECK_THROWS_AS(batch_norm(x, Tensor({3}), beta, stats, true), std::invalid_argument);

  const auto g = randn({2}, 22), b = randn({2}, 23);
  expect_gradients([&](const Tensor& t) {
    BatchNormStats s(2);
    return probe(batch_norm(t, g, b, s, true));
  }, randn({3, 4, 2}, 24));
  expect_gradients([&](const Tensor& t) {
    BatchNormStats s(2);
    return probe(batch_norm(x, t, b, s, true));
  }, randn({2}, 25));
}

TEST_CASE("temporal convolution matches direct loops") {
  for (auto [stride, dilation] : {std::pair{1, 1}, std::pair{1, 3}, std::pair{2, 1}, std::pair{2, 2}}) {
    const auto x = randn({2, 7, 3, 4}, 26), w = randn({3, 4, 5}, 27);
    const auto y = temporal_conv(x, w, {3, stride, dilation});
    CHECK(y.shape() == Shape{2, static_cast<std::size_t>((7 + stride - 1) / stride), 3, 5});
    CHECK(max_abs_diff(y.values(), conv_oracle(x, w, stride, dilation)) < 1e-12);
    expect_gradients([&](const Tensor& t) { return probe(temporal_conv(t, w, {3, stride, dilation})); }, x);
    expect_gradients([&](const Tensor& t) { return probe(temporal_conv(x, t, {3, stride, dilation})); }, w);
  }
  const auto x = randn({1, 4, 2, 3}, 28), w1 = randn({1, 3, 2}, 29);
  CHECK(max_abs_diff(temporal_conv(x, w1, {1, 2, 1}).values(), conv_oracle(x, w1, 2, 1)) < 1e-12);
  CHECK_THROWS_AS(temporal_conv(x, randn({2, 3, 2}, 30), {2, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(temporal_conv(x, randn({3, 2, 2}, 31), {3, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(temporal_conv(x, randn({3, 3, 2}, 32), {3, 0, 1}), std::invalid_argument);
}

TEST_CASE("graph convolution") {
  const auto x = randn({2, 3, 4, 3}, 33);
  const std::vector<Tensor> adj{randn({4, 4}, 34), randn({4, 4}, 35)};
  const std::vector<Tensor> w{randn({3, 2}, 36), randn({3, 2}, 37)};
  const auto y = graph_conv(x, adj, w);
  REQUIRE(y.shape() == Shape{2, 3, 4, 2});
  std::vector<double> ref(y.numel(), 0.0);
  for (std::size_t s = 0; s < 6; ++s)
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t o = 0; o < 2; ++o)
              ref[(s * 4 + i) * 2 + o] += adj[k].values()[i * 4 + j] * x.values()[(s * 4 + j) * 3 + c] *
                                          w[k].values()[c * 2 + o];
  CHECK(max_abs_diff(y.values(), ref) < 1e-12);
  expect_gradients([&](const Tensor& t) { return probe(graph_conv(t, adj, w)); }, x);
  expect_gradients([&](const Tensor& t) { return probe(graph_conv(x, {adj[0], t}, w)); }, adj[1]);
  expect_gradients([&](const Tensor& t) { return probe(graph_conv(x, adj, {t, w[1]})); }, w[0]);
  CHECK_THROWS_AS(graph_conv(x, adj, {w[0]}), std::invalid_argument);
  CHECK_THROWS_AS(graph_conv(x, {randn({3, 3}, 38)}, {w[0]}), std::invalid_argument);
}

TEST_CASE("graph convolution of a slice ignores the rest of the batch") {
  const std::vector<Tensor> adj{randn({25, 25}, 40, false), randn({25, 25}, 41, false)};
  const std::vector<Tensor> w{randn({7, 5}, 42, false), randn({7, 5}, 43, false)};
  const auto x = randn({3, 4, 25, 7}, 44, false);
  const auto y = graph_conv(x, adj, w);
  for (std::size_t s = 0; s < 12; ++s) {
    const Tensor one({25, 7}, std::vector<double>(x.values().begin() + s * 175, x.values().begin() + (s + 1) * 175));
    const auto ys = graph_conv(one, adj, w);
    CHECK(std::equal(ys.values().begin(), ys.values().end(), y.values().begin() + s * 125));
  }
}

TEST_CASE("scaled mask adjacency") {
  const Tensor base({2, 2}, {1, 2, 3, 4});
  const std::vector<double> s{2.0, 0.5};
  const Tensor mask({2, 2}, {1, 1, 1, 1}, true);
  const auto a = scaled_mask_adjacency(base, s, mask);
  CHECK(std::vector<double>(a.values().begin(), a.values().end()) == std::vector<double>{5, 3, 4, 4.25});
  expect_gradients([&](const Tensor& t) { return probe(scaled_mask_adjacency(base, s, t)); }, randn({2, 2}, 39));
  CHECK_THROWS_AS(scaled_mask_adjacency(base, std::vector<double>{1.0}, mask), std::invalid_argument);
}

TEST_CASE("gradient checker catches wrong gradients") {
  auto wrong = [](const Tensor& x) {
    std::vector<double> v(x.values().begin(), x.values().end());
    for (double& e : v) e = e * e;
    const Tensor sq = make_result(x.shape(), std::move(v), {x}, [x](std::span<const double> g) {
      auto acc = grad_accumulator(x);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * x.values()[i];  // should be 2x
    });
    return sum(sq);
  };
  CHECK_FALSE(finite_diff_check(wrong, randn({4}, 40)).passed);

  int calls = 0;
  auto unstable = [&](const Tensor& x) { return scale(sum(x), 1.0 + 1e-3 * ++calls); };
  CHECK_THROWS_AS(finite_diff_check(unstable, randn({2}, 41)), std::runtime_error);

  const auto report = finite_diff_check([](const Tensor& x) { return sum(relu(x)); },
                                        Tensor({3}, {0.0, 1.0, -1.0}, true));
  CHECK(report.passed);
  CHECK(report.excluded == 1);
  CHECK(report.checked == 2);
}

TEST_CASE("learning rate schedule") {
  OptimizerState s;
  CHECK(lr_schedule(s, 0) == doctest::Approx(0.05));
  CHECK(lr_schedule(s, 29) == doctest::Approx(0.05));
  CHECK(lr_schedule(s, 30) == doctest::Approx(0.005));
  CHECK(lr_schedule(s, 35) == doctest::Approx(0.005));
  CHECK(lr_schedule(s, 40) == doctest::Approx(0.0005));
  CHECK(s.learning_rate == doctest::Approx(0.0005));
  CHECK(linear_scaled_lr(0.05, 64) == doctest::Approx(0.1));
  CHECK(linear_scaled_lr(0.05, 16) == doctest::Approx(0.025));
}

TEST_CASE("sgd with momentum and weight decay") {
  std::vector<Parameter> params{{"w", Tensor({1}, {1.0}, true)}, {"b", Tensor({1}, {1.0}, true), true}};
  OptimizerState s;
  s.learning_rate = 0.1;
  CHECK_THROWS_AS(sgd_step(s, params), std::invalid_argument);
  for (int step = 0; step < 2; ++step) {
    zero_grads(params);
    backward(sum(params[0].tensor + params[1].tensor));
    sgd_step(s, params);
  }
  // v1 = 1 + wd*1, p1 = 1 - 0.1 v1; v2 = 0.9 v1 + 1 + wd*p1, p2 = p1 - 0.1 v2
  const double v1 = 1.0 + 5e-4, p1 = 1.0 - 0.1 * v1;
  const double v2 = 0.9 * v1 + 1.0 + 5e-4 * p1, p2 = p1 - 0.1 * v2;
  CHECK(params[0].tensor.values()[0] == doctest::Approx(p2).epsilon(1e-14));
  const double q1 = 1.0 - 0.1, q2 = q1 - 0.1 * (0.9 + 1.0);
  CHECK(params[1].tensor.values()[0] == doctest::Approx(q2).epsilon(1e-14));
}

TEST_CASE("checkpoint round trip") {
  std::vector<NamedTensor> entries{{"a.weight", randn({2, 3}, 42)}, {"b", Tensor::scalar(7.25)}, {"empty", Tensor(Shape{0})}};
  std::stringstream buf;
  save_checkpoint(buf, entries);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 8) == "MSG3DCKP");
  std::istringstream in(bytes);
  const auto back = load_checkpoint(in);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].name == entries[i].name);
    CHECK(back[i].tensor.shape() == entries[i].tensor.shape());
    CHECK(std::equal(back[i].tensor.values().begin(), back[i].tensor.values().end(),
                     entries[i].tensor.values().begin()));
  }

  std::vector<NamedTensor> target{{"b", Tensor::scalar(0.0)}, {"a.weight", Tensor({2, 3})}};
  restore_values(back, target);
  CHECK(target[0].tensor.item() == 7.25);
  std::vector<NamedTensor> missing{{"c", Tensor({1})}};
  CHECK_THROWS_AS(restore_values(back, missing), std::runtime_error);
  std::vector<NamedTensor> wrong_shape{{"a.weight", Tensor({3, 2})}};
  CHECK_THROWS_AS(restore_values(back, wrong_shape), std::runtime_error);

  std::istringstream truncated(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_checkpoint(truncated), std::runtime_error);
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream bad_magic(bad);
  CHECK_THROWS_AS(load_checkpoint(bad_magic), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(std::filesystem::path("/nonexistent/model.ckpt")), std::runtime_error);
}
