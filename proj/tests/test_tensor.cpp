#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "restr/error.hpp"
#include "restr/grad_check.hpp"
#include "restr/op_checks.hpp"
#include "restr/ops.hpp"
#include "test_util.hpp"

using namespace restr;
using restr::testing::randn;

TEST_CASE("tensor storage invariants") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(shape_numel(t.shape()) == t.numel());
  CHECK_FALSE(t.has_grad());
  CHECK(t.grad().size() == t.numel());
  CHECK_THROWS_AS(Tensor({2, 0}), ConfigError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), ConfigError);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
}

TEST_CASE("matmul") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {1, 1});
  Tensor c = ops::matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.at(0, 0) == 3);
  CHECK(c.at(1, 0) == 7);

  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m = randn({2, 3}, 1);
  CHECK(restr::testing::bit_equal(ops::matmul(eye, m), m));
  CHECK_THROWS_AS(ops::matmul(a, randn({3, 2}, 2)), ConfigError);

  Tensor x = randn({5, 7}, 3), y = randn({7, 3}, 4);
  GradCheckOptions opts;
  opts.tol = 1e-6;
  CHECK(grad_check([&] { return ops::matmul(x, y); }, {x, y}, opts).passed);
}

TEST_CASE("mac counter counts m*k*n per matmul") {
  reset_mac_count();
  ops::matmul(randn({5, 7}, 1), randn({7, 3}, 2));
  ops::matmul(randn({2, 4}, 1), randn({4, 6}, 2));
  CHECK(mac_count() == 5 * 7 * 3 + 2 * 4 * 6);
}

TEST_CASE("softmax") {
  Tensor u = ops::softmax(Tensor({1, 3}, {2, 2, 2}), 1);
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Tensor big = ops::softmax(Tensor({1, 2}, {1000, 0}), 1);
  CHECK(big.at(0, 0) == doctest::Approx(1.0));
  CHECK(big.at(0, 1) < 1e-300);
  CHECK(restr::testing::all_finite(big));

  Tensor r = ops::softmax(randn({4, 6}, 7, 3.0), 1);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += r.at(i, j);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  Tensor c = ops::softmax(randn({4, 6}, 8, 3.0), 0);
  for (std::size_t j = 0; j < 6; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += c.at(i, j);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("layer_norm") {
  Tensor gain = Tensor::full({5}, 1.0), bias = Tensor::zeros({5});
  Tensor flat = ops::layer_norm(Tensor::full({1, 5}, 3.7), gain, bias, 1e-6);
  for (double v : flat.values()) CHECK(v == 0.0);

  // A tiny eps so the unit-variance check measures the normalization itself.
  Tensor x = randn({6, 5}, 11, 4.0);
  Tensor y = ops::layer_norm(x, gain, bias, 1e-12);
  for (std::size_t i = 0; i < 6; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 5; ++j) mean += y.at(i, j) / 5.0;
    for (std::size_t j = 0; j < 5; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean) / 5.0;
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }

  Tensor g = randn({5}, 12), b = randn({5}, 13);
  GradCheckOptions opts;
  opts.tol = 1e-5;
  CHECK(grad_check([&] { return ops::layer_norm(x, g, b, 1e-6); }, {x, g, b}, opts).passed);
}

TEST_CASE("elementwise ops") {
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  Tensor h = ops::hadamard(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {2, 0}));
  CHECK(h.values()[0] == 2);
  CHECK(h.values()[1] == 4);
  CHECK(h.values()[2] == 0);
  CHECK(h.values()[3] == 0);

  Tensor s = ops::sigmoid(Tensor({3}, {-800, 0, 800}));
  CHECK(restr::testing::all_finite(s));
  CHECK(s.at(0) == 0.0);
  CHECK(s.at(2) == 1.0);

  CHECK(ops::gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))));
  CHECK(ops::relu(Tensor({2}, {-1, 2})).at(0) == 0.0);

  Tensor x = randn({3, 4}, 21, 2.0);
  GradCheckOptions opts;
  opts.tol = 1e-5;
  CHECK(grad_check([&] { return ops::gelu(x); }, {x}, opts).passed);
}

TEST_CASE("concat, slice, reshape, transpose") {
  Tensor a = randn({2, 3}, 1), b = randn({4, 3}, 2);
  Tensor c = ops::concat({a, b}, 0);
  CHECK(c.shape() == Shape{6, 3});
  CHECK(restr::testing::bit_equal(ops::slice(c, 0, 0, 2), a));
  CHECK(restr::testing::bit_equal(ops::slice(c, 0, 2, 6), b));

  Tensor d = ops::concat({a, randn({2, 5}, 3)}, 1);
  CHECK(d.shape() == Shape{2, 8});
  CHECK(restr::testing::bit_equal(ops::slice(d, 1, 0, 3), a));

  Tensor x = randn({5, 3}, 4);
  Tensor part = ops::slice(x.set_requires_grad(true), 0, 1, 3);
  backward(ops::sum(part));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(x.grad()[i * 3 + j] == (i >= 1 && i < 3 ? 1.0 : 0.0));
  }

  Tensor t = ops::transpose(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.at(2, 1) == 6);
  CHECK(t.at(0, 1) == 4);
  CHECK_THROWS_AS(ops::reshape(a, {4, 2}), ConfigError);
}

TEST_CASE("upsample2x") {
  Tensor one = ops::upsample2x(Tensor({1, 1, 1}, {5}));
  CHECK(one.shape() == Shape{2, 2, 1});
  for (double v : one.values()) CHECK(v == 5);

  Tensor checker = ops::upsample2x(Tensor({2, 2, 1}, {1, 0, 0, 1}));
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) CHECK(checker.at(y, x, 0) == ((y / 2 + x / 2) % 2 == 0 ? 1.0 : 0.0));
  }

  Tensor g = randn({3, 2, 2}, 5).set_requires_grad(true);
  backward(ops::sum(ops::upsample2x(g)));
  for (double v : g.grad()) CHECK(v == 4.0);
}

TEST_CASE("bilinear upsample2x") {
  Tensor c = ops::upsample2x_bilinear(Tensor::full({2, 3, 2}, 1.5));
  CHECK(c.shape() == Shape{4, 6, 2});
  for (double v : c.values()) CHECK(v == doctest::Approx(1.5).epsilon(1e-15));
  // Half-pixel centers: output 1 of [0, 4] sits at 0.25 -> 1.0, output 2 at 0.75 -> 3.0.
  Tensor r = ops::upsample2x_bilinear(Tensor({1, 2, 1}, {0, 4}));
  CHECK(r.at(0, 0, 0) == 0.0);
  CHECK(r.at(0, 1, 0) == doctest::Approx(1.0));
  CHECK(r.at(0, 2, 0) == doctest::Approx(3.0));
  CHECK(r.at(0, 3, 0) == 4.0);

  Tensor g = randn({3, 2, 2}, 5).set_requires_grad(true);
  backward(ops::sum(ops::upsample2x_bilinear(g)));
  for (double v : g.grad()) CHECK(v == doctest::Approx(4.0));
}

TEST_CASE("bce") {
  CHECK(ops::bce(Tensor::scalar(0.5), Tensor::scalar(1.0)).item() == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  Tensor target({4}, {0, 1, 1, 0});
  CHECK(ops::bce(target, target).item() < 1e-6);
  CHECK(ops::bce(target, target).item() >= 0.0);
  CHECK(std::isfinite(ops::bce(Tensor({1}, {0.0}), Tensor({1}, {1.0})).item()));

  Tensor p({2, 2}, {0.2, 0.7, 0.9, 0.4});
  Tensor y({2, 2}, {0, 1, 1, 0});
  GradCheckOptions opts;
  opts.tol = 1e-5;
  CHECK(grad_check([&] { return ops::bce(p, y); }, {p}, opts).passed);

  // Saturated wrong prediction still pushes toward the target.
  Tensor sat = Tensor({1}, {0.0}).set_requires_grad(true);
  backward(ops::bce(sat, Tensor({1}, {1.0})));
  CHECK(sat.grad()[0] < 0.0);
}

TEST_CASE("backward basics") {
  Tensor x = randn({3, 2}, 1).set_requires_grad(true);
  backward(ops::sum(x));
  for (double v : x.grad()) CHECK(v == 1.0);

  Tensor s = Tensor::scalar(3.0).set_requires_grad(true);
  backward(ops::hadamard(s, s));
  CHECK(s.grad()[0] == 6.0);

  Tensor w = randn({2, 2}, 2).set_requires_grad(true);
  CHECK_THROWS_AS(backward(ops::matmul(w, w)), ConfigError);
}

TEST_CASE("backward twice on the same tape throws") {
  Tensor x = randn({2}, 1).set_requires_grad(true);
  Tensor loss = ops::sum(ops::hadamard(x, x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), RuntimeError);
}

TEST_CASE("three-layer composite matches finite differences") {
  Tensor x = randn({4, 5}, 1);
  Tensor w1 = randn({5, 6}, 2), b1 = randn({6}, 3);
  Tensor w2 = randn({6, 6}, 4), b2 = randn({6}, 5);
  Tensor w3 = randn({6, 1}, 6), b3 = randn({1}, 7);
  auto f = [&] {
    Tensor h = ops::gelu(ops::linear(x, w1, b1));
    h = ops::sigmoid(ops::linear(h, w2, b2));
    return ops::mean(ops::linear(h, w3, b3));
  };
  const auto report = grad_check(f, {x, w1, b1, w2, b2, w3, b3});
  CHECK(report.passed);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("tape order and topology") {
  clear_graph();
  Tensor x = randn({2, 3}, 1).set_requires_grad(true);
  Tensor w = randn({3, 3}, 2).set_requires_grad(true);
  Tensor h = ops::gelu(ops::matmul(x, w));
  Tensor loss = ops::sum(ops::add(h, ops::softmax(h, 1)));
  const auto nodes = graph_snapshot();
  REQUIRE(nodes.size() == 5);
  CHECK(nodes.front().tag == OpTag::kMatMul);
  CHECK(nodes.back().tag == OpTag::kSum);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (auto in : nodes[i].inputs) CHECK(in < static_cast<std::int64_t>(i));
  }
  backward(loss);
  CHECK(graph_size() == 0);
}

TEST_CASE("no-grad guard records nothing") {
  clear_graph();
  Tensor x = randn({2, 2}, 1).set_requires_grad(true);
  {
    NoGradGuard guard;
    ops::sum(ops::gelu(x));
    CHECK_FALSE(grad_enabled());
  }
  CHECK(grad_enabled());
  CHECK(graph_size() == 0);
}

TEST_CASE("grad_check") {
  Tensor x = randn({3, 4}, 1), w = randn({4, 2}, 2);
  const auto lin = grad_check([&] { return ops::matmul(x, w); }, {x, w});
  CHECK(lin.max_rel_error < 1e-8);

  GradCheckOptions opts;
  opts.tol = 1e-5;
  const auto sm = grad_check([&] { return ops::softmax(ops::matmul(x, w), 1); }, {x, w}, opts);
  CHECK(sm.passed);

  set_adjoint_fault(OpTag::kSoftmax, 1.5);
  const auto bad = grad_check([&] { return ops::softmax(ops::matmul(x, w), 1); }, {x, w}, opts);
  clear_adjoint_faults();
  CHECK_FALSE(bad.passed);
  CHECK(bad.max_rel_error > 1e-2);
}

TEST_CASE("every op passes finite-difference checks over five seeds") {
  const auto results = run_op_checks(5);
  std::set<std::string> ops_seen;
  for (const auto& r : results) {
    ops_seen.insert(r.op);
    INFO(r.op << " seed " << r.seed << " shape " << r.shape << " err " << r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.elements > 0);
  }
  CHECK(ops_seen.size() >= 20);
}

TEST_CASE("identical inputs give bit-identical outputs") {
  auto run = [] {
    Tensor x = randn({4, 6}, 9);
    return ops::softmax(ops::gelu(ops::matmul(x, ops::transpose(x))), 1);
  };
  CHECK(restr::testing::bit_equal(run(), run()));
}
