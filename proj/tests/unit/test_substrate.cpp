#include <cmath>

#include "doctest.h"
#include "fsdm/errors.hpp"
#include "fsdm/ops.hpp"
#include "fsdm/params.hpp"
#include "fsdm/rng.hpp"
#include "test_util.hpp"

using namespace fsdm;
using namespace fsdm::testing;

TEST_CASE("philox4x32-10 known-answer vectors") {
  using A4 = std::array<uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("rng streams are reproducible and keyed by tag and step") {
  RngStream a(7, "noise", 3), b(7, "noise", 3), c(7, "noise", 4), d(7, "other", 3), e(8, "noise", 3);
  const auto va = a.normals(64), vb = b.normals(64);
  CHECK(va == vb);
  CHECK(va != c.normals(64));
  CHECK(va != d.normals(64));
  CHECK(va != e.normals(64));
}

TEST_CASE("rng uniform and normal moments") {
  RngStream r(1, "moments");
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
  }
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(std::abs(su / n - 0.5) < 3 * std::sqrt(1.0 / 12 / n) + 1e-12);
  CHECK(std::abs(sn / n) < 3 * std::sqrt(1.0 / n));
  CHECK(std::abs(sn2 / n - 1.0) < 3 * std::sqrt(2.0 / n));
}

TEST_CASE("rng uniform_int covers its range without bias") {
  RngStream r(3, "ints");
  std::vector<int> counts(5, 0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const auto v = r.uniform_int(2, 6);
    REQUIRE(v >= 2);
    REQUIRE(v <= 6);
    ++counts[static_cast<size_t>(v - 2)];
  }
  for (int c : counts) CHECK(std::abs(c - n / 5.0) < 4 * std::sqrt(n * 0.2 * 0.8));
}

TEST_CASE("grad_check: quadratic and constant") {
  ParameterStore store;
  Tensor w = store.add("w", Tensor({1}, {3.0}));
  auto quad = grad_check([&] { return ops::sum(ops::mul(w, w)); }, store, 1e-5);
  CHECK(quad.max_rel_error < 1e-8);
  CHECK(quad.coordinates == 1);
  w.backward();  // no-op on a leaf; keep the store in a clean state
  store.zero_grad();
  ops::sum(ops::mul(w, w)).backward();
  CHECK(w.grad()[0] == doctest::Approx(6.0));

  auto constant = grad_check([&] { return Tensor::scalar(4.0); }, store, 1e-5);
  CHECK(constant.max_rel_error == 0.0);
}

TEST_CASE("grad_check rejects out-of-range epsilon and non-finite losses") {
  ParameterStore store;
  Tensor w = store.add("w", Tensor({1}, {0.0}));
  CHECK_THROWS(grad_check([&] { return ops::sum(w); }, store, 1e-2));
  CHECK_THROWS(grad_check([&] { return ops::sum(w); }, store, 1e-9));
  auto bad = [&] {
    const double v = w.data()[0];
    return v > 0.0 ? Tensor::scalar(std::nan("")) : ops::sum(w);
  };
  CHECK_THROWS(grad_check(bad, store, 1e-5));
}

namespace {

void expect_grad(const std::function<Tensor()>& f, ParameterStore& store, double tol = 1e-6) {
  const auto report = grad_check(f, store, 1e-5, 24, 5);
  INFO("worst coordinate: " << report.worst_coordinate << " rel " << report.max_rel_error);
  CHECK(report.max_rel_error < tol);
}

}  // namespace

TEST_CASE("op gradients: elementwise and reductions") {
  ParameterStore s;
  Tensor a = add_param(s, "a", {2, 3, 4}, 1), b = add_param(s, "b", {2, 3, 4}, 2), r = add_param(s, "r", {4}, 3);
  expect_grad([&] { return probe(ops::add(a, b)); }, s);
  expect_grad([&] { return probe(ops::sub(a, b)); }, s);
  expect_grad([&] { return probe(ops::mul(a, b)); }, s);
  expect_grad([&] { return probe(ops::scale(a, -1.7)); }, s);
  expect_grad([&] { return probe(ops::add_scalar(a, 0.3)); }, s);
  expect_grad([&] { return probe(ops::scale_rows(a, {0.5, -2.0})); }, s);
  expect_grad([&] { return probe(ops::square(a)); }, s);
  expect_grad([&] { return probe(ops::silu(a)); }, s);
  expect_grad([&] { return probe(ops::gelu(a)); }, s);
  expect_grad([&] { return probe(ops::add_broadcast(a, r)); }, s);
  expect_grad([&] { return ops::mean(ops::square(a)); }, s);
  expect_grad([&] { return probe(ops::sum_rows(a)); }, s);
  expect_grad([&] { return probe(ops::mean_axis(a, 1)); }, s);
  expect_grad([&] { return probe(ops::mean_axis(a, 1, true)); }, s);
  expect_grad([&] { return ops::mse(a, b); }, s);
}

TEST_CASE("op gradients: shape manipulation") {
  ParameterStore s;
  Tensor a = add_param(s, "a", {2, 3, 4}, 1), b = add_param(s, "b", {2, 2, 4}, 2);
  expect_grad([&] { return probe(ops::reshape(a, {6, -1})); }, s);
  expect_grad([&] { return probe(ops::permute(a, {2, 0, 1})); }, s);
  expect_grad([&] { return probe(ops::concat({a, b}, 1)); }, s);
  expect_grad([&] { return probe(ops::slice0(a, 1, 2)); }, s);
  expect_grad([&] { return probe(ops::index0(a, {1, 0, 1, 1})); }, s);
  expect_grad([&] { return probe(ops::stack0({a, a})); }, s);
}

TEST_CASE("op gradients: matrix products") {
  ParameterStore s;
  Tensor a = add_param(s, "a", {3, 4}, 1), b = add_param(s, "b", {4, 5}, 2);
  Tensor at = add_param(s, "at", {4, 3}, 3), bt = add_param(s, "bt", {5, 4}, 4);
  expect_grad([&] { return probe(ops::matmul(a, b)); }, s);
  expect_grad([&] { return probe(ops::matmul(at, b, true, false)); }, s);
  expect_grad([&] { return probe(ops::matmul(a, bt, false, true)); }, s);
  expect_grad([&] { return probe(ops::matmul(at, bt, true, true)); }, s);
  Tensor x = add_param(s, "x", {2, 3, 4}, 5), y = add_param(s, "y", {2, 4, 2}, 6);
  expect_grad([&] { return probe(ops::matmul(x, y)); }, s);
  Tensor w = add_param(s, "w", {5, 4}, 7), bias = add_param(s, "bias", {5}, 8);
  expect_grad([&] { return probe(ops::linear(x, w, bias)); }, s);
  expect_grad([&] { return probe(ops::linear(x, w, Tensor())); }, s);
}

TEST_CASE("op gradients: convolution and resampling") {
  ParameterStore s;
  Tensor x = add_param(s, "x", {2, 3, 6, 6}, 1);
  Tensor w3 = add_param(s, "w3", {4, 3, 3, 3}, 2, 0.3), b3 = add_param(s, "b3", {4}, 3);
  Tensor w1 = add_param(s, "w1", {2, 3, 1, 1}, 4), b1 = add_param(s, "b1", {2}, 5);
  expect_grad([&] { return probe(ops::conv2d(x, w3, b3, 1, 1)); }, s);
  expect_grad([&] { return probe(ops::conv2d(x, w3, b3, 2, 1)); }, s);
  expect_grad([&] { return probe(ops::conv2d(x, w3, Tensor(), 1, 0)); }, s);
  expect_grad([&] { return probe(ops::conv2d(x, w1, b1, 1, 0)); }, s);
  expect_grad([&] { return probe(ops::upsample_nearest2x(x)); }, s);
}

TEST_CASE("op gradients: normalization, softmax and modulation") {
  ParameterStore s;
  Tensor x = add_param(s, "x", {2, 4, 3, 3}, 1);
  Tensor g = add_param(s, "g", {4}, 2), b = add_param(s, "b", {4}, 3);
  expect_grad([&] { return probe(ops::group_norm(x, g, b, 2)); }, s);
  expect_grad([&] { return probe(ops::group_norm(x, g, b, 1)); }, s);
  Tensor seq = add_param(s, "seq", {2, 3, 5}, 4), lg = add_param(s, "lg", {5}, 5), lb = add_param(s, "lb", {5}, 6);
  expect_grad([&] { return probe(ops::layer_norm(seq, lg, lb)); }, s);
  expect_grad([&] { return probe(ops::softmax(seq)); }, s);
  Tensor sc = add_param(s, "sc", {2, 4}, 7), sh = add_param(s, "sh", {2, 4}, 8);
  expect_grad([&] { return probe(ops::channel_affine(x, sc, sh)); }, s);
  expect_grad([&] { return probe(ops::channel_affine(x, Tensor(), sh)); }, s);
}

TEST_CASE("forward values of basic ops") {
  const Tensor a({2, 2}, {1, 2, 3, 4}), b({2, 2}, {5, 6, 7, 8});
  CHECK(ops::matmul(a, b).data()[0] == 19.0);
  CHECK(ops::matmul(a, b).data()[3] == 50.0);
  const Tensor sm = ops::softmax(Tensor({1, 3}, {1, 1, 1}));
  for (double v : sm.data()) CHECK(v == doctest::Approx(1.0 / 3));
  const Tensor p = ops::permute(Tensor({2, 3}, {0, 1, 2, 3, 4, 5}), {1, 0});
  CHECK(p.shape() == Shape{3, 2});
  CHECK(p.at({2, 1}) == 5.0);
  // 1x1 input, 3x3 kernel of ones with padding 1 sums the single pixel.
  const Tensor conv = ops::conv2d(Tensor({1, 1, 1, 1}, {2.0}), Tensor::full({1, 1, 3, 3}, 1.0), Tensor(), 1, 1);
  CHECK(conv.item() == 2.0);
  const Tensor up = ops::upsample_nearest2x(Tensor({1, 1, 1, 2}, {1, 2}));
  CHECK(up.shape() == Shape{1, 1, 2, 4});
  CHECK(up.at({0, 0, 1, 3}) == 2.0);
}

TEST_CASE("canonical mean is bitwise invariant to permutation along its axis") {
  const Tensor x = random_tensor({3, 7, 5}, 11);
  const Tensor m = ops::mean_axis(x, 1, true);
  std::vector<int64_t> rows;
  const std::vector<int> perm{4, 0, 6, 2, 5, 1, 3};
  Tensor flat = ops::permute(x, {1, 0, 2});
  std::vector<int64_t> idx(perm.begin(), perm.end());
  const Tensor shuffled = ops::permute(ops::index0(flat, idx), {1, 0, 2});
  CHECK(bitwise_equal(m, ops::mean_axis(shuffled, 1, true)));
}

TEST_CASE("no-grad mode records no history") {
  Tensor w({2}, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    Tensor y = ops::mul(w, w);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y = ops::mul(w, w);
  CHECK(y.requires_grad());
}

namespace {

// Single-coordinate Adam with bias correction.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8, m = 0, v = 0;
  int t = 0;
  double update(double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    return -lr * mh / (std::sqrt(vh) + eps);
  }
};

void set_grad(Tensor& w, double g) {
  for (double& x : w.mutable_grad()) x = g;
}

}  // namespace

TEST_CASE("adam matches a scalar reference") {
  ParameterStore store;
  Tensor w = store.add("w", Tensor({1}, {1.0}));
  ScalarAdam ref{0.01};
  double expected = 1.0;
  const std::vector<double> grads{0.5, 0.5, -0.2, 3.0, 0.0};
  for (double g : grads) {
    set_grad(w, g);
    adam_step(store, 0.01);
    expected += ref.update(g);
    CHECK(w.data()[0] == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("adam step examples") {
  ParameterStore store;
  Tensor w = store.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
  set_grad(w, 0.0);
  adam_step(store, 0.1);
  CHECK(w.data()[0] == 1.0);
  CHECK(w.data()[1] == -2.0);

  ParameterStore s2;
  Tensor u = s2.add("u", Tensor({1}, {0.0}));
  const double g = 0.25, lr = 1e-3;
  set_grad(u, g);
  adam_step(s2, lr);
  const double first = u.data()[0];
  CHECK(first == doctest::Approx(-lr * g / (g + 1e-8)).epsilon(1e-12));
  set_grad(u, g);
  adam_step(s2, lr);
  const double second = u.data()[0] - first;
  CHECK(std::abs(second) <= std::abs(first) * 1.01);
}

TEST_CASE("adam skips non-finite gradients and counts them") {
  ParameterStore store;
  Tensor a = store.add("a", Tensor({1}, {1.0}));
  Tensor b = store.add("b", Tensor({1}, {1.0}));
  set_grad(a, std::nan(""));
  set_grad(b, 1.0);
  adam_step(store, 0.1);
  CHECK(a.data()[0] == 1.0);
  CHECK(b.data()[0] < 1.0);
  CHECK(store.skipped_updates() == 1);
}

TEST_CASE("global-norm clipping") {
  ParameterStore store;
  Tensor a = store.add("a", Tensor({2}, {0.0, 0.0}));
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 4.0;
  CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(store.grad_norm() == doctest::Approx(1.0));
}

TEST_CASE("parameter store rejects duplicate names") {
  ParameterStore store;
  store.add("x", Tensor::zeros({2}));
  CHECK_THROWS(store.add("x", Tensor::zeros({2})));
  CHECK(store.scalar_count() == 2);
}
