#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "opencos/tensor.h"
#include "support.h"

using namespace opencos;
using testing::random_array;
using testing::weighted_sum;

namespace {

// Grad check of weighted_sum(op(x)) with x the variable.
double check_unary(const std::function<NodeId(Graph&, NodeId)>& op, const Array& point) {
  return grad_check([&](Graph& g, NodeId x) { return weighted_sum(g, op(g, x)); }, point, 1e-6);
}

// Rows of exp(a) normalized to sum 1.
Array distribution_rows(const Array& a) {
  Array out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double z = 0.0;
    for (double& v : out.row_span(r)) z += v = std::exp(v);
    for (double& v : out.row_span(r)) v /= z;
  }
  return out;
}

}  // namespace

TEST_CASE("array construction validates shape") {
  CHECK_THROWS_AS(Array({2, 0}, {}), ShapeError);
  CHECK_THROWS_AS(Array({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  const Array a = Array::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(a.rows() == 2);
  CHECK(a.cols() == 3);
  CHECK(a.at(1, 2) == 6.0);
  CHECK_THROWS_AS(a.item(), ShapeError);
  CHECK(Array::scalar(4.0).item() == 4.0);
}

TEST_CASE("matmul matches a triple loop") {
  std::mt19937_64 rng(1);
  const Array a = random_array(rng, {3, 4});
  const Array b = random_array(rng, {4, 5});
  Graph g;
  const Array& c = g.value(ops::matmul(g, g.constant(a), g.constant(b)));
  REQUIRE(c.shape() == Shape{3, 5});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
  }
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Graph g;
  const NodeId a = g.constant(Array::zeros({2, 3}));
  const NodeId b = g.constant(Array::zeros({2, 3}));
  try {
    ops::matmul(g, a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(g, a, g.constant(Array::zeros({3, 2}))), ShapeError);
}

TEST_CASE("add and mul broadcast a row or a scalar") {
  Graph g;
  const NodeId x = g.constant(Array::matrix(2, 2, {1, 2, 3, 4}));
  const Array& r = g.value(ops::add(g, x, g.constant(Array::row({10, 20}))));
  CHECK(r == Array::matrix(2, 2, {11, 22, 13, 24}));
  const Array& s = g.value(ops::mul(g, x, g.constant(Array::scalar(2.0))));
  CHECK(s == Array::matrix(2, 2, {2, 4, 6, 8}));
}

TEST_CASE("elementwise ops") {
  Graph g;
  const NodeId x = g.constant(Array::row({-1.0, 0.0, 2.0}));
  CHECK(g.value(ops::relu(g, x)) == Array::row({0.0, 0.0, 2.0}));
  CHECK(std::isnan(g.value(ops::relu(g, g.constant(Array::row({std::nan("")})))).item()));
  CHECK(g.value(ops::scale(g, x, -2.0)) == Array::row({2.0, -0.0, -4.0}));
  CHECK(g.value(ops::sum(g, x)).item() == 1.0);
  CHECK(g.value(ops::mean(g, x)).item() == doctest::Approx(1.0 / 3.0));
  CHECK(g.value(ops::exp(g, x))[2] == doctest::Approx(std::exp(2.0)));
  CHECK_THROWS_AS(ops::log(g, x), std::domain_error);
  CHECK(g.value(ops::sub(g, x, x)) == Array::row({0.0, 0.0, 0.0}));
}

TEST_CASE("softmax is stable for large logits") {
  Graph g;
  const NodeId x = g.constant(Array::matrix(2, 2, {1000.0, 1001.0, -1000.0, -1000.0}));
  const Array& p = g.value(ops::softmax_rows(g, x));
  const double e = std::exp(-1.0);
  CHECK(p.at(0, 0) == doctest::Approx(e / (1.0 + e)).epsilon(1e-14));
  CHECK(p.at(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
  const Array& lp = g.value(ops::log_softmax_rows(g, x));
  CHECK(lp.at(0, 1) == doctest::Approx(-std::log1p(e)).epsilon(1e-14));
  CHECK(std::isfinite(lp.at(1, 0)));
}

TEST_CASE("l2 normalization leaves a zero row at zero") {
  Graph g;
  const NodeId x = g.variable(Array::matrix(2, 2, {3.0, 4.0, 0.0, 0.0}));
  const NodeId y = ops::l2_normalize_rows(g, x);
  CHECK(g.value(y) == Array::matrix(2, 2, {0.6, 0.8, 0.0, 0.0}));
  const Gradients grads = g.backward(weighted_sum(g, y));
  CHECK(grads[x].at(1, 0) == 0.0);
  CHECK(grads[x].at(1, 1) == 0.0);
}

TEST_CASE("row plumbing: concat, slice, transpose") {
  Graph g;
  const NodeId a = g.constant(Array::matrix(1, 2, {1, 2}));
  const NodeId b = g.constant(Array::matrix(2, 2, {3, 4, 5, 6}));
  const std::vector<NodeId> parts{a, b};
  const NodeId c = ops::concat_rows(g, parts);
  CHECK(g.value(c) == Array::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  CHECK(g.value(ops::slice_rows(g, c, 1, 3)) == Array::matrix(2, 2, {3, 4, 5, 6}));
  CHECK(g.value(ops::transpose(g, b)) == Array::matrix(2, 2, {3, 5, 4, 6}));
  CHECK_THROWS_AS(ops::slice_rows(g, c, 2, 2), ShapeError);
  CHECK_THROWS_AS(ops::slice_rows(g, c, 1, 4), ShapeError);
}

TEST_CASE("standardize columns gives zero mean and unit biased variance") {
  std::mt19937_64 rng(3);
  Graph g;
  const Array x = random_array(rng, {7, 3}, -5.0, 5.0);
  const Array& y = g.value(ops::standardize_columns(g, g.constant(x), 0.0));
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < 7; ++r) m += y.at(r, c);
    m /= 7.0;
    for (std::size_t r = 0; r < 7; ++r) v += (y.at(r, c) - m) * (y.at(r, c) - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 7.0 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("backward needs a scalar root and zero-fills unreached nodes") {
  Graph g;
  const NodeId x = g.variable(Array::row({1.0, 2.0}));
  const NodeId unused = g.variable(Array::row({5.0}));
  CHECK_THROWS_AS(g.backward(x), ShapeError);
  const NodeId y = ops::sum(g, ops::mul(g, x, x));
  const Gradients grads = g.backward(y);
  CHECK(grads[x] == Array::row({2.0, 4.0}));
  CHECK(grads[unused] == Array::row({0.0}));
}

TEST_CASE("gradient shared by a node used twice accumulates") {
  Graph g;
  const NodeId x = g.variable(Array::scalar(3.0));
  const NodeId y = ops::add(g, ops::scale(g, x, 2.0), ops::mul(g, x, x));
  CHECK(g.backward(y)[x].item() == 8.0);
}

TEST_CASE("grad_check on every op kind") {
  std::mt19937_64 rng(11);
  const Array p = random_array(rng, {3, 4});
  const Array q = random_array(rng, {4, 2});
  const Array row = random_array(rng, {1, 4});
  // keep relu inputs away from the kink
  Array away = random_array(rng, {3, 4}, 0.2, 1.0);
  for (std::size_t i = 0; i < away.size(); i += 2) away[i] = -away[i];
  const Array positive = random_array(rng, {3, 4}, 0.5, 2.0);

  const Array q_rows = random_array(rng, {3, 4});
  const double tol = 1e-4;
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::matmul(g, x, g.constant(q)); }, p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::matmul(g, g.constant(q), ops::transpose(g, x)); },
                    random_array(rng, {5, 2})) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::add(g, x, g.constant(row)); }, p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::add(g, g.constant(p), x); }, row) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::mul(g, g.constant(p), x); }, row) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::mul(g, x, x); }, p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::scale(g, x, -1.7); }, p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::relu(g, x); }, away) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::exp(g, x); }, p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::log(g, x); }, positive) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::softmax_rows(g, x); }, p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::log_softmax_rows(g, x); }, p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::l2_normalize_rows(g, x); }, p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::transpose(g, x); }, p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::slice_rows(g, x, 1, 3); }, p) < tol);
  CHECK(check_unary(
            [&](Graph& g, NodeId x) {
              const std::vector<NodeId> parts{x, g.constant(p), x};
              return ops::concat_rows(g, parts);
            },
            p) < tol);
  CHECK(check_unary([&](Graph& g, NodeId x) { return ops::standardize_columns(g, x, 1e-5); }, p) < tol);
  CHECK(grad_check([](Graph& g, NodeId x) { return ops::mean(g, ops::mul(g, x, x)); }, p, 1e-6) < tol);
  CHECK(grad_check([](Graph& g, NodeId x) { return ops::sum(g, ops::exp(g, x)); }, p, 1e-6) < tol);
  CHECK(grad_check([&](Graph& g, NodeId x) { return ops::soft_cross_entropy(g, x, distribution_rows(q_rows)); }, p,
                   1e-6) < tol);
}

TEST_CASE("grad_check reports a wrong gradient") {
  // d/dx relu(x) at x = 0 is taken as 0, while the central difference sees 1/2
  const double err = grad_check([](Graph& g, NodeId x) { return ops::sum(g, ops::relu(g, x)); },
                                Array::row({0.0}), 1e-6);
  CHECK(err > 0.1);
  CHECK_THROWS_AS(grad_check([](Graph& g, NodeId x) { return ops::sum(g, x); }, Array::row({1.0}), 0.0),
                  std::invalid_argument);
}
