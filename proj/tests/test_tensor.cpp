#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "fathom/tensor.hpp"
#include "test_support.hpp"

using namespace fathom;
using fathom::testing::finite_difference_check;
using fathom::testing::op_gradient_cases;
using fathom::testing::random_tensor;
using fathom::testing::weighted_sum;

namespace {

std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t n, std::size_t p) {
  std::vector<double> c(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < n; ++k) c[i * p + j] += a[i * n + k] * b[k * p + j];
  return c;
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("shape invariants") {
  CHECK_THROWS_AS(Shape(std::vector<std::size_t>{}), DimensionError);
  CHECK_THROWS_AS(Shape({2, 0}), DimensionError);
  CHECK(Shape({4, 5, 6}).numel() == 120);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0, 2.0}), DimensionError);
}

TEST_CASE("matmul") {
  const Tensor a(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
  CHECK(to_vec(matmul(a, eye)) == std::vector<double>{1, 2, 3, 4});
  CHECK(to_vec(matmul(eye, Tensor(Shape{2, 1}, {5, 7}))) == std::vector<double>{5, 7});

  const auto c = matmul(a, Tensor(Shape{2, 1}, {5, 7}));
  CHECK(c.shape() == Shape{2, 1});
  CHECK(to_vec(c) == naive_matmul({1, 2, 3, 4}, {5, 7}, 2, 2, 1));
  CHECK(to_vec(c) == std::vector<double>{19, 43});

  std::mt19937_64 rng(3);
  const auto x = random_tensor(Shape{4, 7}, rng);
  const auto y = random_tensor(Shape{7, 3}, rng);
  const auto got = to_vec(matmul(x, y));
  const auto want = naive_matmul(to_vec(x), to_vec(y), 4, 7, 3);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));

  SUBCASE("error names both shapes") {
    try {
      matmul(Tensor::zeros(Shape{2, 3}), Tensor::zeros(Shape{2, 3}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("(2x3)") != std::string::npos);
      CHECK(msg.find("by (2x3)") != std::string::npos);
    }
  }
}

TEST_CASE("softmax values") {
  const auto uniform = softmax(Tensor(Shape{3}, {0, 0, 0}), 0);
  for (double v : uniform.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const auto saturated = softmax(Tensor(Shape{3}, {1000, 0, 0}), 0);
  CHECK(std::abs(saturated.values()[0] - 1.0) <= 1e-12);
  CHECK(std::abs(saturated.values()[1]) <= 1e-12);

  // Extended-precision oracle for exp / sum(exp).
  const long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L);
  const long double total = e1 + e2 + e3;
  const std::vector<long double> oracle{e1 / total, e2 / total, e3 / total};
  const auto y = softmax(Tensor(Shape{3}, {1, 2, 3}), 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(y.values()[i] - static_cast<double>(oracle[i])) < 1e-15);
  CHECK(y.values()[0] == doctest::Approx(0.09003057).epsilon(1e-7));
  CHECK(y.values()[1] == doctest::Approx(0.24472847).epsilon(1e-7));
  CHECK(y.values()[2] == doctest::Approx(0.66524096).epsilon(1e-7));

  CHECK_THROWS_AS(softmax(Tensor(Shape{2}, {std::numeric_limits<double>::quiet_NaN(), 0.0}), 0), NumericError);
  CHECK_THROWS_AS(softmax(Tensor(Shape{2}, {0.0, 1.0}), 1), DimensionError);
}

TEST_CASE("softmax slices sum to one and are shift invariant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor(Shape{3, 5, 4}, rng, -30.0, 30.0, false);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const auto y = softmax(x, axis);
      const Shape& s = y.shape();
      const std::size_t outer = s.outer(axis), n = s[axis], inner = s.inner(axis);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          double total = 0.0;
          for (std::size_t k = 0; k < n; ++k) total += y.values()[(o * n + k) * inner + i];
          CHECK(std::abs(total - 1.0) <= 1e-12);
        }
    }
    const auto shifted = softmax(add_scalar(x, 17.25), 2);
    const auto base = softmax(x, 2);
    for (std::size_t i = 0; i < base.numel(); ++i) CHECK(std::abs(shifted.values()[i] - base.values()[i]) <= 1e-9);
  }
}

TEST_CASE("elementwise and structural ops") {
  CHECK(fathom::tanh(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(to_vec(mul(Tensor(Shape{3}, {1, 2, 3}), Tensor::zeros(Shape{3}))) == std::vector<double>{0, 0, 0});
  CHECK_THROWS_AS(add(Tensor::zeros(Shape{3}), Tensor::zeros(Shape{1, 3})), DimensionError);
  CHECK_THROWS_AS(mul(Tensor::zeros(Shape{2}), Tensor::zeros(Shape{3})), DimensionError);

  const std::vector<Tensor> parts{Tensor::zeros(Shape{2, 3}), Tensor::full(Shape{2, 5}, 1.0)};
  const auto joined = concat(parts, 1);
  CHECK(joined.shape() == Shape{2, 8});
  CHECK(joined.at({1, 2}) == 0.0);
  CHECK(joined.at({1, 3}) == 1.0);
  const std::vector<Tensor> bad{Tensor::zeros(Shape{2, 3}), Tensor::zeros(Shape{3, 3})};
  CHECK_THROWS_AS(concat(bad, 1), DimensionError);

  // Index-arithmetic oracle: (i, j, k) -> i*30 + j*6 + k.
  std::vector<double> v(120);
  for (std::size_t i = 0; i < 120; ++i) v[i] = static_cast<double>(i);
  const Tensor cube(Shape{4, 5, 6}, v);
  const auto flat = flatten(cube);
  CHECK(flat.shape() == Shape{120});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 6; ++k) CHECK(flat.values()[i * 30 + j * 6 + k] == cube.at({i, j, k}));

  const auto tiled = repeat(Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, 6}), 2, 4);
  CHECK(tiled.shape() == Shape{2, 3, 4});
  CHECK(tiled.at({1, 2, 3}) == 6.0);
  CHECK(tiled.at({0, 1, 0}) == 2.0);

  const auto picked = select(cube, 1, 3);
  CHECK(picked.shape() == Shape{4, 6});
  CHECK(picked.at({2, 5}) == cube.at({2, 3, 5}));

  const std::vector<Tensor> rows{select(cube, 1, 0), select(cube, 1, 1)};
  const auto stacked = stack(rows, 1);
  CHECK(stacked.shape() == Shape{4, 2, 6});
  CHECK(stacked.at({3, 1, 4}) == cube.at({3, 1, 4}));
}

TEST_CASE("flatten and reshape round-trip bit-exactly") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_tensor(Shape{3, 4, 2}, rng, -1e6, 1e6, false);
    const auto back = reshape(flatten(x), x.shape());
    CHECK(back.shape() == x.shape());
    CHECK(std::equal(back.values().begin(), back.values().end(), x.values().begin()));
  }
}

TEST_CASE("backward basics") {
  auto x = Tensor(Shape{3}, {1, 2, 3}, true);
  backward(sum(x));
  CHECK(to_vec(Tensor(Shape{3}, {x.grad().begin(), x.grad().end()})) == std::vector<double>{1, 1, 1});

  x.zero_grad();
  backward(sum(mul(x, x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});

  // Accumulates until zero_grad.
  backward(sum(mul(x, x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{4, 8, 12});

  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
  CHECK_THROWS_AS(backward(sum(Tensor::zeros(Shape{2}))), ContractError);
}

TEST_CASE("reused tensors accumulate both contributions") {
  std::mt19937_64 rng(8);
  auto x = random_tensor(Shape{2, 3}, rng);
  const auto w = random_tensor(Shape{3, 2}, rng, -1, 1, false);

  // Graph using x twice.
  backward(add(sum(fathom::tanh(x)), sum(matmul(x, w))));
  const std::vector<double> both(x.grad().begin(), x.grad().end());

  x.zero_grad();
  backward(sum(fathom::tanh(x)));
  std::vector<double> separate(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(sum(matmul(x, w)));
  for (std::size_t i = 0; i < separate.size(); ++i) separate[i] += x.grad()[i];
  for (std::size_t i = 0; i < both.size(); ++i) CHECK(both[i] == doctest::Approx(separate[i]).epsilon(1e-14));
}

TEST_CASE("no-grad guard records nothing") {
  auto x = Tensor(Shape{2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(mul(x, x).requires_grad());
}

TEST_CASE("op results are immutable") {
  auto x = Tensor(Shape{2}, {1, 2}, true);
  auto y = scale(x, 2.0);
  CHECK_THROWS_AS(y.mutable_values(), ContractError);
  CHECK_NOTHROW(x.mutable_values());
}

TEST_CASE("gradients match finite differences for every op") {
  constexpr double kTolerance = 1e-3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& tc : op_gradient_cases(seed)) {
      CAPTURE(tc.name);
      CAPTURE(seed);
      const auto r = finite_difference_check(tc.leaves, tc.loss);
      CHECK(r.checked > 0);
      CHECK(r.max_relative_error <= kTolerance);
    }
  }
}
