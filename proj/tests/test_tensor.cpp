#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "surfreg/optim.hpp"
#include "surfreg/tensor.hpp"

using namespace surfreg;
using T = ad::Tensor<double>;
using surfreg::testing::grad_check;
using surfreg::testing::random_tensor;

TEST_CASE("matmul of a fixed 2x3 by 3x2") {
  const T a = T::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const T b = T::from({3, 2}, {7, 8, 9, 10, 11, 12});
  const T c = ad::matmul(a, b);
  REQUIRE(c.shape() == ad::Shape{2, 2});
  // [1*7+2*9+3*11, 1*8+2*10+3*12; 4*7+5*9+6*11, 4*8+5*10+6*12]
  CHECK(c[0] == 58);
  CHECK(c[1] == 64);
  CHECK(c[2] == 139);
  CHECK(c[3] == 154);
  CHECK_THROWS_WITH_AS(ad::matmul(a, a), "matmul: incompatible shapes [2,3] and [2,3]",
                       std::invalid_argument);
}

TEST_CASE("softmax of an all-equal row is uniform") {
  const T x = T::full({1, 12}, 0.37);
  const T s = ad::softmax(x, -1);
  for (std::size_t i = 0; i < 12; ++i) CHECK(s[i] == doctest::Approx(1.0 / 12.0).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one and l2_normalize gives unit rows") {
  std::mt19937_64 rng(1);
  const T x = random_tensor({5, 12}, rng, 10.0, false);
  const T s = ad::softmax(x, 1);
  const T n = ad::l2_normalize(x, 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0, sq = 0;
    for (std::size_t c = 0; c < 12; ++c) {
      sum += s[r * 12 + c];
      sq += n[r * 12 + c] * n[r * 12 + c];
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-6);
  }
}

TEST_CASE("max over an axis routes the gradient to the argmax") {
  T x = T::from({2, 3}, {0, 5, 0, 0, 0, 2}, true);
  auto m = ad::max_axis(x, 1);
  CHECK(m.values[0] == 5);
  CHECK(m.values[1] == 2);
  ad::sum_all(m.values).backward();
  const std::vector<double> expect = {0, 1, 0, 0, 0, 1};
  for (std::size_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == expect[i]);
}

TEST_CASE("max over an axis breaks ties toward the lowest index") {
  T x = T::from({4}, {1, 3, 3, 3}, true);
  auto m = ad::max_axis(x, 0);
  CHECK(m.argmax[0] == 1);
  m.values.backward();
  CHECK(x.grad()[0] == 0);
  CHECK(x.grad()[1] == 1);
  CHECK(x.grad()[2] == 0);
  CHECK(x.grad()[3] == 0);
}

TEST_CASE("d/dx sum(x^2) at (1,2,3)") {
  T x = T::from({3}, {1, 2, 3}, true);
  ad::sum_all(ad::mul(x, x)).backward();
  CHECK(x.grad()[0] == 2);
  CHECK(x.grad()[1] == 4);
  CHECK(x.grad()[2] == 6);
}

TEST_CASE("backward through an untracked tensor is a no-op") {
  const T x = T::from({3}, {1, 2, 3});
  const T y = ad::sum_all(ad::mul(x, x));
  CHECK_NOTHROW(y.backward());
  CHECK_FALSE(x.has_grad());
  T w = T::from({3}, {1, 1, 1}, true);
  const T d = w.detach();
  ad::sum_all(d).backward();
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("shape mismatch messages name both shapes") {
  const T a = T::zeros({2, 3});
  const T b = T::zeros({2});
  CHECK_THROWS_WITH_AS(ad::add(a, b), "add: incompatible shapes [2,3] and [2]",
                       std::invalid_argument);
  CHECK_THROWS_AS(ad::mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ad::reshape(a, {4}), std::invalid_argument);
}

TEST_CASE("non-finite forward values are rejected in debug mode") {
  const bool saved = ad::debug_checks();
  ad::debug_checks() = true;
  const T x = T::from({1}, {1e308});
  CHECK_THROWS_AS(ad::scale(x, 10.0), std::runtime_error);
  ad::debug_checks() = saved;
}

TEST_CASE("softmax-then-dot gradient matches finite differences") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    T x = random_tensor({12}, rng);
    const T v = random_tensor({12}, rng, 1.0, false);
    auto f = [&] { return ad::sum_all(ad::mul(ad::softmax(ad::reshape(x, {1, 12}), 1), ad::reshape(v, {1, 12}))); };
    const auto rep = grad_check(f, {x}, trial);
    INFO(rep.where);
    CHECK(rep.ok);
  }
}

TEST_CASE("every op passes the finite-difference oracle") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    T a = random_tensor({3, 4}, rng);
    T b = random_tensor({4, 5}, rng);
    T bias = random_tensor({5}, rng);
    T c = random_tensor({3, 5}, rng);
    auto f = [&] {
      T h = ad::add(ad::matmul(a, b), bias);           // leading-axis expansion
      h = ad::tanh(h);
      h = ad::mul(h, c);
      h = ad::sub(h, bias);
      T p = ad::permute(ad::reshape(h, {3, 5, 1}), {1, 0, 2});
      T cat = ad::concat<double>({p, ad::scale(p, 0.5)}, 2);  // [5,3,2]
      T g = ad::gather(cat, 0, {4, 0, 0, 2});
      T s = ad::slice(g, 1, 1, 2);
      T sm = ad::softmax(s, 1);
      T mx = ad::max_axis(ad::reshape(g, {4, 6}), 1).values;
      T nrm = ad::l2_normalize(ad::reshape(g, {4, 6}), 1);
      return ad::add(ad::add(ad::sum_all(ad::mul(sm, s)), ad::mean_all(mx)),
                     ad::sum_all(ad::mul(nrm, ad::relu(ad::reshape(g, {4, 6})))));
    };
    const auto rep = grad_check(f, {a, b, bias, c}, trial);
    INFO(rep.where);
    CHECK(rep.ok);
  }
}

TEST_CASE("sum and mean reductions over interior axes") {
  std::mt19937_64 rng(8);
  T x = random_tensor({2, 3, 4}, rng);
  auto f = [&] { return ad::sum_all(ad::mul(ad::mean(x, 1), ad::sum(x, 1))); };
  const auto rep = grad_check(f, {x});
  CHECK(rep.ok);
  const T s = ad::sum(x, 2);
  REQUIRE(s.shape() == ad::Shape{2, 3});
  CHECK(s[0] == doctest::Approx(x[0] + x[1] + x[2] + x[3]));
}

TEST_CASE("quaternion-to-rotation gradient through normalization") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    T q = random_tensor({4}, rng);
    const T pts = random_tensor({6, 3}, rng, 1.0, false);
    auto f = [&] {
      T r = ad::quat_to_rotation(ad::l2_normalize(q, 0));
      return ad::sum_all(ad::mul(ad::matmul(pts, ad::permute(r, {1, 0})), pts));
    };
    const auto rep = grad_check(f, {q}, trial);
    INFO(rep.where);
    CHECK(rep.ok);
  }
}

TEST_CASE("row losses") {
  const T e = T::from({3, 3}, {0.3, 0, 0, 0, 0.6, 0, 0, 0, 1.0});
  const double huber = ad::row_loss(e, ad::RowLoss::huber, 0.6).item();
  CHECK(std::abs(huber - (0.045 + 0.18 + 0.42) / 3.0) < 1e-12);
  const double l1 = ad::row_loss(e, ad::RowLoss::l1, 0.6).item();
  CHECK(std::abs(l1 - (0.3 + 0.6 + 1.0) / 3.0) < 1e-12);
  const double l2 = ad::row_loss(e, ad::RowLoss::l2, 0.6).item();
  CHECK(std::abs(l2 - 0.5 * (0.09 + 0.36 + 1.0) / 3.0) < 1e-12);
  CHECK_THROWS_AS(ad::row_loss(e, ad::RowLoss::huber, 0.0), std::invalid_argument);

  std::mt19937_64 rng(10);
  for (auto kind : {ad::RowLoss::huber, ad::RowLoss::l1, ad::RowLoss::l2}) {
    T r = random_tensor({8, 3}, rng, 0.5);
    auto f = [&] { return ad::row_loss(r, kind, 0.6); };
    CHECK(grad_check(f, {r}).ok);
  }
}

TEST_CASE("float instantiation works") {
  using F = ad::Tensor<float>;
  F x = F::from({2, 2}, {1.f, 2.f, 3.f, 4.f}, true);
  F y = ad::sum_all(ad::mul(ad::softmax(x, 1), x));
  y.backward();
  CHECK(x.has_grad());
  CHECK(std::isfinite(y.item()));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  std::vector<T> params{T::from({2}, {1.0, -2.0}, true)};
  ad::AdamState st;
  std::vector<double> zeros(2, 0.0);
  ad::adam_step<double>(params, {std::span<const double>(zeros)}, st, {});
  CHECK(params[0][0] == 1.0);
  CHECK(params[0][1] == -2.0);
  CHECK(st.t == 1);
}

TEST_CASE("adam: one step on 0.5 w^2 decreases w") {
  T w = T::from({1}, {1.0}, true);
  ad::Adam<double> opt({w}, {.lr = 0.1});
  ad::scale(ad::sum_all(ad::mul(w, w)), 0.5).backward();
  opt.step();
  CHECK(w[0] < 1.0);
}

TEST_CASE("adam: 200 steps on a 2-parameter quadratic reach the minimizer") {
  // f(a, b) = (a - 3)^2 + 2 (b + 1)^2 + (a - 3)(b + 1), minimizer (3, -1)
  T w = T::from({2}, {0.0, 0.0}, true);
  ad::Adam<double> opt({w}, {.lr = 0.05});
  const T c = T::from({2}, {3.0, -1.0});
  for (int i = 0; i < 2000 && i >= 0; ++i) {
    opt.zero_grad();
    const T d = ad::sub(w, c);
    const T d0 = ad::slice(d, 0, 0, 1), d1 = ad::slice(d, 0, 1, 1);
    T f = ad::add(ad::add(ad::sum_all(ad::mul(d0, d0)), ad::scale(ad::sum_all(ad::mul(d1, d1)), 2.0)),
                  ad::sum_all(ad::mul(d0, d1)));
    f.backward();
    opt.step();
    if (i == 199) break;
  }
  CHECK(std::abs(w[0] - 3.0) < 1e-3);
  CHECK(std::abs(w[1] + 1.0) < 1e-3);
}
