#include <doctest.h>

#include <random>

#include "rvo/autograd.hpp"
#include "rvo/errors.hpp"
#include "support/testing.hpp"

using namespace rvo;
using V = ag::Var<double>;

namespace {

V random_param(ag::Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<size_t>(ag::numel(shape)));
  for (auto& x : v) x = u(rng);
  return V::parameter(std::move(shape), std::move(v));
}

void expect_grads(const std::vector<V>& inputs, const std::function<V()>& f, double tol = 1e-6) {
  std::vector<std::pair<std::string, V>> named;
  for (size_t i = 0; i < inputs.size(); ++i) named.push_back({"input" + std::to_string(i), inputs[i]});
  const auto r = testing::grad_check(named, [&] { return testing::random_projection(f(), 99); }, 1e-5,
                                     64);
  INFO("worst tensor " << r.worst_tensor);
  CHECK(r.worst_relative < tol);
}

}  // namespace

TEST_CASE("elementwise ops differentiate correctly") {
  const auto a = random_param({4, 3}, 1), b = random_param({4, 3}, 2, 0.5, 2.0);
  expect_grads({a, b}, [&] { return ag::add(a, b); });
  expect_grads({a, b}, [&] { return ag::sub(a, b); });
  expect_grads({a, b}, [&] { return ag::mul(a, b); });
  expect_grads({a}, [&] { return ag::scale(ag::add_scalar(a, 0.3), -2.0); });
  expect_grads({a}, [&] { return ag::sigmoid(a); });
  expect_grads({a}, [&] { return ag::exp(a); });
  expect_grads({a}, [&] { return ag::sin(a); });
  expect_grads({a}, [&] { return ag::cos(a); });
  expect_grads({a}, [&] { return ag::asin(ag::scale(a, 0.9)); });
  expect_grads({a, b}, [&] { return ag::atan2(a, b); });
  expect_grads({a}, [&] { return ag::relu(ag::add_scalar(a, 0.05)); });
  const auto s = random_param({4, 1}, 3), one = random_param({1, 1}, 4);
  expect_grads({a, s}, [&] { return ag::mul_col(a, s); });
  expect_grads({a, one}, [&] { return ag::mul_scalar(a, one); });
}

TEST_CASE("structural ops route gradients to the right entries") {
  const auto a = random_param({6, 4}, 5), b = random_param({6, 2}, 6);
  expect_grads({a, b}, [&] { return ag::concat_cols<double>({a, b}); });
  expect_grads({a}, [&] { return ag::concat_rows<double>({a, a}); });
  expect_grads({a}, [&] { return ag::slice_cols(a, 1, 3); });
  expect_grads({a}, [&] { return ag::slice_rows(a, 2, 5); });
  expect_grads({a}, [&] { return ag::gather_rows(a, {5, 0, 0, 3, 5}); });
  expect_grads({a}, [&] { return ag::repeat_rows(a, 3); });
  expect_grads({a}, [&] { return ag::reshape(a, {12, 2}); });
  CHECK_THROWS_AS(ag::gather_rows(a, {6}), IndexOutOfRange);
  CHECK_THROWS_AS(ag::add(a, b), ShapeMismatch);
}

TEST_CASE("reductions") {
  const auto a = random_param({12, 3}, 7);
  expect_grads({a}, [&] { return ag::sum_all(a); });
  expect_grads({a}, [&] { return ag::mean_all(a); });
  expect_grads({a}, [&] { return ag::row_norm(a); });
  expect_grads({a}, [&] { return ag::group_sum(a, 4); });
  expect_grads({a}, [&] { return ag::group_mean(a, 3); });
  expect_grads({a}, [&] { return ag::group_max(a, 4); });
  expect_grads({a}, [&] { return ag::group_softmax(a, 4); });
  expect_grads({a}, [&] { return ag::row_softmax(a); });

  const auto m = V::constant({4, 2}, std::vector<double>{1, 5, 3, 5, 3, 0, 2, 0});
  const auto mx = ag::group_max(m, 2);
  CHECK(mx.at(0, 0) == 3);
  CHECK(mx.at(1, 1) == 0);
  const auto sm = ag::group_softmax(m, 4);
  double total = 0;
  for (int r = 0; r < 4; ++r) total += sm.at(r, 0);
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("dense layers and batch norm") {
  const auto x = random_param({5, 3}, 8), w = random_param({3, 4}, 9), b = random_param({1, 4}, 10);
  expect_grads({x, w, b}, [&] { return ag::linear(x, w, b); });
  expect_grads({x, w}, [&] { return ag::matmul(x, w); });
  const auto gamma = random_param({1, 3}, 11, 0.5, 1.5), beta = random_param({1, 3}, 12);
  std::vector<double> rm(3, 0.0), rv(3, 1.0);
  expect_grads({x, gamma, beta}, [&] {
    return ag::batch_norm(x, gamma, beta, rm, rv, ag::BatchNormState{true, 0.1, 1e-5});
  });
}

TEST_CASE("batch norm normalizes in training and uses running statistics in evaluation") {
  const auto x = V::constant({4, 1}, std::vector<double>{1, 2, 3, 4});
  const auto gamma = V::constant({1, 1}, 1.0), beta = V::constant({1, 1}, 0.0);
  std::vector<double> rm{0.0}, rv{1.0};
  const auto y = ag::batch_norm(x, gamma, beta, rm, rv, {true, 0.1, 0.0});
  CHECK(y.at(0, 0) == doctest::Approx(-1.5 / std::sqrt(1.25)));
  CHECK(rm[0] == doctest::Approx(0.25));
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * (5.0 / 3.0)));
  const auto e = ag::batch_norm(x, gamma, beta, rm, rv, {false, 0.1, 0.0});
  CHECK(e.at(3, 0) == doctest::Approx((4.0 - rm[0]) / std::sqrt(rv[0])));
}

TEST_CASE("convolution matches a direct loop and differentiates") {
  const auto x = random_param({2, 5, 6, 3}, 13), w = random_param({27, 4}, 14);
  for (int stride : {1, 2}) {
    const auto y = ag::conv3x3(x, w, stride);
    const int64_t ho = (5 - 1) / stride + 1, wo = (6 - 1) / stride + 1;
    REQUIRE(y.shape() == ag::Shape{2, ho, wo, 4});
    // Direct evaluation at one output site.
    const int b = 1, oy = ho - 1, ox = 1, co = 2;
    double expect = 0;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
        if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
        for (int c = 0; c < 3; ++c) {
          expect += x.value()[((b * 5 + iy) * 6 + ix) * 3 + c] * w.value()[((ky * 3 + kx) * 3 + c) * 4 + co];
        }
      }
    }
    CHECK(y.value()[((b * ho + oy) * wo + ox) * 4 + co] == doctest::Approx(expect));
    expect_grads({x, w}, [&] { return ag::conv3x3(x, w, stride); });
  }
}

TEST_CASE("bilinear sampling interpolates, clamps and differentiates") {
  const auto map = V::parameter({1, 2, 2, 1}, {0.0, 1.0, 2.0, 3.0});
  const auto at = V::constant({3, 2}, std::vector<double>{0.5, 0.5, 0.0, 0.0, 10.0, -4.0});
  const auto s = ag::bilinear_sample(map, at, {0, 0, 0});
  CHECK(s.at(0, 0) == doctest::Approx(1.5));
  CHECK(s.at(1, 0) == doctest::Approx(0.0));
  CHECK(s.at(2, 0) == doctest::Approx(1.0));  // clamped to the top-right pixel

  const auto big = random_param({2, 5, 7, 3}, 15);
  const auto coords = random_param({6, 2}, 16, 0.2, 3.8);
  expect_grads({big, coords}, [&] { return ag::bilinear_sample(big, coords, {0, 1, 1, 0, 1, 0}); });
}

TEST_CASE("grouped attention matches a hand evaluation and differentiates") {
  // One query, two keys, one head of width 2: softmax(q.k / sqrt(2)).
  const auto q = V::constant({1, 2}, std::vector<double>{1.0, 0.0});
  const auto k = V::constant({2, 2}, std::vector<double>{1.0, 0.0, 0.0, 1.0});
  const auto v = V::constant({2, 2}, std::vector<double>{10.0, 0.0, 0.0, 10.0});
  const auto out = ag::grouped_attention(q, k, v, 2, 1);
  const double w0 = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
  CHECK(out.at(0, 0) == doctest::Approx(10.0 * w0));
  CHECK(out.at(0, 1) == doctest::Approx(10.0 * (1.0 - w0)));

  const auto qq = random_param({3, 4}, 17), kk = random_param({9, 4}, 18), vv = random_param({9, 4}, 19);
  expect_grads({qq, kk, vv}, [&] { return ag::grouped_attention(qq, kk, vv, 3, 2); });
}

TEST_CASE("rigid-body helpers") {
  const auto a = random_param({2, 9}, 20), b = random_param({2, 9}, 21);
  const auto p = random_param({5, 3}, 22), t = random_param({2, 3}, 23);
  expect_grads({a, b}, [&] { return ag::mat3_mul(a, b); });
  expect_grads({a, t}, [&] { return ag::mat3_vec(a, t); });
  expect_grads({p, a, t}, [&] { return ag::transform_points(p, a, t, {0, 1, 1, 0, 1}); });
}

TEST_CASE("no-grad guard stops graph recording") {
  const auto a = random_param({2, 2}, 24);
  {
    ag::NoGradGuard guard;
    CHECK_FALSE(ag::mul(a, a).requires_grad());
  }
  CHECK(ag::mul(a, a).requires_grad());
}
