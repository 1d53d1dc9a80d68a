#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>
#include <vector>

#include "support.hpp"

using namespace diffrbd;
using testing::rel_err;

TEST_CASE("square has derivative 2x") {
  const auto r = ad::grad([](const auto& x) { return x[0] * x[0]; }, std::vector<double>{3.0});
  CHECK(r.value == 9.0);
  CHECK(r.gradient[0] == 6.0);
}

TEST_CASE("product rule") {
  const auto r = ad::grad([](const auto& x) { return x[0] * x[1]; }, std::vector<double>{2.0, 5.0});
  CHECK(r.value == 10.0);
  CHECK(r.gradient == std::vector<double>{5.0, 2.0});
}

TEST_CASE("elementary functions match their analytic derivatives") {
  const double x = 0.7, y = -1.3;
  const auto r = ad::grad(
      [](const auto& v) {
        using ad::atan2, ad::exp, ad::log, ad::sin, ad::sqrt, ad::tanh, ad::cos;
        return sin(v[0]) + cos(v[1]) + exp(v[0] * v[1]) + log(v[0]) + sqrt(v[0]) + tanh(v[1]) + atan2(v[1], v[0]) +
               v[1] / v[0];
      },
      std::vector<double>{x, y});
  const double r2 = x * x + y * y;
  const double dx = std::cos(x) + y * std::exp(x * y) + 1.0 / x + 0.5 / std::sqrt(x) - y / r2 - y / (x * x);
  const double dy = -std::sin(y) + x * std::exp(x * y) + (1.0 - std::tanh(y) * std::tanh(y)) + x / r2 + 1.0 / x;
  CHECK(r.gradient[0] == doctest::Approx(dx).epsilon(1e-14));
  CHECK(r.gradient[1] == doctest::Approx(dy).epsilon(1e-14));
}

TEST_CASE("domain errors are signalled instead of producing NaN") {
  auto run = [](auto f, double v) { return ad::grad(f, std::vector<double>{v}); };
  CHECK_THROWS_AS(run([](const auto& x) { return ad::log(x[0]); }, 0.0), ad::DomainError);
  CHECK_THROWS_AS(run([](const auto& x) { return ad::log(x[0]); }, -1.0), ad::DomainError);
  CHECK_THROWS_AS(run([](const auto& x) { return ad::sqrt(x[0]); }, -1e-3), ad::DomainError);
  CHECK_THROWS_AS(run([](const auto& x) { return 1.0 / (x[0] - x[0]); }, 2.0), ad::DomainError);
  CHECK_THROWS_AS(run([](const auto& x) { return ad::atan2(x[0], x[0]); }, 0.0), ad::DomainError);
}

TEST_CASE("finite differences") {
  auto sq = [](const std::vector<double>& x) { return x[0] * x[0]; };
  CHECK(ad::finite_diff_gradient(sq, std::vector<double>{3.0}, 1e-6)[0] == doctest::Approx(6.0).epsilon(1e-6));
  auto constant = [](const std::vector<double>&) { return 4.0; };
  CHECK(ad::finite_diff_gradient(constant, std::vector<double>{1.0, 2.0}, 1e-6) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(ad::finite_diff_gradient(sq, std::vector<double>{1.0}, 0.0), std::invalid_argument);
  auto bad = [](const std::vector<double>& x) { return std::log(x[0]); };
  CHECK_THROWS_AS(ad::finite_diff_gradient(bad, std::vector<double>{0.0}, 1e-6), ad::DomainError);
}

TEST_CASE("branches record the path taken") {
  auto f = [](const auto& x) { return x[0] > 0.0 ? x[0] * x[0] * x[0] : -2.0 * x[0]; };
  CHECK(ad::grad(f, std::vector<double>{2.0}).gradient[0] == 12.0);
  CHECK(ad::grad(f, std::vector<double>{-2.0}).gradient[0] == -2.0);
}

TEST_CASE("gradient is linear in the program") {
  std::mt19937_64 rng(11);
  auto f = [](const auto& x) { return ad::sin(x[0] * x[1]) + x[2] * x[2]; };
  auto g = [](const auto& x) { return ad::exp(x[0]) * x[2] - x[1]; };
  for (int t = 0; t < 20; ++t) {
    const auto x = testing::uniform(rng, 3, -1.0, 1.0);
    const double a = 1.7, b = -0.3;
    const auto h = ad::grad([&](const auto& v) { return a * f(v) + b * g(v); }, x);
    const auto gf = ad::grad(f, x), gg = ad::grad(g, x);
    for (int i = 0; i < 3; ++i) CHECK(h.gradient[i] == doctest::Approx(a * gf.gradient[i] + b * gg.gradient[i]).epsilon(1e-14));
  }
}

TEST_CASE("evaluation is deterministic") {
  auto f = [](const auto& x) { return ad::tanh(x[0] * x[1]) / (1.0 + x[2] * x[2]) + ad::cos(x[0] - x[2]); };
  const std::vector<double> x{0.3, -0.8, 1.9};
  const auto a = ad::grad(f, x), b = ad::grad(f, x);
  CHECK(a.value == b.value);
  CHECK(a.gradient == b.gradient);
}

TEST_CASE("jacobian rows match per-output gradients") {
  auto f = [](const auto& x) {
    using T = typename std::decay_t<decltype(x)>::value_type;
    return std::vector<T>{x[0] * x[1], ad::sin(x[1]) + x[2], x[0] / x[2]};
  };
  const std::vector<double> x{1.2, 0.4, -2.0};
  const auto J = ad::jacobian(f, x);
  REQUIRE(J.values.size() == 3);
  const double expect[3][3] = {{0.4, 1.2, 0.0}, {0.0, std::cos(0.4), 1.0}, {1.0 / -2.0, 0.0, -1.2 / 4.0}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(J(r, c) == doctest::Approx(expect[r][c]).epsilon(1e-15));
}

TEST_CASE("reverse mode agrees with finite differences on random smooth programs") {
  std::mt19937_64 rng(5);
  auto f = [](const auto& x) {
    auto s = x[0] * 0.0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) s += ad::sin(x[i]) * ad::exp(0.3 * x[i + 1]) + x[i] * x[i] / (2.0 + ad::cos(x[i + 1]));
    return s + ad::abs_smooth(x.back());
  };
  for (int t = 0; t < 100; ++t) {
    const auto x = testing::uniform(rng, 6, -2.0, 2.0);
    const auto g = ad::grad(f, x).gradient;
    const auto fd = ad::finite_diff_gradient_relative(f, x);
    CHECK(rel_err(g, fd) < 1e-5);
  }
}

TEST_CASE("tapes are independent across threads") {
  auto f = [](const auto& x) { return x[0] * x[0] * ad::sin(x[1]); };
  std::vector<double> out(8);
  std::vector<std::thread> pool;
  for (int i = 0; i < 8; ++i)
    pool.emplace_back([&, i] { out[static_cast<std::size_t>(i)] = ad::grad(f, std::vector<double>{double(i), 1.0}).gradient[0]; });
  for (auto& t : pool) t.join();
  for (int i = 0; i < 8; ++i) CHECK(out[static_cast<std::size_t>(i)] == doctest::Approx(2.0 * i * std::sin(1.0)));
}
