#include <doctest.h>

#include "das2/adam.hpp"
#include "das2/error.hpp"
#include "das2/problems.hpp"
#include "das2/trainer.hpp"
#include "helpers.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace das2;

namespace {

Surrogate constant_one() {
  Surrogate s = Surrogate::mlp({2, 4, 1}, 0, Ansatz::ic_shift(1.0));
  s.parameters().setZero();
  return s;
}

std::vector<double> uniform_grid(Index n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

}  // namespace

TEST_SUITE("problems") {

TEST_CASE("residual_param_ode: constant surrogate") {
  const Surrogate s = constant_one();
  CHECK(residual_param_ode(s, 0.3, 0.0) == 0.0);
  for (double x : {0.0, 0.25, 1.0}) CHECK(residual_param_ode(s, x, 2.0) == -2.0);
}

TEST_CASE("residual_param_ode: random surrogate matches finite differences") {
  const Surrogate s = Surrogate::mlp({2, 8, 8, 1}, 3, Ansatz::ic_shift(1.0));
  const double h = 1e-6;
  for (const auto& [x, xi] : std::vector<std::pair<double, double>>{{0.2, -1.5}, {0.7, 2.4}, {0.95, 0.3}}) {
    Matrix p(3, 2);
    p << x, xi, x + h, xi, x - h, xi;
    const Vector u = s.evaluate(p);
    const double fd = (u[1] - u[2]) / (2 * h) - xi * u[0];
    CHECK(std::abs(residual_param_ode(s, x, xi) - fd) < 1e-5);
  }
}

TEST_CASE("exact_param_ode examples") {
  CHECK(exact_param_ode(0.0, 2.7) == 1.0);
  CHECK(exact_param_ode(0.6, 0.0) == 1.0);
  CHECK(std::abs(exact_param_ode(1.0, 3.0) - 20.0855369231876677) < 1e-12);
  CHECK(exact_param_ode(0.5, 1.0, 2.0) == doctest::Approx(2.0 * std::exp(0.5)));
}

TEST_CASE("chebyshev_t matches cos(i arccos t)") {
  double worst = 0.0;
  for (Index i = 0; i < 12; ++i) {
    for (int k = 0; k <= 200; ++k) {
      const double t = -1.0 + 2.0 * k / 200.0;
      worst = std::max(worst, std::abs(chebyshev_t(i, t) - std::cos(static_cast<double>(i) * std::acos(t))));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("chebyshev_rhs examples") {
  for (Index d : {1, 4, 8}) {
    const std::vector<double> half(static_cast<std::size_t>(d), 0.5);
    CHECK(std::abs(chebyshev_rhs(1.0, half, 6.0) - 0.5 * static_cast<double>(d)) < 1e-12);
    const std::vector<double> zero(static_cast<std::size_t>(d), 0.0);
    CHECK(chebyshev_rhs(0.37, zero, 6.0) == 0.0);
    double alternating = 0.0;
    for (Index i = 0; i < d; ++i) alternating += 0.5 * (i % 2 == 0 ? 1.0 : -1.0);
    CHECK(std::abs(chebyshev_rhs(0.0, half, 6.0) - alternating) < 1e-12);
  }
  const std::vector<double> xi{0.1, 0.9};
  const double decay = std::exp(-6.0 * (0.16 + 0.16));
  const double t = 2 * 0.3 - 1;
  CHECK(std::abs(chebyshev_rhs(0.3, xi, 6.0) - decay * (0.1 + 0.9 * t)) < 1e-14);
}

TEST_CASE("residual_oplearn: zero surrogate and finite differences") {
  Surrogate zero = Surrogate::branch_trunk({1, 6, 3}, {3, 6, 3}, 1, Ansatz::ic_zero());
  zero.parameters().setZero();
  const std::vector<double> xi0{0.0, 0.0, 0.0};
  CHECK(residual_oplearn(zero, 0.4, xi0, 6.0) == 0.0);
  const std::vector<double> xi{0.2, 0.8, 0.5};
  CHECK(residual_oplearn(zero, 0.4, xi, 6.0) == -chebyshev_rhs(0.4, xi, 6.0));

  const Surrogate s = Surrogate::branch_trunk({1, 6, 3}, {3, 6, 3}, 2, Ansatz::ic_zero());
  const double h = 1e-6;
  for (double x : {0.1, 0.5, 0.85}) {
    const double fd = (branch_trunk_eval(s, x + h, xi) - branch_trunk_eval(s, x - h, xi)) / (2 * h);
    CHECK(std::abs(residual_oplearn(s, x, xi, 6.0) - (fd - chebyshev_rhs(x, xi, 6.0))) < 1e-5);
  }
}

TEST_CASE("Problem residual batches agree with the pointwise residuals") {
  const Problem ode = make_param_ode();
  const Surrogate s = Surrogate::mlp({2, 6, 1}, 4, ode.ansatz());
  Matrix pts(3, 2);
  pts << 0.1, -2.0, 0.5, 0.0, 0.9, 2.5;
  const Vector r = ode.residual_values(s, pts);
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(r[i] - residual_param_ode(s, pts(i, 0), pts(i, 1))) < 1e-13);

  const Problem op = make_oplearn(3, 6.0, 1.0);
  const Surrogate b = Surrogate::branch_trunk({1, 5, 2}, {3, 5, 2}, 5, op.ansatz());
  Matrix q(2, 4);
  q << 0.2, 0.1, 0.5, 0.9, 0.7, 0.3, 0.3, 0.4;
  const Vector rb = op.residual_values(b, q);
  for (Index i = 0; i < 2; ++i) {
    const std::vector<double> xi{q(i, 1), q(i, 2), q(i, 3)};
    CHECK(std::abs(rb[i] - residual_oplearn(b, q(i, 0), xi, 6.0)) < 1e-13);
  }
  CHECK_THROWS_AS(op.check_surrogate(s), DimensionError);
}

TEST_CASE("rk45_oracle: zero parameter and constant right-hand side") {
  const std::vector<double> grid = uniform_grid(50);
  const std::vector<double> zero(5, 0.0);
  const Vector u0 = rk45_oracle(zero, grid, 6.0);
  CHECK(testing::max_abs(u0) == 0.0);

  for (double c : {0.3, 1.0, -0.8}) {
    const std::vector<double> xi{c, 0.0, 0.0, 0.0, 0.0};
    double norm2 = (c - 0.5) * (c - 0.5) + 4 * 0.25;
    const double slope = c * std::exp(-6.0 * norm2);
    const Vector u = rk45_oracle(xi, grid, 6.0);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(std::abs(u[static_cast<Index>(i)] - slope * grid[i]) < 1e-6);
  }
}

TEST_CASE("rk45_oracle: self-convergence and linearity") {
  RngStream rng(5, 0);
  const std::vector<double> grid = uniform_grid(100);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> xi(8);
    for (double& v : xi) v = rng.uniform();
    const Vector a = rk45_oracle(xi, grid, 6.0);
    Rk45Options fine;
    fine.atol = 0.5e-8;
    fine.rtol = 0.5e-8;
    const Vector b = rk45_oracle(xi, grid, 6.0, fine);
    CHECK(testing::max_abs(a - b) < 1e-7);

    std::vector<double> scaled = xi;
    for (double& v : scaled) v *= 2.5;
    const Vector u = rk45_oracle(xi, grid, 0.0);
    const Vector us = rk45_oracle(scaled, grid, 0.0);
    CHECK(testing::max_abs(us - 2.5 * u) < 1e-7 * std::max(1.0, testing::max_abs(us)));
  }
}

TEST_CASE("rk45_oracle: matches the quadrature of the right-hand side") {
  // u(x) = integral of the rhs; the Chebyshev sum integrates in closed form
  // through the antiderivatives of T_0 = 1, T_1 = t, T_2 = 2t^2 - 1 with t = 2x - 1.
  const std::vector<double> xi{0.3, 0.6, 0.9};
  const double decay = std::exp(-6.0 * (0.04 + 0.01 + 0.16));
  auto exact = [&](double x) {
    auto anti = [&](double t) { return 0.3 * t + 0.6 * t * t / 2 + 0.9 * (2 * t * t * t / 3 - t); };
    return decay * 0.5 * (anti(2 * x - 1) - anti(-1.0));
  };
  const std::vector<double> grid = uniform_grid(33);
  const Vector u = rk45_oracle(xi, grid, 6.0);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(std::abs(u[static_cast<Index>(i)] - exact(grid[i])) < 1e-8);
}

TEST_CASE("rk45_oracle: invalid grids") {
  const std::vector<double> xi{0.5};
  const std::vector<double> unsorted{0.0, 0.5, 0.4};
  const std::vector<double> outside{0.0, 1.5};
  CHECK_THROWS_AS(rk45_oracle(xi, unsorted, 6.0), Error);
  CHECK_THROWS_AS(rk45_oracle(xi, outside, 6.0), Error);
}

TEST_CASE("marginal_residual examples") {
  const Problem ode = make_param_ode();
  const Surrogate one = constant_one();
  const std::vector<double> grid = uniform_grid(100);
  const std::vector<double> xi{1.5};
  CHECK(std::abs(marginal_residual(ode, one, xi, grid) - 2.25) < 1e-14);
  const std::vector<double> xi0{0.0};
  CHECK(marginal_residual(ode, one, xi0, grid) == 0.0);
  CHECK_THROWS_AS(marginal_residual(ode, one, xi, std::vector<double>{}), Error);
}

TEST_CASE("marginal_residual: m_x = 100 against m_x = 1000") {
  const Problem op = make_oplearn(5, 6.0, 1.0);
  const Surrogate s = Surrogate::branch_trunk({1, 16, 8}, {5, 16, 8}, 7, op.ansatz());
  RngStream rng(8, 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> xi(5);
    for (double& v : xi) v = rng.uniform();
    const double coarse = marginal_residual(op, s, xi, uniform_grid(100));
    const double fine = marginal_residual(op, s, xi, uniform_grid(1000));
    CHECK(std::abs(coarse - fine) <= 0.05 * fine);
  }
}

TEST_CASE("residual-oracle consistency on the ODE") {
  // Fit the surrogate to exact values, then bound the mean squared residual
  // on the fitting grid by a constant times the fitting error.
  const Problem ode = make_param_ode();
  Surrogate s = Surrogate::mlp({2, 16, 16, 1}, 3, ode.ansatz());
  Matrix pts(20 * 20, 2);
  for (Index i = 0; i < 20; ++i)
    for (Index j = 0; j < 20; ++j) pts.row(i * 20 + j) << (i + 0.5) / 20.0, -3.0 + 6.0 * (j + 0.5) / 20.0;
  Vector target(pts.rows());
  for (Index i = 0; i < pts.rows(); ++i) target[i] = exact_param_ode(pts(i, 0), pts(i, 1));

  AdamState state(static_cast<Index>(s.parameter_count()));
  AdamHyper hyper;
  hyper.lr = 3e-3;
  for (int step = 0; step < 3000; ++step) {
    ad::Tape tape(std::span<const double>(s.parameters().data(), s.parameter_count()));
    ad::Var u = s.forward(tape, pts);
    ad::Var loss = ad::mean(ad::square(u - tape.constant(Matrix(target))));
    const Vector g = tape.grad_params(loss);
    adam_step(s.parameters(), g, state, hyper);
  }
  const double mse = (s.evaluate(pts) - target).array().square().mean();
  const double res = ode.residual_values(s, pts).array().square().mean();
  MESSAGE("fit mse " << mse << ", mean squared residual " << res << ", ratio " << res / mse);
  CHECK(mse < 1e-2);
  CHECK(res <= 2000.0 * mse);
}

TEST_CASE("per_xi_mean_square layout") {
  Matrix r(2, 3);
  r << 1, 2, 3, 4, 5, 6;
  const Vector m = per_xi_mean_square(r, 2, 3);
  REQUIRE(m.size() == 3);
  CHECK(m[0] == 8.5);
  CHECK(m[1] == 14.5);
  CHECK(m[2] == 22.5);
  Matrix column(6, 1);
  column << 1, 4, 2, 5, 3, 6;
  CHECK((per_xi_mean_square(column, 2, 3).array() == m.array()).all());
  CHECK_THROWS_AS(per_xi_mean_square(r, 4, 3), DimensionError);
}

}  // TEST_SUITE
