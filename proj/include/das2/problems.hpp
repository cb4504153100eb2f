#pragma once

#include "das2/flow.hpp"
#include "das2/nets.hpp"

#include <span>
#include <string>

namespace das2 {

enum class ProblemKind { param_ode, oplearn_cheb };

/// A parametric first-order ODE on x in [0, 1] with its residual and
/// reference solution. Points are rows [x, xi_0 .. xi_{d-1}].
struct Problem {
  std::string name;
  ProblemKind kind = ProblemKind::param_ode;
  BoxDomain spatial;  // Omega_s
  BoxDomain param;    // Omega_p
  double u0 = 1.0;         // param_ode initial value
  double decay = 6.0;      // oplearn_cheb exponent D
  Index degree = 8;        // oplearn_cheb basis size d

  Index spatial_dim() const { return spatial.dim(); }
  Index param_dim() const { return param.dim(); }
  Index dim() const { return spatial_dim() + param_dim(); }
  Ansatz ansatz() const;
  /// Omega = Omega_s x Omega_p with the given enlargement margin for B.
  BoxDomain joint_domain(double margin) const;
  BoxDomain param_domain(double margin) const;

  /// Residual r = du/dx - s at each row (n x 1), differentiable in theta.
  ad::Var residual(ad::Tape& tape, const Surrogate& s, const Matrix& points) const;
  /// Residual on the product x_grid x xi_batch, laid out as
  /// Surrogate::forward_product lays out u.
  ad::Var product_residual(ad::Tape& tape, const Surrogate& s, const Matrix& x_grid, const Matrix& xi_batch) const;

  Vector residual_values(const Surrogate& s, const Matrix& points) const;
  /// Marginal residual r~^2(xi) = mean over x_grid of r^2, one entry per xi row.
  Vector marginal_residual_values(const Surrogate& s, const Matrix& xi_batch, const Matrix& x_grid) const;

  /// Reference solution at each row.
  Vector reference(const Matrix& points) const;

  /// Throws when the surrogate's shape does not fit this problem.
  void check_surrogate(const Surrogate& s) const;
};

Problem make_param_ode(double u0 = 1.0, double xi_lower = -3.0, double xi_upper = 3.0);
Problem make_oplearn(Index degree = 8, double decay = 6.0, double bound = 1.0);

/// Chebyshev polynomial of the first kind via the three-term recurrence.
double chebyshev_t(Index order, double t);

double exact_param_ode(double x, double xi, double u0 = 1.0);
/// exp(-D |xi - 0.5|^2) * sum_i xi_i T_i(2x - 1).
double chebyshev_rhs(double x, std::span<const double> xi, double decay);

double residual_param_ode(const Surrogate& s, double x, double xi);
double residual_oplearn(const Surrogate& s, double x, std::span<const double> xi, double decay);

struct Rk45Options {
  double atol = 1e-8;
  double rtol = 1e-8;
  double min_step = 1e-14;
};

/// Solution of u' = chebyshev_rhs(x, xi, D), u(0) = 0, on a sorted grid in
/// [0, 1], by adaptive Dormand-Prince 5(4).
Vector rk45_oracle(std::span<const double> xi, std::span<const double> grid, double decay,
                   const Rk45Options& options = {});

/// Mean of r^2 over the fixed x grid for one parameter value.
double marginal_residual(const Problem& problem, const Surrogate& s, std::span<const double> xi,
                         std::span<const double> x_grid);

/// Mean of squares per xi, from a residual laid out by product_residual.
Vector per_xi_mean_square(const Matrix& residual, Index nx, Index nb);

}  // namespace das2
