#include "das2/problems.hpp"

#include "das2/error.hpp"

#include <cmath>

namespace das2 {

namespace {

double decay_factor(std::span<const double> xi, double decay) {
  double r2 = 0.0;
  for (double v : xi) r2 += (v - 0.5) * (v - 0.5);
  return std::exp(-decay * r2);
}

// T_k(2x - 1) for k < degree, one row per x.
Matrix chebyshev_basis(const Matrix& x, Index degree) {
  Matrix t(x.rows(), degree);
  for (Index i = 0; i < x.rows(); ++i) {
    const double arg = 2.0 * x(i, 0) - 1.0;
    for (Index k = 0; k < degree; ++k) {
      if (k == 0) {
        t(i, k) = 1.0;
      } else if (k == 1) {
        t(i, k) = arg;
      } else {
        t(i, k) = 2.0 * arg * t(i, k - 1) - t(i, k - 2);
      }
    }
  }
  return t;
}

Vector row_vector(std::span<const double> v) {
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Index>(i)] = v[i];
  return out;
}

// Source term at each row of a joint point set.
Vector source_values(const Problem& p, const Matrix& points) {
  Vector s = Vector::Zero(points.rows());
  if (p.kind != ProblemKind::oplearn_cheb) return s;
  const Matrix basis = chebyshev_basis(points.leftCols(1), p.degree);
  for (Index i = 0; i < points.rows(); ++i) {
    const Eigen::RowVectorXd xi = points.row(i).rightCols(p.param_dim());
    const double r2 = (xi.array() - 0.5).square().sum();
    s[i] = std::exp(-p.decay * r2) * basis.row(i).dot(xi);
  }
  return s;
}

}  // namespace

Ansatz Problem::ansatz() const {
  return kind == ProblemKind::param_ode ? Ansatz::ic_shift(u0) : Ansatz::ic_zero();
}

BoxDomain Problem::joint_domain(double margin) const {
  Vector lo(dim()), hi(dim());
  lo << spatial.lower(), param.lower();
  hi << spatial.upper(), param.upper();
  return BoxDomain(lo, hi, margin);
}

BoxDomain Problem::param_domain(double margin) const { return BoxDomain(param.lower(), param.upper(), margin); }

void Problem::check_surrogate(const Surrogate& s) const {
  if (s.input_dim() != dim()) {
    throw DimensionError(name + ": surrogate input dimension", static_cast<std::size_t>(dim()),
                         static_cast<std::size_t>(s.input_dim()));
  }
  if (s.spatial_dim() != spatial_dim()) {
    throw DimensionError(name + ": surrogate spatial dimension", static_cast<std::size_t>(spatial_dim()),
                         static_cast<std::size_t>(s.spatial_dim()));
  }
}

ad::Var Problem::residual(ad::Tape& tape, const Surrogate& s, const Matrix& points) const {
  check_surrogate(s);
  ad::Var u = s.forward(tape, points, Index{0});
  ad::Var du = ad::tangent_of(u);
  if (kind == ProblemKind::param_ode) {
    return du - tape.constant(Matrix(points.col(1))) * u;
  }
  return du - tape.constant(Matrix(source_values(*this, points)));
}

ad::Var Problem::product_residual(ad::Tape& tape, const Surrogate& s, const Matrix& x_grid,
                                  const Matrix& xi_batch) const {
  check_surrogate(s);
  const Index nx = x_grid.rows();
  const Index nb = xi_batch.rows();
  ad::Var u = s.forward_product(tape, x_grid, xi_batch);
  ad::Var du = ad::tangent_of(u);
  const bool column_layout = s.kind() == SurrogateKind::mlp;

  if (kind == ProblemKind::param_ode) {
    Matrix xi = column_layout ? Matrix(nx * nb, 1) : Matrix(nx, nb);
    for (Index j = 0; j < nb; ++j) {
      if (column_layout) {
        xi.block(j * nx, 0, nx, 1).setConstant(xi_batch(j, 0));
      } else {
        xi.col(j).setConstant(xi_batch(j, 0));
      }
    }
    return du - tape.constant(std::move(xi)) * u;
  }

  const Matrix basis = chebyshev_basis(x_grid, degree);
  Matrix rhs = basis * xi_batch.transpose();  // nx x nb
  for (Index j = 0; j < nb; ++j) {
    const double r2 = (xi_batch.row(j).array() - 0.5).square().sum();
    rhs.col(j) *= std::exp(-decay * r2);
  }
  if (column_layout) rhs = Eigen::Map<const Matrix>(Matrix(rhs.transpose()).data(), nx * nb, 1);
  return du - tape.constant(std::move(rhs));
}

Vector Problem::residual_values(const Surrogate& s, const Matrix& points) const {
  ad::Tape tape(std::span<const double>(s.parameters().data(), s.parameter_count()));
  return residual(tape, s, points).value().col(0);
}

Vector Problem::marginal_residual_values(const Surrogate& s, const Matrix& xi_batch, const Matrix& x_grid) const {
  if (x_grid.rows() == 0) throw Error("marginal_residual: empty x grid");
  ad::Tape tape(std::span<const double>(s.parameters().data(), s.parameter_count()));
  ad::Var r = product_residual(tape, s, x_grid, xi_batch);
  return per_xi_mean_square(r.value(), x_grid.rows(), xi_batch.rows());
}

Vector Problem::reference(const Matrix& points) const {
  if (points.cols() != dim()) {
    throw DimensionError(name + ": point dimension", static_cast<std::size_t>(dim()), static_cast<std::size_t>(points.cols()));
  }
  Vector out(points.rows());
  if (kind == ProblemKind::param_ode) {
    for (Index i = 0; i < points.rows(); ++i) out[i] = exact_param_ode(points(i, 0), points(i, 1), u0);
    return out;
  }
  for (Index i = 0; i < points.rows(); ++i) {
    const Eigen::RowVectorXd xi = points.row(i).rightCols(param_dim());
    const double x = points(i, 0);
    const std::span<const double> grid(&x, 1);
    out[i] = rk45_oracle(std::span<const double>(xi.data(), xi.size()), grid, decay)[0];
  }
  return out;
}

Problem make_param_ode(double u0, double xi_lower, double xi_upper) {
  Problem p;
  p.name = "param_ode";
  p.kind = ProblemKind::param_ode;
  p.spatial = BoxDomain(Vector::Constant(1, 0.0), Vector::Constant(1, 1.0));
  p.param = BoxDomain(Vector::Constant(1, xi_lower), Vector::Constant(1, xi_upper));
  p.u0 = u0;
  return p;
}

Problem make_oplearn(Index degree, double decay, double bound) {
  if (degree < 1) throw Error("oplearn_cheb: degree must be positive");
  Problem p;
  p.name = "oplearn_cheb";
  p.kind = ProblemKind::oplearn_cheb;
  p.spatial = BoxDomain(Vector::Constant(1, 0.0), Vector::Constant(1, 1.0));
  p.param = BoxDomain(Vector::Constant(degree, -bound), Vector::Constant(degree, bound));
  p.decay = decay;
  p.degree = degree;
  p.u0 = 0.0;
  return p;
}

double chebyshev_t(Index order, double t) {
  if (order < 0) throw Error("chebyshev_t: negative order");
  if (order == 0) return 1.0;
  double prev = 1.0;
  double cur = t;
  for (Index k = 1; k < order; ++k) {
    const double next = 2.0 * t * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

double exact_param_ode(double x, double xi, double u0) { return u0 * std::exp(xi * x); }

double chebyshev_rhs(double x, std::span<const double> xi, double decay) {
  const double t = 2.0 * x - 1.0;
  double f = 0.0;
  for (std::size_t i = 0; i < xi.size(); ++i) f += xi[i] * chebyshev_t(static_cast<Index>(i), t);
  return decay_factor(xi, decay) * f;
}

double residual_param_ode(const Surrogate& s, double x, double xi) {
  const Problem p = make_param_ode(s.ansatz().u0);
  Matrix pt(1, 2);
  pt << x, xi;
  return p.residual_values(s, pt)[0];
}

double residual_oplearn(const Surrogate& s, double x, std::span<const double> xi, double decay) {
  Problem p = make_oplearn(static_cast<Index>(xi.size()), decay);
  Matrix pt(1, p.dim());
  pt(0, 0) = x;
  for (std::size_t k = 0; k < xi.size(); ++k) pt(0, static_cast<Index>(k) + 1) = xi[k];
  return p.residual_values(s, pt)[0];
}

Vector rk45_oracle(std::span<const double> xi, std::span<const double> grid, double decay,
                   const Rk45Options& options) {
  // Dormand-Prince 5(4) tableau.
  static constexpr double c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;

  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0 || grid[i] > 1.0) throw Error("rk45_oracle: grid must lie in [0, 1]");
    if (i > 0 && grid[i] < grid[i - 1]) throw Error("rk45_oracle: grid must be sorted");
  }
  // The right-hand side does not depend on u, so every stage is an evaluation of f(x).
  auto f = [&](double x) { return chebyshev_rhs(x, xi, decay); };

  Vector out(static_cast<Index>(grid.size()));
  double x = 0.0;
  double u = 0.0;
  double h = 1e-3;
  double k1 = f(x);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double target = grid[g];
    while (x < target) {
      if (h < options.min_step) throw Error("rk45_oracle: step size underflow");
      const bool last = x + h >= target;
      const double step = last ? target - x : h;
      // Stage 2 has zero weight when f is independent of u; stage 7 equals stage 6.
      const double k3 = f(x + c3 * step);
      const double k4 = f(x + c4 * step);
      const double k5 = f(x + c5 * step);
      const double k6 = f(x + step);
      const double unew = u + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const double k7 = k6;
      const double err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      const double scale = options.atol + options.rtol * std::max(std::abs(u), std::abs(unew));
      const double ratio = std::abs(err) / scale;
      if (ratio <= 1.0) {
        x = last ? target : x + step;
        u = unew;
        k1 = k7;
      }
      const double factor = ratio == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(ratio, -0.2), 0.2, 5.0);
      if (ratio <= 1.0 && last) {
        h = std::max(h, step * factor);
        break;
      }
      h = step * factor;
    }
    out[static_cast<Index>(g)] = u;
  }
  return out;
}

double marginal_residual(const Problem& problem, const Surrogate& s, std::span<const double> xi,
                         std::span<const double> x_grid) {
  if (x_grid.empty()) throw Error("marginal_residual: empty x grid");
  Matrix xg(static_cast<Index>(x_grid.size()), 1);
  for (std::size_t i = 0; i < x_grid.size(); ++i) xg(static_cast<Index>(i), 0) = x_grid[i];
  Matrix xb = row_vector(xi).transpose();
  return problem.marginal_residual_values(s, xb, xg)[0];
}

Vector per_xi_mean_square(const Matrix& residual, Index nx, Index nb) {
  Vector out(nb);
  if (residual.rows() == nx && residual.cols() == nb) {
    for (Index j = 0; j < nb; ++j) out[j] = residual.col(j).squaredNorm() / static_cast<double>(nx);
    return out;
  }
  if (residual.rows() != nx * nb || residual.cols() != 1) {
    throw DimensionError("per_xi_mean_square: residual entries", static_cast<std::size_t>(nx * nb),
                         static_cast<std::size_t>(residual.size()));
  }
  for (Index j = 0; j < nb; ++j) out[j] = residual.block(j * nx, 0, nx, 1).squaredNorm() / static_cast<double>(nx);
  return out;
}

}  // namespace das2
