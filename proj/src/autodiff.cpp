#include "das2/autodiff.hpp"

#include "das2/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace das2::ad {

namespace {

bool is_unary(Op op) {
  switch (op) {
    case Op::Reciprocal:
    case Op::Scale:
    case Op::Tanh:
    case Op::Exp:
    case Op::Log:
    case Op::Square:
      return true;
    default:
      return false;
  }
}

// First derivative of an elementwise unary op, given input x and output y.
Matrix unary_first_derivative(Op op, double scalar, const Matrix& x, const Matrix& y) {
  switch (op) {
    case Op::Reciprocal:
      return -y.array().square();
    case Op::Scale:
      return Matrix::Constant(x.rows(), x.cols(), scalar);
    case Op::Tanh:
      return 1.0 - y.array().square();
    case Op::Exp:
      return y;
    case Op::Log:
      return x.array().inverse();
    case Op::Square:
      return 2.0 * x.array();
    default:
      throw Error("unary_first_derivative: not a unary op");
  }
}

// Second derivative, given x, y and the first derivative d1.
Matrix unary_second_derivative(Op op, const Matrix& x, const Matrix& y, const Matrix& d1) {
  switch (op) {
    case Op::Reciprocal:
      return 2.0 * y.array().cube();
    case Op::Scale:
      return Matrix::Zero(x.rows(), x.cols());
    case Op::Tanh:
      return -2.0 * y.array() * d1.array();
    case Op::Exp:
      return y;
    case Op::Log:
      return -d1.array().square();
    case Op::Square:
      return Matrix::Constant(x.rows(), x.cols(), 2.0);
    default:
      throw Error("unary_second_derivative: not a unary op");
  }
}

Matrix unary_value(Op op, double scalar, const Matrix& x) {
  switch (op) {
    case Op::Reciprocal:
      return x.array().inverse();
    case Op::Scale:
      return scalar * x;
    case Op::Tanh:
      return x.array().tanh();
    case Op::Exp:
      return x.array().exp();
    case Op::Log:
      return x.array().log();
    case Op::Square:
      return x.array().square();
    default:
      throw Error("unary_value: not a unary op");
  }
}

Matrix broadcast_value(const Matrix& x, Index rows, Index cols) {
  if (x.rows() == rows && x.cols() == cols) return x;
  if (x.rows() == 1 && x.cols() == 1) return Matrix::Constant(rows, cols, x(0, 0));
  if (x.rows() == 1) return x.replicate(rows, 1);
  return x.replicate(1, cols);
}

Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

void accumulate(Matrix& target, const Matrix& delta) {
  if (target.size() == 0) {
    target = delta;
  } else {
    target += delta;
  }
}

// Fills node.value and node.tangent from its operands.
void evaluate(Node& n, const Node* a, const Node* b) {
  n.grad = (a && a->grad) || (b && b->grad);
  const auto tangent_or_zero = [](const Node* x) -> Matrix {
    return x->dual ? x->tangent : Matrix::Zero(x->value.rows(), x->value.cols());
  };
  switch (n.op) {
    case Op::Add:
      n.value = a->value + b->value;
      n.dual = a->dual || b->dual;
      if (n.dual) n.tangent = tangent_or_zero(a) + tangent_or_zero(b);
      break;
    case Op::Sub:
      n.value = a->value - b->value;
      n.dual = a->dual || b->dual;
      if (n.dual) n.tangent = tangent_or_zero(a) - tangent_or_zero(b);
      break;
    case Op::Mul:
      n.value = a->value.cwiseProduct(b->value);
      n.dual = a->dual || b->dual;
      if (n.dual) {
        n.tangent = Matrix::Zero(n.value.rows(), n.value.cols());
        if (a->dual) n.tangent += a->tangent.cwiseProduct(b->value);
        if (b->dual) n.tangent += a->value.cwiseProduct(b->tangent);
      }
      break;
    case Op::MatMul:
      n.value = a->value * b->value;
      n.dual = a->dual || b->dual;
      if (n.dual) {
        n.tangent = Matrix::Zero(n.value.rows(), n.value.cols());
        if (a->dual) n.tangent.noalias() += a->tangent * b->value;
        if (b->dual) n.tangent.noalias() += a->value * b->tangent;
      }
      break;
    case Op::MatMulTransposed:
      n.value.noalias() = a->value * b->value.transpose();
      n.dual = a->dual || b->dual;
      if (n.dual) {
        n.tangent = Matrix::Zero(n.value.rows(), n.value.cols());
        if (a->dual) n.tangent.noalias() += a->tangent * b->value.transpose();
        if (b->dual) n.tangent.noalias() += a->value * b->tangent.transpose();
      }
      break;
    case Op::Sum:
      n.value = Matrix::Constant(1, 1, a->value.sum());
      n.dual = a->dual;
      if (n.dual) n.tangent = Matrix::Constant(1, 1, a->tangent.sum());
      break;
    case Op::RowSum:
      n.value = a->value.rowwise().sum();
      n.dual = a->dual;
      if (n.dual) n.tangent = a->tangent.rowwise().sum();
      break;
    case Op::Broadcast: {
      const Index rows = n.value.rows();
      const Index cols = n.value.cols();
      n.value = broadcast_value(a->value, rows, cols);
      n.dual = a->dual;
      if (n.dual) n.tangent = broadcast_value(a->tangent, rows, cols);
      break;
    }
    case Op::TangentOf:
      n.value = a->tangent;
      n.dual = false;
      break;
    default:
      if (!is_unary(n.op)) throw Error("evaluate: leaf op has no operands");
      n.value = unary_value(n.op, n.scalar, a->value);
      n.dual = a->dual;
      if (n.dual) n.tangent = unary_first_derivative(n.op, n.scalar, a->value, n.value).cwiseProduct(a->tangent);
      break;
  }
}

}  // namespace

const Matrix& Var::value() const { return tape_->node(index_).value; }
const Matrix& Var::tangent() const { return tape_->node(index_).tangent; }
bool Var::has_tangent() const { return tape_->node(index_).dual; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError("Var::scalar: node is not 1x1; entry count", 1, static_cast<std::size_t>(v.size()));
  }
  return v(0, 0);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(Var v) const {
  if (v.tape() != this) throw Error("Tape: operand recorded on a different tape");
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::input(Matrix value) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::seeded_input(Matrix value, Index coord) {
  if (coord < 0 || coord >= value.cols()) {
    throw DimensionError("Tape::seeded_input: coordinate out of range; input width", static_cast<std::size_t>(value.cols()),
                         static_cast<std::size_t>(coord));
  }
  Matrix tangent = Matrix::Zero(value.rows(), value.cols());
  tangent.col(coord).setOnes();
  return input(std::move(value), std::move(tangent));
}

Var Tape::input(Matrix value, Matrix tangent) {
  if (tangent.rows() != value.rows() || tangent.cols() != value.cols()) {
    throw DimensionError("Tape::input: tangent entry count", static_cast<std::size_t>(value.size()),
                         static_cast<std::size_t>(tangent.size()));
  }
  Node n;
  n.op = Op::Input;
  n.value = std::move(value);
  n.tangent = std::move(tangent);
  n.dual = true;
  return push(std::move(n));
}

Var Tape::parameter(std::size_t offset, Index rows, Index cols) {
  const auto count = static_cast<std::size_t>(rows * cols);
  if (offset + count > params_.size()) {
    throw DimensionError("Tape::parameter: block exceeds parameter vector", params_.size(), offset + count);
  }
  Node n;
  n.op = Op::Parameter;
  n.param_offset = offset;
  n.grad = true;
  n.value = Eigen::Map<const Matrix>(params_.data() + offset, rows, cols);
  return push(std::move(n));
}

Var Tape::unary(Op op, Var x, double scalar) {
  check_owner(x);
  if (!is_unary(op)) throw Error("Tape::unary: op is not unary");
  Node n;
  n.op = op;
  n.lhs = x.index();
  n.scalar = scalar;
  evaluate(n, &nodes_[x.index()], nullptr);
  return push(std::move(n));
}

Var Tape::broadcast(Var x, Index rows, Index cols) {
  check_owner(x);
  const Index r = x.rows();
  const Index c = x.cols();
  const bool ok = (r == rows && c == cols) || (r == 1 && c == 1) || (r == 1 && c == cols) || (c == 1 && r == rows);
  if (!ok) {
    throw DimensionError("Tape::broadcast: incompatible shape; target entries", static_cast<std::size_t>(rows * cols),
                         static_cast<std::size_t>(r * c));
  }
  if (r == rows && c == cols) return x;
  Node n;
  n.op = Op::Broadcast;
  n.lhs = x.index();
  n.value.resize(rows, cols);
  evaluate(n, &nodes_[x.index()], nullptr);
  return push(std::move(n));
}

Var Tape::binary(Op op, Var a, Var b) {
  check_owner(a);
  check_owner(b);
  Node n;
  n.op = op;
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Index rows = std::max(a.rows(), b.rows());
      const Index cols = std::max(a.cols(), b.cols());
      a = broadcast(a, rows, cols);
      b = broadcast(b, rows, cols);
      break;
    }
    case Op::MatMul:
      if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions", static_cast<std::size_t>(a.cols()),
                             static_cast<std::size_t>(b.rows()));
      }
      break;
    case Op::MatMulTransposed:
      if (a.cols() != b.cols()) {
        throw DimensionError("matmul_transposed: inner dimensions", static_cast<std::size_t>(a.cols()),
                             static_cast<std::size_t>(b.cols()));
      }
      break;
    default:
      throw Error("Tape::binary: op is not binary");
  }
  n.lhs = a.index();
  n.rhs = b.index();
  evaluate(n, &nodes_[a.index()], &nodes_[b.index()]);
  return push(std::move(n));
}

Var Tape::reduce(Op op, Var x) {
  check_owner(x);
  if (op != Op::Sum && op != Op::RowSum) throw Error("Tape::reduce: op is not a reduction");
  Node n;
  n.op = op;
  n.lhs = x.index();
  evaluate(n, &nodes_[x.index()], nullptr);
  return push(std::move(n));
}

Var Tape::tangent_of(Var x) {
  check_owner(x);
  if (!x.has_tangent()) throw Error("tangent_of: operand does not depend on a seeded input");
  Node n;
  n.op = Op::TangentOf;
  n.lhs = x.index();
  evaluate(n, &nodes_[x.index()], nullptr);
  return push(std::move(n));
}

std::vector<Matrix> Tape::replay() const {
  std::vector<Node> fresh;
  fresh.reserve(nodes_.size());
  for (const Node& original : nodes_) {
    Node n;
    n.op = original.op;
    n.lhs = original.lhs;
    n.rhs = original.rhs;
    n.scalar = original.scalar;
    n.param_offset = original.param_offset;
    switch (original.op) {
      case Op::Input:
      case Op::Constant:
        n.value = original.value;
        n.tangent = original.tangent;
        n.dual = original.dual;
        break;
      case Op::Parameter:
        n.value = Eigen::Map<const Matrix>(params_.data() + n.param_offset, original.value.rows(),
                                           original.value.cols());
        n.grad = true;
        break;
      case Op::Broadcast:
        n.value.resize(original.value.rows(), original.value.cols());
        evaluate(n, &fresh[n.lhs], nullptr);
        break;
      default:
        evaluate(n, &fresh[n.lhs], &fresh[n.rhs]);
        break;
    }
    fresh.push_back(std::move(n));
  }
  std::vector<Matrix> values;
  values.reserve(fresh.size());
  for (Node& n : fresh) values.push_back(std::move(n.value));
  return values;
}

Vector Tape::grad_params(Var loss) const {
  if (loss.tape() != this) throw Error("grad_params: loss recorded on a different tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw DimensionError("grad_params: loss node must be scalar; entry count", 1,
                         static_cast<std::size_t>(loss.value().size()));
  }
  Vector grad = Vector::Zero(static_cast<Index>(params_.size()));
  std::vector<Matrix> pbar(loss.index() + 1);
  std::vector<Matrix> tbar(loss.index() + 1);
  pbar[loss.index()] = Matrix::Ones(1, 1);

  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.grad || (pbar[i].size() == 0 && tbar[i].size() == 0)) continue;
    const bool has_pbar = pbar[i].size() != 0;
    const bool has_tbar = n.dual && tbar[i].size() != 0;
    const Matrix& gp = pbar[i];
    const Matrix& gt = tbar[i];

    switch (n.op) {
      case Op::Input:
      case Op::Constant:
        break;
      case Op::Parameter:
        if (has_pbar) {
          Eigen::Map<Matrix>(grad.data() + n.param_offset, n.value.rows(), n.value.cols()) += gp;
        }
        break;
      case Op::Add:
      case Op::Sub: {
        const double sign = n.op == Op::Add ? 1.0 : -1.0;
        const Node& a = nodes_[n.lhs];
        const Node& b = nodes_[n.rhs];
        if (has_pbar) {
          if (a.grad) accumulate(pbar[n.lhs], gp);
          if (b.grad) accumulate(pbar[n.rhs], sign * gp);
        }
        if (has_tbar) {
          if (a.dual && a.grad) accumulate(tbar[n.lhs], gt);
          if (b.dual && b.grad) accumulate(tbar[n.rhs], sign * gt);
        }
        break;
      }
      case Op::Mul: {
        const Node& a = nodes_[n.lhs];
        const Node& b = nodes_[n.rhs];
        if (a.grad) {
          Matrix da = Matrix::Zero(a.value.rows(), a.value.cols());
          if (has_pbar) da += b.value.cwiseProduct(gp);
          if (has_tbar) {
            if (b.dual) da += b.tangent.cwiseProduct(gt);
            if (a.dual) accumulate(tbar[n.lhs], b.value.cwiseProduct(gt));
          }
          accumulate(pbar[n.lhs], da);
        }
        if (b.grad) {
          Matrix db = Matrix::Zero(b.value.rows(), b.value.cols());
          if (has_pbar) db += a.value.cwiseProduct(gp);
          if (has_tbar) {
            if (a.dual) db += a.tangent.cwiseProduct(gt);
            if (b.dual) accumulate(tbar[n.rhs], a.value.cwiseProduct(gt));
          }
          accumulate(pbar[n.rhs], db);
        }
        break;
      }
      case Op::MatMul: {
        const Node& a = nodes_[n.lhs];
        const Node& b = nodes_[n.rhs];
        if (a.grad) {
          Matrix da = Matrix::Zero(a.value.rows(), a.value.cols());
          if (has_pbar) da.noalias() += gp * b.value.transpose();
          if (has_tbar) {
            if (b.dual) da.noalias() += gt * b.tangent.transpose();
            if (a.dual) accumulate(tbar[n.lhs], gt * b.value.transpose());
          }
          accumulate(pbar[n.lhs], da);
        }
        if (b.grad) {
          Matrix db = Matrix::Zero(b.value.rows(), b.value.cols());
          if (has_pbar) db.noalias() += a.value.transpose() * gp;
          if (has_tbar) {
            if (a.dual) db.noalias() += a.tangent.transpose() * gt;
            if (b.dual) accumulate(tbar[n.rhs], a.value.transpose() * gt);
          }
          accumulate(pbar[n.rhs], db);
        }
        break;
      }
      case Op::MatMulTransposed: {
        // Y = A B^T
        const Node& a = nodes_[n.lhs];
        const Node& b = nodes_[n.rhs];
        if (a.grad) {
          Matrix da = Matrix::Zero(a.value.rows(), a.value.cols());
          if (has_pbar) da.noalias() += gp * b.value;
          if (has_tbar) {
            if (b.dual) da.noalias() += gt * b.tangent;
            if (a.dual) accumulate(tbar[n.lhs], gt * b.value);
          }
          accumulate(pbar[n.lhs], da);
        }
        if (b.grad) {
          Matrix db = Matrix::Zero(b.value.rows(), b.value.cols());
          if (has_pbar) db.noalias() += gp.transpose() * a.value;
          if (has_tbar) {
            if (a.dual) db.noalias() += gt.transpose() * a.tangent;
            if (b.dual) accumulate(tbar[n.rhs], gt.transpose() * a.value);
          }
          accumulate(pbar[n.rhs], db);
        }
        break;
      }
      case Op::Sum: {
        const Node& a = nodes_[n.lhs];
        if (has_pbar) accumulate(pbar[n.lhs], Matrix::Constant(a.value.rows(), a.value.cols(), gp(0, 0)));
        if (has_tbar && a.dual) {
          accumulate(tbar[n.lhs], Matrix::Constant(a.value.rows(), a.value.cols(), gt(0, 0)));
        }
        break;
      }
      case Op::RowSum: {
        const Node& a = nodes_[n.lhs];
        if (has_pbar) accumulate(pbar[n.lhs], gp.replicate(1, a.value.cols()));
        if (has_tbar && a.dual) accumulate(tbar[n.lhs], gt.replicate(1, a.value.cols()));
        break;
      }
      case Op::Broadcast: {
        const Node& a = nodes_[n.lhs];
        if (has_pbar) accumulate(pbar[n.lhs], reduce_to(gp, a.value.rows(), a.value.cols()));
        if (has_tbar && a.dual) accumulate(tbar[n.lhs], reduce_to(gt, a.value.rows(), a.value.cols()));
        break;
      }
      case Op::TangentOf:
        if (has_pbar) accumulate(tbar[n.lhs], gp);
        break;
      default: {
        const Node& a = nodes_[n.lhs];
        const Matrix d1 = unary_first_derivative(n.op, n.scalar, a.value, n.value);
        Matrix da = has_pbar ? Matrix(d1.cwiseProduct(gp)) : Matrix::Zero(a.value.rows(), a.value.cols());
        if (has_tbar) {
          da += unary_second_derivative(n.op, a.value, n.value, d1).cwiseProduct(a.tangent).cwiseProduct(gt);
          accumulate(tbar[n.lhs], d1.cwiseProduct(gt));
        }
        accumulate(pbar[n.lhs], da);
        break;
      }
    }
  }
  return grad;
}

Var operator+(Var a, Var b) { return a.tape()->binary(Op::Add, a, b); }
Var operator-(Var a, Var b) { return a.tape()->binary(Op::Sub, a, b); }
Var operator*(Var a, Var b) { return a.tape()->binary(Op::Mul, a, b); }
Var operator/(Var a, Var b) { return a * reciprocal(b); }
Var operator-(Var a) { return a.tape()->unary(Op::Scale, a, -1.0); }
Var operator*(double c, Var a) { return a.tape()->unary(Op::Scale, a, c); }
Var operator*(Var a, double c) { return c * a; }
Var operator+(Var a, double c) { return a + a.tape()->constant(c); }
Var operator+(double c, Var a) { return a + c; }
Var operator-(Var a, double c) { return a + (-c); }
Var operator-(double c, Var a) { return a.tape()->constant(c) - a; }

Var tanh(Var x) { return x.tape()->unary(Op::Tanh, x); }
Var exp(Var x) { return x.tape()->unary(Op::Exp, x); }
Var log(Var x) { return x.tape()->unary(Op::Log, x); }
Var square(Var x) { return x.tape()->unary(Op::Square, x); }
Var reciprocal(Var x) { return x.tape()->unary(Op::Reciprocal, x); }
Var matmul(Var a, Var b) { return a.tape()->binary(Op::MatMul, a, b); }
Var matmul_transposed(Var a, Var b) { return a.tape()->binary(Op::MatMulTransposed, a, b); }

Var sum(Var x) { return x.tape()->reduce(Op::Sum, x); }
Var row_sum(Var x) { return x.tape()->reduce(Op::RowSum, x); }

Var mean(Var x) { return (1.0 / static_cast<double>(x.value().size())) * sum(x); }

Var tangent_of(Var x) { return x.tape()->tangent_of(x); }

double check_gradient(const std::function<double(const Vector&, Vector*)>& f, const Vector& params, double step) {
  Vector analytic(params.size());
  f(params, &analytic);
  Vector numeric(params.size());
  Vector probe = params;
  for (Index k = 0; k < params.size(); ++k) {
    const double saved = probe[k];
    probe[k] = saved + step;
    const double up = f(probe, nullptr);
    probe[k] = saved - step;
    const double down = f(probe, nullptr);
    probe[k] = saved;
    numeric[k] = (up - down) / (2.0 * step);
  }
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  if (params.size() == 0 || scale == 0.0) return 0.0;
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

}  // namespace das2::ad
