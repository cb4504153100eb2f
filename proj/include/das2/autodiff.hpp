#pragma once

// Batched reverse-mode differentiation over a dual-valued tape.
//
// Every node carries a primal matrix and, when it depends on a seeded input,
// a tangent matrix holding the directional derivative with respect to one input
// coordinate. The reverse sweep propagates adjoints of both channels, so a loss
// built from input derivatives (via tangent_of) can still be differentiated with
// respect to the parameters.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace das2::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class Op : std::uint8_t {
  Input,
  Constant,
  Parameter,
  Add,
  Sub,
  Mul,
  Reciprocal,
  Scale,
  Tanh,
  Exp,
  Log,
  Square,
  MatMul,            // A * B
  MatMulTransposed,  // A * B^T
  Sum,               // all entries -> 1x1
  RowSum,            // n x m -> n x 1
  Broadcast,         // 1x1, 1xm or nx1 -> n x m
  TangentOf,         // primal <- tangent of the operand
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& tangent() const;
  bool has_tangent() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Shorthand for a 1x1 node.
  double scalar() const;

  std::size_t index() const { return index_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

struct Node {
  Op op = Op::Constant;
  std::size_t lhs = 0;
  std::size_t rhs = 0;
  double scalar = 0.0;          // Scale factor
  std::size_t param_offset = 0;  // Parameter nodes
  Matrix value;
  Matrix tangent;  // empty when the node is independent of the seeded input
  bool dual = false;
  bool grad = false;  // depends on a parameter
};

/// Append-only record of elementary operations. Parameters are read from an
/// external flat vector which must outlive the tape and stay unchanged while
/// the tape is in use.
class Tape {
 public:
  explicit Tape(std::span<const double> params = {}) : params_(params) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value);
  /// Input without tangent.
  Var input(Matrix value);
  /// Input whose tangent is the unit vector along `coord` in every row.
  Var seeded_input(Matrix value, Index coord);
  /// Input with an explicit tangent.
  Var input(Matrix value, Matrix tangent);
  /// Row-major block of the parameter vector starting at `offset`.
  Var parameter(std::size_t offset, Index rows, Index cols);

  Var unary(Op op, Var x, double scalar = 0.0);
  Var binary(Op op, Var a, Var b);
  Var reduce(Op op, Var x);
  Var broadcast(Var x, Index rows, Index cols);
  Var tangent_of(Var x);

  const Node& node(std::size_t i) const { return nodes_[i]; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<const double> parameters() const { return params_; }

  /// Gradient of a 1x1 node with respect to every parameter.
  Vector grad_params(Var loss) const;

  /// Re-evaluates every node in recording order from the leaves.
  std::vector<Matrix> replay() const;

 private:
  Var push(Node node);
  void check_owner(Var v) const;

  std::span<const double> params_;
  std::vector<Node> nodes_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(double c, Var a);
Var operator*(Var a, double c);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);

Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var reciprocal(Var x);
Var matmul(Var a, Var b);
/// a * b^T, the natural form for row-batched inputs and (out x in) weights.
Var matmul_transposed(Var a, Var b);
Var sum(Var x);
Var row_sum(Var x);
Var mean(Var x);
/// Primal of the result is the tangent of `x`; the result carries no tangent.
Var tangent_of(Var x);

/// Maximum gradient error of `f` against central differences, normalised by
/// the largest gradient magnitude. `f` returns the loss and, when `grad` is
/// non-null, writes the analytic gradient. Both gradients zero gives 0.
double check_gradient(const std::function<double(const Vector& params, Vector* grad)>& f,
                      const Vector& params, double step = 1e-5);

}  // namespace das2::ad
