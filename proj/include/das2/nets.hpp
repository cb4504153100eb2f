#pragma once

#include "das2/autodiff.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace das2 {

using ad::Index;
using ad::Matrix;
using ad::Vector;

enum class SurrogateKind { mlp, branch_trunk };

/// Hard-constraint wrapper enforcing the condition at x = 0.
struct Ansatz {
  enum class Kind { none, ic_shift, ic_zero };
  Kind kind = Kind::none;
  double u0 = 0.0;

  static Ansatz none() { return {}; }
  static Ansatz ic_shift(double u0) { return {Kind::ic_shift, u0}; }
  static Ansatz ic_zero() { return {Kind::ic_zero, 0.0}; }
};

/// Offsets of one dense layer inside a flat parameter vector. The weight
/// block is (out x in) row-major, followed by the bias.
struct DenseLayer {
  Index in = 0;
  Index out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

/// Fully connected tanh network over a slice of a flat parameter vector.
/// The last layer is linear.
class DenseStack {
 public:
  DenseStack() = default;
  /// Lays the stack out starting at `offset`; advances `offset` past it.
  DenseStack(std::vector<Index> sizes, std::size_t& offset);

  const std::vector<Index>& sizes() const { return sizes_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  Index input_dim() const { return sizes_.front(); }
  Index output_dim() const { return sizes_.back(); }
  std::size_t parameter_count() const;

  ad::Var forward(ad::Tape& tape, ad::Var input) const;
  Matrix evaluate(std::span<const double> params, const Matrix& input) const;
  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  void init_xavier(std::span<double> params, std::mt19937_64& rng) const;

 private:
  std::vector<Index> sizes_;
  std::vector<DenseLayer> layers_;
};

/// Approximate parametric solution u(x, xi). Points are rows laid out as
/// [x_0 .. x_{ns-1}, xi_0 .. xi_{d-1}].
class Surrogate {
 public:
  static Surrogate mlp(std::vector<Index> layer_sizes, std::uint64_t seed, Ansatz ansatz = {});
  /// Trunk takes x, branch takes xi; both must end in the same width l.
  static Surrogate branch_trunk(std::vector<Index> trunk_sizes, std::vector<Index> branch_sizes,
                                std::uint64_t seed, Ansatz ansatz = {});

  SurrogateKind kind() const { return kind_; }
  const Ansatz& ansatz() const { return ansatz_; }
  Index input_dim() const;
  Index spatial_dim() const;
  Index param_dim() const { return input_dim() - spatial_dim(); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }
  const DenseStack& net() const { return nets_.front(); }
  const DenseStack& trunk() const { return nets_.at(0); }
  const DenseStack& branch() const { return nets_.at(1); }
  std::size_t b0_offset() const { return b0_offset_; }

  /// Records u on the tape for a batch of points. With `seed_coord`, the
  /// result carries du/d(point[seed_coord]) in its tangent channel.
  ad::Var forward(ad::Tape& tape, const Matrix& points, std::optional<Index> seed_coord = std::nullopt) const;

  /// Records u on the product set x_grid x xi_batch, seeded along x.
  /// branch_trunk returns an (n_x x n_xi) node; mlp returns an (n_xi * n_x) x 1
  /// column ordered with xi outermost.
  ad::Var forward_product(ad::Tape& tape, const Matrix& x_grid, const Matrix& xi_batch) const;

  /// Plain (untaped) evaluation of u at each row.
  Vector evaluate(const Matrix& points) const;
  /// Untaped network output before the ansatz.
  Vector evaluate_raw(const Matrix& points) const;

  nlohmann::json to_json() const;
  static Surrogate from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Surrogate load(const std::filesystem::path& path);

 private:
  Surrogate() = default;
  ad::Var raw_forward(ad::Tape& tape, const Matrix& points, std::optional<Index> seed_coord) const;
  ad::Var wrap(ad::Tape& tape, ad::Var raw, ad::Var x) const;

  SurrogateKind kind_ = SurrogateKind::mlp;
  Ansatz ansatz_;
  std::vector<DenseStack> nets_;
  std::size_t b0_offset_ = 0;
  Vector params_;
};

/// u_theta at a single point together with the tape that produced it.
struct Evaluation {
  std::unique_ptr<ad::Tape> tape;
  ad::Var output;
  double value = 0.0;
};

Evaluation forward_eval(const Surrogate& net, std::span<const double> point);
/// Derivative of u with respect to input coordinate `coord`, as a taped node
/// that remains differentiable with respect to the parameters.
Evaluation grad_input(const Surrogate& net, std::span<const double> point, Index coord);

double mlp_eval(const Surrogate& s, std::span<const double> point);
double branch_trunk_eval(const Surrogate& s, double x, std::span<const double> xi);
/// ic_shift(u0): u0 + x * raw; ic_zero: x * raw; none: raw.
double apply_ansatz(const Surrogate& s, double raw, double x);

}  // namespace das2
