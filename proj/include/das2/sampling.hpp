#pragma once

#include "das2/flow.hpp"
#include "das2/random.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace das2 {

/// Collocation points with the adaptivity stage that produced each one and,
/// in replace mode, importance weights.
struct TrainingSet {
  Matrix points;
  std::vector<int> stages;
  Vector weights;  // empty when unweighted

  Index size() const { return points.rows(); }
  bool weighted() const { return weights.size() != 0; }

  static TrainingSet from_points(Matrix points, int stage);
  /// Throws when a point lies outside `domain`, tags decrease, or weights are
  /// not strictly positive with one entry per point.
  void validate(const BoxDomain& domain) const;

  /// CSV with columns x_0.., xi_0.., stage, weight (1 when unweighted).
  void write_csv(const std::filesystem::path& path, Index spatial_dim) const;
};

enum class RefineMode { grow, replace };

Matrix uniform_sample(const BoxDomain& domain, Index n, RngStream& rng);

/// Van der Corput radical inverse of `index` in `base`.
double radical_inverse(std::uint64_t base, std::uint64_t index);

/// Halton points scaled to the box; element i uses index i + 1 + skip.
Matrix halton_sample(const BoxDomain& domain, Index n, Index skip = 0);

/// Indices of the n largest squared residuals, ties broken by lower index.
std::vector<Index> rar_select(const Vector& residuals, Index n);

/// The selected candidate rows, in the order returned by the index overload.
Matrix rar_select(const Matrix& candidates, const std::function<Vector(const Matrix&)>& residual_fn, Index n);

/// 1 on Omega, decaying linearly to 0 on the boundary of B; per-dimension
/// factors combined by minimum. Throws outside the closed B.
double cutoff_h(const Eigen::Ref<const Eigen::RowVectorXd>& point, const BoxDomain& omega);
Vector cutoff_h_rows(const Matrix& points, const BoxDomain& omega);

/// grow: S_k followed by S_g, unweighted. replace: S_g alone with weights
/// 1 / density. Tags of S_g must exceed every tag in S_k.
TrainingSet refine_training_set(const TrainingSet& current, const TrainingSet& generated, RefineMode mode,
                                const std::optional<Vector>& density = std::nullopt);

}  // namespace das2
