#pragma once

#include "das2/flow.hpp"
#include "das2/nets.hpp"
#include "das2/problems.hpp"
#include "das2/sampling.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace das2 {

enum class SamplingMode { joint, marginal };
enum class Baseline { none, uniform, qrs, rar };

std::string to_string(SamplingMode mode);
std::string to_string(RefineMode mode);
std::string to_string(Baseline baseline);

struct AdaptiveConfig {
  Index n_adaptive = 4;    // adaptivity stages
  Index epochs = 500;      // N_e, per stage
  Index flow_epochs = -1;  // -1: same as epochs
  Index n_r = 500;         // new points per stage; also |S_0|
  Index batch = 500;       // m
  Index m_x = 100;         // spatial grid size, marginal mode
  Index flow_pool = 2000;  // proposal draws per flow stage
  double gamma = 0.0;
  double lr = 1e-3;
  double flow_lr = 1e-3;
  double box_margin = 0.01;
  double max_attempts = 50.0;
  bool self_normalize = true;
  Index val_every = 50;  // validation period in surrogate epochs; 0 = stage ends only
  std::uint64_t seed = 0;
  SamplingMode mode = SamplingMode::joint;
  RefineMode refine = RefineMode::grow;
  Baseline baseline = Baseline::none;

  Index flow_epoch_count() const { return flow_epochs < 0 ? epochs : flow_epochs; }
  /// Throws on non-positive counts, negative gamma, or a learning rate <= 0.
  void validate() const;
};

/// Boundary samples with prescribed values for the penalty term.
struct BoundaryBatch {
  Matrix points;
  Vector values;
};

/// (1/N) sum_i w_i r_i^2 + gamma (1/N_b) sum_j (u(p_j) - g_j)^2, weights 1
/// when `weights` is null. Throws on an empty batch.
ad::Var empirical_loss(ad::Tape& tape, const Surrogate& s, const Problem& problem, const Matrix& points,
                       const Vector* weights = nullptr, double gamma = 0.0, const BoundaryBatch* boundary = nullptr);

/// Mean over xi of the spatially averaged squared residual on `x_grid`,
/// optionally weighted per xi.
ad::Var marginal_loss(ad::Tape& tape, const Surrogate& s, const Problem& problem, const Matrix& xi_batch,
                      const Matrix& x_grid, const Vector* weights = nullptr);

/// Evenly spaced column of n points on [lower, upper], endpoints included.
Matrix linspace_column(double lower, double upper, Index n);

/// Reference values on the product of a spatial grid and a set of parameters.
struct ValidationSet {
  Matrix x_grid;     // n_x x 1
  Matrix xi;         // n_xi x d
  Matrix reference;  // n_xi x n_x

  Index size() const { return x_grid.rows() * xi.rows(); }
};

/// Tensor grid over Omega_s x Omega_p (param_ode only), exact reference.
ValidationSet tensor_grid_validation(const Problem& problem, Index nx, Index nxi);

/// n_uniform parameters uniform in Omega_p plus n_ball inside the ball of
/// radius 0.5 about (0.5, .., 0.5) (by rejection from its bounding box),
/// each paired with an nx-point x grid; reference from rk45_oracle.
ValidationSet mixed_validation(const Problem& problem, Index n_uniform, Index n_ball, Index nx, std::uint64_t seed);

/// Surrogate values on the validation product, n_xi x n_x.
Matrix evaluate_product(const Surrogate& s, const Matrix& x_grid, const Matrix& xi);

struct GridError {
  double mse = 0.0;
  double rel_l2 = 0.0;
};

/// Throws on empty input, mismatched shapes, or a zero reference norm.
GridError evaluate_grid(const Matrix& prediction, const Matrix& reference);
GridError evaluate_grid(const Surrogate& s, const ValidationSet& validation);

struct MetricRow {
  int stage = 0;
  Index epoch = 0;  // 1-based within the stage
  std::string phase;  // "surrogate" or "flow"
  double loss = 0.0;
  std::optional<GridError> validation;
  Index n_points = 0;
  double wall_ms = 0.0;
};

struct StageRecord {
  int stage = 0;
  Index n_points = 0;
  /// Weighted empirical loss over the whole stage set after training.
  double set_loss = 0.0;
  GridError validation;
  /// Acceptance of the refinement draw that closed this stage (NaN when none).
  double acceptance_rate = 0.0;
};

struct RunRecord {
  std::vector<MetricRow> rows;
  std::vector<StageRecord> stages;

  Index count(const std::string& phase) const;
  /// stage,epoch,phase,loss,val_mse,val_rel_l2,n_points,wall_ms. Wall time is
  /// left blank unless `with_wall_time`, keeping the file reproducible.
  void write_metrics_csv(const std::filesystem::path& path, bool with_wall_time = false) const;
  void write_stages_csv(const std::filesystem::path& path) const;
};

struct RunResult {
  Surrogate surrogate;
  std::optional<FlowModel> flow;
  RunRecord record;
  TrainingSet training_set;
  GridError final_error;
};

/// Runs N_e epochs of Adam over the set, each a shuffled pass in minibatches
/// of size m, starting from `s`. Returns per-epoch mean minibatch losses.
/// `x_grid` selects the marginal loss. `on_epoch(epoch, loss)` is called after
/// every epoch.
std::vector<double> train_surrogate_stage(Surrogate& s, const TrainingSet& set, const Problem& problem,
                                          const AdaptiveConfig& config, RngStream& rng,
                                          const Matrix* x_grid = nullptr,
                                          const std::function<void(Index, double)>& on_epoch = {});

/// Weighted loss over the whole set, evaluated in chunks.
double set_loss(const Surrogate& s, const TrainingSet& set, const Problem& problem, const AdaptiveConfig& config,
                const Matrix* x_grid = nullptr);

/// Adaptive sampling with the flow fitted to r^2 h over the joint domain.
RunResult das2_joint(const Problem& problem, Surrogate surrogate, const FlowConfig& flow_config,
                     const AdaptiveConfig& config, const ValidationSet& validation, std::ostream* log = nullptr);

/// Adaptive sampling over the parameter domain with the flow fitted to the
/// spatially averaged squared residual.
RunResult das2_marginal(const Problem& problem, Surrogate surrogate, const FlowConfig& flow_config,
                        const AdaptiveConfig& config, const ValidationSet& validation, std::ostream* log = nullptr);

/// Uniform, Halton or residual-refined training with the budget of the
/// matching adaptive run: N_adaptive stages of N_e epochs, N_adaptive * n_r
/// points in total.
RunResult run_baseline(const Problem& problem, Surrogate surrogate, const AdaptiveConfig& config,
                       const ValidationSet& validation, std::ostream* log = nullptr);

/// Dispatches on config.baseline and config.mode.
RunResult run_adaptive(const Problem& problem, Surrogate surrogate, const FlowConfig& flow_config,
                       const AdaptiveConfig& config, const ValidationSet& validation, std::ostream* log = nullptr);

}  // namespace das2
