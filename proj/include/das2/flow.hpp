#pragma once

#include "das2/adam.hpp"
#include "das2/autodiff.hpp"
#include "das2/random.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace das2 {

using ad::Index;
using ad::Matrix;
using ad::Vector;

/// Axis-aligned domain Omega = [lower, upper] together with the enlarged box
/// B obtained by widening every side by `margin` times its length.
class BoxDomain {
 public:
  BoxDomain() = default;
  BoxDomain(Vector lower, Vector upper, double margin = 0.01);

  Index dim() const { return lower_.size(); }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  double margin() const { return margin_; }
  Vector outer_lower() const;
  Vector outer_upper() const;
  double volume() const;

  /// Closed membership in Omega.
  bool contains(const Eigen::Ref<const Eigen::RowVectorXd>& point) const;
  /// Open membership in B.
  bool inside_outer(const Eigen::Ref<const Eigen::RowVectorXd>& point) const;

 private:
  Vector lower_;
  Vector upper_;
  double margin_ = 0.01;
};

struct FlowConfig {
  Index K = 2;
  Index L = 6;
  Index hidden = 24;
  double clamp = 1.5;
  // Standard deviation of the output-layer and scale-bias initialisation.
  // Zero gives the identity flow.
  double init_scale = 0.0;
};

/// Offsets of one affine coupling layer plus the scale-bias layer after it.
struct CouplingBlock {
  Index outer = 0;  // outer block index
  Index inner = 0;  // position inside the outer block
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  std::size_t ws = 0, bs = 0, wt = 0, bt = 0;
  std::size_t log_scale = 0, bias = 0;
  Matrix cond_mask;   // 1 x d
  Matrix trans_mask;  // 1 x d
  Matrix active_mask; // 1 x d
};

/// Invertible density model on the open box B: a fixed logit transport onto
/// R^d followed by K outer blocks. Each outer block reverses the active
/// coordinates, applies L affine couplings each followed by a scale-bias
/// layer, and then freezes its trailing active coordinates so later blocks
/// only transform the leading ones (Knothe-Rosenblatt ordering). The latent
/// law is the standard normal.
class FlowModel {
 public:
  static FlowModel init(const BoxDomain& box, const FlowConfig& config, std::uint64_t seed);

  Index dim() const { return box_.dim(); }
  const FlowConfig& config() const { return config_; }
  const BoxDomain& box() const { return box_; }
  /// Number of trailing active coordinates frozen after each outer block.
  const std::vector<Index>& frozen_schedule() const { return frozen_schedule_; }
  Index active_dims(Index outer) const;
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }

  struct Forward {
    Matrix z;
    Vector logdet;
  };

  /// Map points of B to latent space with the log-determinant of the Jacobian.
  Forward forward(const Matrix& points) const;
  /// Map latent points back into B.
  Matrix inverse(const Matrix& z) const;
  Vector log_pdf(const Matrix& points) const;

  /// Records log p(points) (n x 1) on a tape reading this flow's parameters.
  ad::Var log_density(ad::Tape& tape, const Matrix& points) const;

  /// n draws; with `restrict`, only points inside Omega are kept, giving up
  /// after max_attempts * n latent draws.
  Matrix sample(Index n, RngStream& rng, bool restrict = false, double max_attempts = 50.0,
                double* acceptance_rate = nullptr) const;

  nlohmann::json to_json() const;
  static FlowModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static FlowModel load(const std::filesystem::path& path);

 private:
  FlowModel() = default;
  void build_layout();
  // Taped latent map on logit coordinates; accumulates layer log-dets into `logdet`.
  ad::Var layers_forward(ad::Tape& tape, ad::Var y, ad::Var& logdet) const;
  // Logit transport from B; throws when a point is not strictly inside B.
  Matrix box_to_real(const Matrix& points, Vector& logdet) const;
  Matrix reversal(Index outer) const;

  BoxDomain box_;
  FlowConfig config_;
  std::vector<Index> frozen_schedule_;
  std::vector<CouplingBlock> blocks_;
  Vector params_;
};

/// Cross entropy between an unnormalised target and the flow, estimated by
/// importance sampling with a frozen proposal:
///   -(1/m) sum_i w_i log p_flow(x_i),  w_i = target_i / p_proposal(x_i),
/// with optional self-normalisation w_i <- w_i m / sum w. Only the flow's
/// parameters receive gradients.
ad::Var ce_loss(ad::Tape& tape, const FlowModel& flow, const Matrix& batch, const Vector& target,
                const Vector& proposal_log_pdf, bool self_normalize = true);

/// Convenience overload evaluating the proposal density itself.
double ce_loss(const FlowModel& flow, const FlowModel& proposal, const std::function<Vector(const Matrix&)>& target,
               const Matrix& batch, bool self_normalize = true);

struct FlowTrainConfig {
  Index epochs = 100;
  Index batch = 500;
  Index pool = 2000;  // proposal draws per training call
  double lr = 1e-3;
  bool self_normalize = true;
};

struct FlowTrainResult {
  FlowModel flow;
  std::vector<double> epoch_losses;
};

/// Minimises ce_loss over a pool drawn once from the frozen proposal. Each
/// epoch is one Adam step on the next `batch` points of the pool, which is
/// reshuffled whenever it is used up.
FlowTrainResult train_flow(FlowModel flow, const FlowModel& proposal,
                           const std::function<Vector(const Matrix&)>& target, const FlowTrainConfig& config,
                           RngStream& rng);

/// Same, with a caller-supplied pool and precomputed target / proposal log-density.
FlowTrainResult train_flow_on_pool(FlowModel flow, const Matrix& pool, const Vector& target,
                                   const Vector& proposal_log_pdf, const FlowTrainConfig& config, RngStream& rng);

}  // namespace das2
