#include "das2/trainer.hpp"

#include "das2/error.hpp"
#include "das2/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

namespace das2 {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& order, Index start, Index count) {
  Matrix out(count, m.cols());
  for (Index i = 0; i < count; ++i) out.row(i) = m.row(order[static_cast<std::size_t>(start + i)]);
  return out;
}

Vector gather(const Vector& v, const std::vector<Index>& order, Index start, Index count) {
  Vector out(count);
  for (Index i = 0; i < count; ++i) out[i] = v[order[static_cast<std::size_t>(start + i)]];
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::span<const double> view(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

/// Uniform draws strictly inside the enlarged box of `domain`.
Matrix uniform_in_outer(const BoxDomain& domain, Index n, RngStream& rng) {
  const BoxDomain outer(domain.outer_lower(), domain.outer_upper(), domain.margin());
  Matrix pts = uniform_sample(outer, n, rng);
  for (Index i = 0; i < n; ++i) {
    while (!domain.inside_outer(pts.row(i))) pts.row(i) = uniform_sample(outer, 1, rng).row(0);
  }
  return pts;
}

Matrix spatial_grid(const Problem& problem, Index m_x) {
  if (problem.spatial_dim() != 1) {
    throw DimensionError("marginal mode: spatial dimension", 1, static_cast<std::size_t>(problem.spatial_dim()));
  }
  return linspace_column(problem.spatial.lower()[0], problem.spatial.upper()[0], m_x);
}

/// Squared residual (joint) or spatially averaged squared residual (marginal) per row.
Vector squared_residual(const Problem& problem, const Surrogate& s, const Matrix& points, const Matrix* x_grid) {
  if (x_grid) return problem.marginal_residual_values(s, points, *x_grid);
  return problem.residual_values(s, points).array().square().matrix();
}

struct StageLogger {
  std::ostream* log;
  const char* label;

  void operator()(const StageRecord& st) const {
    if (!log) return;
    char buf[256];
    std::snprintf(buf, sizeof buf, "[%s] stage %d: |S| = %lld, set loss %.4e, val mse %.4e, rel l2 %.4e", label,
                  st.stage, static_cast<long long>(st.n_points), st.set_loss, st.validation.mse, st.validation.rel_l2);
    *log << buf;
    if (!std::isnan(st.acceptance_rate)) *log << ", acceptance " << st.acceptance_rate;
    *log << std::endl;
  }
};

/// Trains one stage, appending surrogate rows and returning the stage record
/// without acceptance information.
StageRecord run_surrogate_stage(Surrogate& s, const TrainingSet& set, const Problem& problem,
                                const AdaptiveConfig& config, const ValidationSet& validation, const Matrix* x_grid,
                                int stage, RunRecord& record) {
  RngStream rng(config.seed, 100 + static_cast<std::uint64_t>(stage));
  std::optional<GridError> last;
  auto tick = Clock::now();
  train_surrogate_stage(s, set, problem, config, rng, x_grid, [&](Index epoch, double loss) {
    MetricRow row;
    row.stage = stage;
    row.epoch = epoch;
    row.phase = "surrogate";
    row.loss = loss;
    row.n_points = set.size();
    const bool due = epoch == config.epochs || (config.val_every > 0 && epoch % config.val_every == 0);
    if (due) {
      last = evaluate_grid(s, validation);
      row.validation = last;
    }
    row.wall_ms = ms_since(tick);
    tick = Clock::now();
    record.rows.push_back(std::move(row));
  });
  StageRecord st;
  st.stage = stage;
  st.n_points = set.size();
  st.set_loss = set_loss(s, set, problem, config, x_grid);
  st.validation = last ? *last : evaluate_grid(s, validation);
  st.acceptance_rate = std::numeric_limits<double>::quiet_NaN();
  return st;
}

RunResult adaptive_loop(const Problem& problem, Surrogate surrogate, const FlowConfig& flow_config,
                        const AdaptiveConfig& config, const ValidationSet& validation, std::ostream* log) {
  config.validate();
  problem.check_surrogate(surrogate);
  const bool marginal = config.mode == SamplingMode::marginal;
  const BoxDomain omega = marginal ? problem.param_domain(config.box_margin) : problem.joint_domain(config.box_margin);
  const Matrix x_grid = marginal ? spatial_grid(problem, config.m_x) : Matrix();
  const Matrix* grid = marginal ? &x_grid : nullptr;
  const StageLogger logger{log, marginal ? "das2-marginal" : "das2-joint"};

  FlowModel flow = FlowModel::init(omega, flow_config, derive_seed(config.seed, 2));
  RngStream init_rng(config.seed, 1);
  TrainingSet set = TrainingSet::from_points(uniform_sample(omega, config.n_r, init_rng), 0);
  if (config.refine == RefineMode::replace) set.weights = Vector::Constant(set.size(), omega.volume());

  RunRecord record;
  bool uniform_proposal = true;
  for (Index k = 0; k < config.n_adaptive; ++k) {
    const int stage = static_cast<int>(k);
    StageRecord st = run_surrogate_stage(surrogate, set, problem, config, validation, grid, stage, record);

    // Fit the flow to the residual-induced density, importance sampling from
    // the previous stage's flow (uniform on B before the first fit).
    RngStream flow_rng(config.seed, 200 + static_cast<std::uint64_t>(k));
    Matrix pool;
    Vector proposal_log_pdf;
    if (uniform_proposal) {
      pool = uniform_in_outer(omega, config.flow_pool, flow_rng);
      const BoxDomain outer(omega.outer_lower(), omega.outer_upper());
      proposal_log_pdf = Vector::Constant(pool.rows(), -std::log(outer.volume()));
    } else {
      pool = flow.sample(config.flow_pool, flow_rng);
      proposal_log_pdf = flow.log_pdf(pool);
    }
    const Vector target = squared_residual(problem, surrogate, pool, grid).cwiseProduct(cutoff_h_rows(pool, omega));
    FlowTrainConfig fc;
    fc.epochs = config.flow_epoch_count();
    fc.batch = config.batch;
    fc.pool = config.flow_pool;
    fc.lr = config.flow_lr;
    fc.self_normalize = config.self_normalize;
    const auto flow_start = Clock::now();
    FlowTrainResult fitted = train_flow_on_pool(std::move(flow), pool, target, proposal_log_pdf, fc, flow_rng);
    const double flow_ms = ms_since(flow_start) / std::max<std::size_t>(1, fitted.epoch_losses.size());
    flow = std::move(fitted.flow);
    uniform_proposal = false;
    for (std::size_t e = 0; e < fitted.epoch_losses.size(); ++e) {
      MetricRow row;
      row.stage = stage;
      row.epoch = static_cast<Index>(e) + 1;
      row.phase = "flow";
      row.loss = fitted.epoch_losses[e];
      row.n_points = set.size();
      row.wall_ms = flow_ms;
      record.rows.push_back(std::move(row));
    }

    if (k + 1 < config.n_adaptive) {
      RngStream refine_rng(config.seed, 300 + static_cast<std::uint64_t>(k));
      double acceptance = 0.0;
      Matrix fresh;
      try {
        fresh = flow.sample(config.n_r, refine_rng, true, config.max_attempts, &acceptance);
      } catch (const StarvationError& e) {
        throw StarvationError("stage " + std::to_string(stage) + " refinement: too few flow draws inside the domain",
                              e.acceptance_rate());
      }
      std::optional<Vector> density;
      // Density of the flow truncated to the domain.
      if (config.refine == RefineMode::replace) density = flow.log_pdf(fresh).array().exp().matrix() / acceptance;
      set = refine_training_set(set, TrainingSet::from_points(std::move(fresh), stage + 1), config.refine, density);
      st.acceptance_rate = acceptance;
    }
    logger(st);
    record.stages.push_back(st);
  }
  const GridError final_error = record.stages.back().validation;
  return RunResult{std::move(surrogate), std::move(flow), std::move(record), std::move(set), final_error};
}

}  // namespace

std::string to_string(SamplingMode mode) { return mode == SamplingMode::joint ? "joint" : "marginal"; }
std::string to_string(RefineMode mode) { return mode == RefineMode::grow ? "grow" : "replace"; }
std::string to_string(Baseline baseline) {
  switch (baseline) {
    case Baseline::none: return "none";
    case Baseline::uniform: return "uniform";
    case Baseline::qrs: return "qrs";
    case Baseline::rar: return "rar";
  }
  return "none";
}

void AdaptiveConfig::validate() const {
  const auto positive = [](Index v, const char* name) {
    if (v < 1) throw Error(std::string("adaptive config: ") + name + " must be positive, got " + std::to_string(v));
  };
  positive(n_adaptive, "n_adaptive");
  positive(epochs, "epochs");
  positive(n_r, "n_r");
  positive(batch, "batch");
  positive(m_x, "m_x");
  positive(flow_pool, "flow_pool");
  if (flow_epochs < -1) throw Error("adaptive config: flow_epochs must be -1 or nonnegative");
  if (gamma < 0.0) throw Error("adaptive config: gamma must be nonnegative");
  if (!(lr > 0.0) || !(flow_lr > 0.0)) throw Error("adaptive config: learning rates must be positive");
  if (!(box_margin > 0.0)) throw Error("adaptive config: box_margin must be positive");
  if (!(max_attempts >= 1.0)) throw Error("adaptive config: max_attempts must be at least 1");
  if (val_every < 0) throw Error("adaptive config: val_every must be nonnegative");
}

ad::Var empirical_loss(ad::Tape& tape, const Surrogate& s, const Problem& problem, const Matrix& points,
                       const Vector* weights, double gamma, const BoundaryBatch* boundary) {
  if (points.rows() == 0) throw Error("empirical_loss: empty batch");
  ad::Var r2 = ad::square(problem.residual(tape, s, points));
  ad::Var loss;
  if (weights) {
    if (weights->size() != points.rows()) {
      throw DimensionError("empirical_loss: weight count", static_cast<std::size_t>(points.rows()),
                           static_cast<std::size_t>(weights->size()));
    }
    loss = ad::mean(tape.constant(Matrix(*weights)) * r2);
  } else {
    loss = ad::mean(r2);
  }
  if (boundary && gamma != 0.0) {
    if (boundary->points.rows() == 0) throw Error("empirical_loss: empty boundary batch");
    if (boundary->values.size() != boundary->points.rows()) {
      throw DimensionError("empirical_loss: boundary value count", static_cast<std::size_t>(boundary->points.rows()),
                           static_cast<std::size_t>(boundary->values.size()));
    }
    ad::Var b = s.forward(tape, boundary->points) - tape.constant(Matrix(boundary->values));
    loss = loss + gamma * ad::mean(ad::square(b));
  }
  return loss;
}

ad::Var marginal_loss(ad::Tape& tape, const Surrogate& s, const Problem& problem, const Matrix& xi_batch,
                      const Matrix& x_grid, const Vector* weights) {
  if (xi_batch.rows() == 0 || x_grid.rows() == 0) throw Error("marginal_loss: empty parameter batch or spatial grid");
  ad::Var r2 = ad::square(problem.product_residual(tape, s, x_grid, xi_batch));
  if (!weights) return ad::mean(r2);
  const Index nx = x_grid.rows();
  const Index nb = xi_batch.rows();
  if (weights->size() != nb) {
    throw DimensionError("marginal_loss: weight count", static_cast<std::size_t>(nb),
                         static_cast<std::size_t>(weights->size()));
  }
  Matrix w(r2.rows(), r2.cols());
  if (s.kind() == SurrogateKind::mlp) {
    for (Index j = 0; j < nb; ++j) w.block(j * nx, 0, nx, 1).setConstant((*weights)[j]);
  } else {
    w.rowwise() = weights->transpose();
  }
  return ad::mean(tape.constant(std::move(w)) * r2);
}

Matrix linspace_column(double lower, double upper, Index n) {
  if (n < 1) throw Error("linspace_column: need at least one point");
  Matrix out(n, 1);
  if (n == 1) {
    out(0, 0) = lower;
    return out;
  }
  for (Index i = 0; i < n; ++i) {
    out(i, 0) = lower + (upper - lower) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return out;
}

ValidationSet tensor_grid_validation(const Problem& problem, Index nx, Index nxi) {
  if (problem.kind != ProblemKind::param_ode) throw Error("tensor_grid_validation: needs the param_ode problem");
  ValidationSet v;
  v.x_grid = linspace_column(problem.spatial.lower()[0], problem.spatial.upper()[0], nx);
  v.xi = linspace_column(problem.param.lower()[0], problem.param.upper()[0], nxi);
  v.reference.resize(nxi, nx);
  for (Index j = 0; j < nxi; ++j) {
    for (Index i = 0; i < nx; ++i) v.reference(j, i) = exact_param_ode(v.x_grid(i, 0), v.xi(j, 0), problem.u0);
  }
  return v;
}

ValidationSet mixed_validation(const Problem& problem, Index n_uniform, Index n_ball, Index nx, std::uint64_t seed) {
  if (n_uniform < 0 || n_ball < 0 || n_uniform + n_ball == 0) {
    throw Error("mixed_validation: need a positive number of parameter samples");
  }
  if (problem.spatial_dim() != 1) {
    throw DimensionError("mixed_validation: spatial dimension", 1, static_cast<std::size_t>(problem.spatial_dim()));
  }
  const Index d = problem.param_dim();
  RngStream rng(seed, 0);
  ValidationSet v;
  v.x_grid = linspace_column(problem.spatial.lower()[0], problem.spatial.upper()[0], nx);
  v.xi.resize(n_uniform + n_ball, d);
  v.xi.topRows(n_uniform) = uniform_sample(problem.param, n_uniform, rng);
  const BoxDomain cube(Vector::Zero(d), Vector::Ones(d));
  const double max_draws = 1e8;
  double draws = 0.0;
  for (Index i = 0; i < n_ball; ++i) {
    while (true) {
      if (++draws > max_draws) throw Error("mixed_validation: ball rejection sampling exhausted its draw budget");
      const Matrix p = uniform_sample(cube, 1, rng);
      if ((p.array() - 0.5).square().sum() <= 0.25) {
        v.xi.row(n_uniform + i) = p.row(0);
        break;
      }
    }
  }
  v.reference.resize(v.xi.rows(), nx);
  const std::span<const double> grid(v.x_grid.data(), static_cast<std::size_t>(nx));
  parallel_for(static_cast<std::size_t>(v.xi.rows()), [&](std::size_t j) {
    const Index row = static_cast<Index>(j);
    const Eigen::RowVectorXd xi = v.xi.row(row);
    if (problem.kind == ProblemKind::param_ode) {
      for (Index i = 0; i < nx; ++i) v.reference(row, i) = exact_param_ode(v.x_grid(i, 0), xi[0], problem.u0);
    } else {
      const Vector sol = rk45_oracle(std::span<const double>(xi.data(), static_cast<std::size_t>(d)), grid, problem.decay);
      v.reference.row(row) = sol.transpose();
    }
  });
  return v;
}

Matrix evaluate_product(const Surrogate& s, const Matrix& x_grid, const Matrix& xi) {
  const Index nx = x_grid.rows();
  const Index nb = xi.rows();
  if (s.kind() == SurrogateKind::mlp) {
    Matrix points(nx * nb, s.input_dim());
    for (Index j = 0; j < nb; ++j) {
      for (Index i = 0; i < nx; ++i) {
        points.block(j * nx + i, 0, 1, x_grid.cols()) = x_grid.row(i);
        points.block(j * nx + i, x_grid.cols(), 1, xi.cols()) = xi.row(j);
      }
    }
    const Vector u = s.evaluate(points);
    return Eigen::Map<const Matrix>(u.data(), nb, nx);
  }
  const std::span<const double> p = view(s.parameters());
  const Matrix q = s.trunk().evaluate(p, x_grid);  // nx x l
  const Matrix t = s.branch().evaluate(p, xi);     // nb x l
  Matrix raw = t * q.transpose();
  raw.array() += s.parameters()[static_cast<Index>(s.b0_offset())];
  for (Index j = 0; j < nb; ++j) {
    for (Index i = 0; i < nx; ++i) raw(j, i) = apply_ansatz(s, raw(j, i), x_grid(i, 0));
  }
  return raw;
}

GridError evaluate_grid(const Matrix& prediction, const Matrix& reference) {
  if (reference.size() == 0) throw Error("evaluate_grid: empty grid");
  if (prediction.rows() != reference.rows() || prediction.cols() != reference.cols()) {
    throw DimensionError("evaluate_grid: prediction entries", static_cast<std::size_t>(reference.size()),
                         static_cast<std::size_t>(prediction.size()));
  }
  const double ref_norm = reference.norm();
  if (ref_norm == 0.0) throw Error("evaluate_grid: reference has zero norm, relative error undefined");
  const Matrix diff = prediction - reference;
  return {diff.squaredNorm() / static_cast<double>(diff.size()), diff.norm() / ref_norm};
}

GridError evaluate_grid(const Surrogate& s, const ValidationSet& validation) {
  if (s.param_dim() != validation.xi.cols()) {
    throw DimensionError("evaluate_grid: parameter dimension", static_cast<std::size_t>(validation.xi.cols()),
                         static_cast<std::size_t>(s.param_dim()));
  }
  return evaluate_grid(evaluate_product(s, validation.x_grid, validation.xi), validation.reference);
}

Index RunRecord::count(const std::string& phase) const {
  return static_cast<Index>(std::count_if(rows.begin(), rows.end(), [&](const MetricRow& r) { return r.phase == phase; }));
}

void RunRecord::write_metrics_csv(const std::filesystem::path& path, bool with_wall_time) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "stage,epoch,phase,loss,val_mse,val_rel_l2,n_points,wall_ms\n";
  for (const MetricRow& r : rows) {
    out << r.stage << ',' << r.epoch << ',' << r.phase << ',' << format_double(r.loss) << ',';
    if (r.validation) out << format_double(r.validation->mse) << ',' << format_double(r.validation->rel_l2);
    else out << ',';
    out << ',' << r.n_points << ',';
    if (with_wall_time) out << format_double(r.wall_ms);
    out << '\n';
  }
}

void RunRecord::write_stages_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "stage,n_points,set_loss,val_mse,val_rel_l2,acceptance_rate\n";
  for (const StageRecord& s : stages) {
    out << s.stage << ',' << s.n_points << ',' << format_double(s.set_loss) << ',' << format_double(s.validation.mse)
        << ',' << format_double(s.validation.rel_l2) << ',';
    if (!std::isnan(s.acceptance_rate)) out << format_double(s.acceptance_rate);
    out << '\n';
  }
}

std::vector<double> train_surrogate_stage(Surrogate& s, const TrainingSet& set, const Problem& problem,
                                          const AdaptiveConfig& config, RngStream& rng, const Matrix* x_grid,
                                          const std::function<void(Index, double)>& on_epoch) {
  if (set.size() == 0) throw Error("train_surrogate_stage: empty training set");
  if (config.batch < 1) throw Error("train_surrogate_stage: batch size must be positive");
  std::vector<double> losses;
  const Index n = set.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  AdamState state(static_cast<Index>(s.parameter_count()));
  AdamHyper hyper;
  hyper.lr = config.lr;
  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    for (Index start = 0; start < n; start += config.batch) {
      const Index count = std::min(config.batch, n - start);
      const Matrix batch = gather_rows(set.points, order, start, count);
      const Vector w = set.weighted() ? gather(set.weights, order, start, count) : Vector();
      const Vector* wp = set.weighted() ? &w : nullptr;
      Vector& params = s.parameters();
      ad::Tape tape(view(params));
      ad::Var loss = x_grid ? marginal_loss(tape, s, problem, batch, *x_grid, wp)
                            : empirical_loss(tape, s, problem, batch, wp, config.gamma);
      const Vector grad = tape.grad_params(loss);
      total += loss.scalar() * static_cast<double>(count);
      adam_step(params, grad, state, hyper);
    }
    losses.push_back(total / static_cast<double>(n));
    if (on_epoch) on_epoch(epoch, losses.back());
  }
  return losses;
}

double set_loss(const Surrogate& s, const TrainingSet& set, const Problem& problem, const AdaptiveConfig& config,
                const Matrix* x_grid) {
  if (set.size() == 0) throw Error("set_loss: empty training set");
  const Index n = set.size();
  const Index chunk = x_grid ? 500 : 4096;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  double total = 0.0;
  for (Index start = 0; start < n; start += chunk) {
    const Index count = std::min(chunk, n - start);
    const Matrix batch = set.points.middleRows(start, count);
    const Vector w = set.weighted() ? Vector(set.weights.segment(start, count)) : Vector();
    const Vector* wp = set.weighted() ? &w : nullptr;
    ad::Tape tape(view(s.parameters()));
    ad::Var loss = x_grid ? marginal_loss(tape, s, problem, batch, *x_grid, wp)
                          : empirical_loss(tape, s, problem, batch, wp, config.gamma);
    total += loss.scalar() * static_cast<double>(count);
  }
  return total / static_cast<double>(n);
}

RunResult das2_joint(const Problem& problem, Surrogate surrogate, const FlowConfig& flow_config,
                     const AdaptiveConfig& config, const ValidationSet& validation, std::ostream* log) {
  if (config.mode != SamplingMode::joint) throw Error("das2_joint: config mode must be joint");
  return adaptive_loop(problem, std::move(surrogate), flow_config, config, validation, log);
}

RunResult das2_marginal(const Problem& problem, Surrogate surrogate, const FlowConfig& flow_config,
                        const AdaptiveConfig& config, const ValidationSet& validation, std::ostream* log) {
  if (config.mode != SamplingMode::marginal) throw Error("das2_marginal: config mode must be marginal");
  return adaptive_loop(problem, std::move(surrogate), flow_config, config, validation, log);
}

RunResult run_baseline(const Problem& problem, Surrogate surrogate, const AdaptiveConfig& config,
                       const ValidationSet& validation, std::ostream* log) {
  config.validate();
  if (config.baseline == Baseline::none) throw Error("run_baseline: no baseline selected");
  problem.check_surrogate(surrogate);
  const bool marginal = config.mode == SamplingMode::marginal;
  const BoxDomain omega = marginal ? problem.param_domain(config.box_margin) : problem.joint_domain(config.box_margin);
  const Matrix x_grid = marginal ? spatial_grid(problem, config.m_x) : Matrix();
  const Matrix* grid = marginal ? &x_grid : nullptr;
  const std::string label = to_string(config.baseline);
  const StageLogger logger{log, label.c_str()};

  const Index total = config.n_adaptive * config.n_r;
  RngStream init_rng(config.seed, 1);
  TrainingSet set;
  switch (config.baseline) {
    case Baseline::uniform: set = TrainingSet::from_points(uniform_sample(omega, total, init_rng), 0); break;
    case Baseline::qrs: set = TrainingSet::from_points(halton_sample(omega, total), 0); break;
    default: set = TrainingSet::from_points(uniform_sample(omega, config.n_r, init_rng), 0); break;
  }

  RunRecord record;
  for (Index k = 0; k < config.n_adaptive; ++k) {
    const int stage = static_cast<int>(k);
    StageRecord st = run_surrogate_stage(surrogate, set, problem, config, validation, grid, stage, record);
    if (config.baseline == Baseline::rar && k + 1 < config.n_adaptive) {
      RngStream cand_rng(config.seed, 400 + static_cast<std::uint64_t>(k));
      const Matrix candidates = uniform_sample(omega, 10 * config.n_r, cand_rng);
      const auto residual_fn = [&](const Matrix& pts) -> Vector {
        return squared_residual(problem, surrogate, pts, grid).array().sqrt().matrix();
      };
      Matrix picked = rar_select(candidates, residual_fn, config.n_r);
      set = refine_training_set(set, TrainingSet::from_points(std::move(picked), stage + 1), RefineMode::grow);
    }
    logger(st);
    record.stages.push_back(st);
  }
  const GridError final_error = record.stages.back().validation;
  return RunResult{std::move(surrogate), std::nullopt, std::move(record), std::move(set), final_error};
}

RunResult run_adaptive(const Problem& problem, Surrogate surrogate, const FlowConfig& flow_config,
                       const AdaptiveConfig& config, const ValidationSet& validation, std::ostream* log) {
  if (config.baseline != Baseline::none) return run_baseline(problem, std::move(surrogate), config, validation, log);
  if (config.mode == SamplingMode::marginal) {
    return das2_marginal(problem, std::move(surrogate), flow_config, config, validation, log);
  }
  return das2_joint(problem, std::move(surrogate), flow_config, config, validation, log);
}

}  // namespace das2
