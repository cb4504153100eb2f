#include "das2/flow.hpp"

#include "das2/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace das2 {

namespace {

constexpr Index kChunk = 8192;
const double kLog2Pi = std::log(2.0 * M_PI);

Matrix gather_rows(const Matrix& m, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

Vector gather(const Vector& v, std::span<const Index> rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Index>(i)] = v[rows[i]];
  return out;
}

}  // namespace

BoxDomain::BoxDomain(Vector lower, Vector upper, double margin)
    : lower_(std::move(lower)), upper_(std::move(upper)), margin_(margin) {
  if (lower_.size() != upper_.size()) {
    throw DimensionError("BoxDomain: upper bound length", static_cast<std::size_t>(lower_.size()),
                         static_cast<std::size_t>(upper_.size()));
  }
  if (lower_.size() == 0) throw Error("BoxDomain: empty domain");
  if ((lower_.array() >= upper_.array()).any()) throw Error("BoxDomain: lower must be below upper in every dimension");
  if (!(margin_ > 0.0)) throw Error("BoxDomain: margin must be positive so that B strictly contains Omega");
}

Vector BoxDomain::outer_lower() const { return lower_ - margin_ * (upper_ - lower_); }
Vector BoxDomain::outer_upper() const { return upper_ + margin_ * (upper_ - lower_); }
double BoxDomain::volume() const { return (upper_ - lower_).prod(); }

bool BoxDomain::contains(const Eigen::Ref<const Eigen::RowVectorXd>& point) const {
  for (Index k = 0; k < dim(); ++k) {
    if (point[k] < lower_[k] || point[k] > upper_[k]) return false;
  }
  return true;
}

bool BoxDomain::inside_outer(const Eigen::Ref<const Eigen::RowVectorXd>& point) const {
  const Vector lo = outer_lower();
  const Vector hi = outer_upper();
  for (Index k = 0; k < dim(); ++k) {
    if (!(point[k] > lo[k] && point[k] < hi[k])) return false;
  }
  return true;
}

FlowModel FlowModel::init(const BoxDomain& box, const FlowConfig& config, std::uint64_t seed) {
  if (box.dim() < 1) throw Error("flow_init: dim must be at least 1");
  if (config.K < 1 || config.L < 1) throw Error("flow_init: K and L must be at least 1");
  if (config.hidden < 1) throw Error("flow_init: hidden width must be positive");
  if (!(config.clamp > 0.0)) throw Error("flow_init: clamp must be positive");
  FlowModel f;
  f.box_ = box;
  f.config_ = config;
  f.build_layout();

  std::mt19937_64 rng(seed);
  const Index d = f.dim();
  const Index h = config.hidden;
  auto xavier = [&](std::size_t offset, Index out, Index in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index k = 0; k < out * in; ++k) f.params_[static_cast<Index>(offset) + k] = dist(rng);
  };
  std::normal_distribution<double> small(0.0, config.init_scale > 0.0 ? config.init_scale : 1.0);
  auto perturb = [&](std::size_t offset, Index count) {
    if (config.init_scale <= 0.0) return;
    for (Index k = 0; k < count; ++k) f.params_[static_cast<Index>(offset) + k] = small(rng);
  };
  for (const CouplingBlock& b : f.blocks_) {
    xavier(b.w1, h, d);
    xavier(b.w2, h, h);
    perturb(b.ws, d * h);
    perturb(b.bs, d);
    perturb(b.wt, d * h);
    perturb(b.bt, d);
    perturb(b.log_scale, d);
    perturb(b.bias, d);
  }
  return f;
}

void FlowModel::build_layout() {
  const Index d = dim();
  const Index K = config_.K;
  const Index L = config_.L;
  const Index h = config_.hidden;
  const Index step = (d + K - 1) / K;
  frozen_schedule_.assign(static_cast<std::size_t>(K), 0);
  Index active = d;
  std::vector<Index> actives;
  for (Index k = 0; k < K; ++k) {
    actives.push_back(active);
    const Index freeze = k + 1 < K ? std::min(step, active - 1) : 0;
    frozen_schedule_[static_cast<std::size_t>(k)] = freeze;
    active -= freeze;
  }

  std::size_t offset = 0;
  auto take = [&](Index count) {
    const std::size_t at = offset;
    offset += static_cast<std::size_t>(count);
    return at;
  };
  blocks_.clear();
  for (Index k = 0; k < K; ++k) {
    const Index a = actives[static_cast<std::size_t>(k)];
    for (Index l = 0; l < L; ++l) {
      CouplingBlock b;
      b.outer = k;
      b.inner = l;
      b.w1 = take(h * d);
      b.b1 = take(h);
      b.w2 = take(h * h);
      b.b2 = take(h);
      b.ws = take(d * h);
      b.bs = take(d);
      b.wt = take(d * h);
      b.bt = take(d);
      b.log_scale = take(d);
      b.bias = take(d);
      b.cond_mask = Matrix::Zero(1, d);
      b.trans_mask = Matrix::Zero(1, d);
      b.active_mask = Matrix::Zero(1, d);
      for (Index j = 0; j < a; ++j) {
        b.active_mask(0, j) = 1.0;
        const bool cond = a > 1 && (j + l) % 2 == 0;
        (cond ? b.cond_mask : b.trans_mask)(0, j) = 1.0;
      }
      blocks_.push_back(std::move(b));
    }
  }
  params_ = Vector::Zero(static_cast<Index>(offset));
}

Index FlowModel::active_dims(Index outer) const {
  Index a = dim();
  for (Index k = 0; k < outer; ++k) a -= frozen_schedule_[static_cast<std::size_t>(k)];
  return a;
}

Matrix FlowModel::reversal(Index outer) const {
  const Index d = dim();
  const Index a = active_dims(outer);
  Matrix p = Matrix::Zero(d, d);
  for (Index j = 0; j < d; ++j) {
    const Index target = j < a ? a - 1 - j : j;
    p(target, j) = 1.0;
  }
  return p;
}

Matrix FlowModel::box_to_real(const Matrix& points, Vector& logdet) const {
  if (points.cols() != dim()) {
    throw DimensionError("flow: point dimension", static_cast<std::size_t>(dim()), static_cast<std::size_t>(points.cols()));
  }
  const Vector lo = box_.outer_lower();
  const Vector width = box_.outer_upper() - lo;
  Matrix y(points.rows(), points.cols());
  logdet = Vector::Zero(points.rows());
  for (Index i = 0; i < points.rows(); ++i) {
    for (Index k = 0; k < dim(); ++k) {
      const double s = (points(i, k) - lo[k]) / width[k];
      if (!(s > 0.0 && s < 1.0)) throw Error("flow: point lies on or outside the boundary of B");
      y(i, k) = std::log(s) - std::log1p(-s);
      logdet[i] -= std::log(width[k] * s * (1.0 - s));
    }
  }
  return y;
}

ad::Var FlowModel::layers_forward(ad::Tape& tape, ad::Var y, ad::Var& logdet) const {
  const Index d = dim();
  const Index h = config_.hidden;
  const double alpha = config_.clamp;
  Index current_outer = -1;
  for (const CouplingBlock& b : blocks_) {
    if (b.outer != current_outer) {
      current_outer = b.outer;
      y = ad::matmul_transposed(y, tape.constant(reversal(b.outer)));
    }
    ad::Var xin = y * tape.constant(b.cond_mask);
    ad::Var h1 = ad::tanh(ad::matmul_transposed(xin, tape.parameter(b.w1, h, d)) + tape.parameter(b.b1, 1, h));
    ad::Var h2 = ad::tanh(ad::matmul_transposed(h1, tape.parameter(b.w2, h, h)) + tape.parameter(b.b2, 1, h));
    ad::Var sraw = ad::matmul_transposed(h2, tape.parameter(b.ws, d, h)) + tape.parameter(b.bs, 1, d);
    ad::Var traw = ad::matmul_transposed(h2, tape.parameter(b.wt, d, h)) + tape.parameter(b.bt, 1, d);
    ad::Var s = (alpha * ad::tanh((1.0 / alpha) * sraw)) * tape.constant(b.trans_mask);
    ad::Var t = traw * tape.constant(b.trans_mask);
    y = y * ad::exp(s) + t;
    logdet = logdet + ad::row_sum(s);

    ad::Var ls = tape.parameter(b.log_scale, 1, d) * tape.constant(b.active_mask);
    ad::Var bias = tape.parameter(b.bias, 1, d) * tape.constant(b.active_mask);
    y = y * ad::exp(ls) + bias;
    logdet = logdet + ad::sum(ls);
  }
  return y;
}

ad::Var FlowModel::log_density(ad::Tape& tape, const Matrix& points) const {
  Vector box_logdet;
  Matrix y = box_to_real(points, box_logdet);
  ad::Var logdet = tape.constant(Matrix(box_logdet));
  ad::Var z = layers_forward(tape, tape.input(std::move(y)), logdet);
  const double norm = -0.5 * static_cast<double>(dim()) * kLog2Pi;
  return logdet - 0.5 * ad::row_sum(ad::square(z)) + norm;
}

FlowModel::Forward FlowModel::forward(const Matrix& points) const {
  Forward out{Matrix(points.rows(), dim()), Vector(points.rows())};
  const std::span<const double> p(params_.data(), params_.size());
  for (Index start = 0; start < points.rows(); start += kChunk) {
    const Index n = std::min(kChunk, points.rows() - start);
    ad::Tape tape(p);
    Vector box_logdet;
    Matrix y = box_to_real(points.middleRows(start, n), box_logdet);
    ad::Var logdet = tape.constant(Matrix(box_logdet));
    ad::Var z = layers_forward(tape, tape.input(std::move(y)), logdet);
    out.z.middleRows(start, n) = z.value();
    out.logdet.segment(start, n) = logdet.value().col(0);
  }
  return out;
}

Vector FlowModel::log_pdf(const Matrix& points) const {
  Forward f = forward(points);
  const double norm = -0.5 * static_cast<double>(dim()) * kLog2Pi;
  return f.logdet.array() - 0.5 * f.z.rowwise().squaredNorm().array() + norm;
}

Matrix FlowModel::inverse(const Matrix& z) const {
  if (z.cols() != dim()) {
    throw DimensionError("flow_inverse: latent dimension", static_cast<std::size_t>(dim()),
                         static_cast<std::size_t>(z.cols()));
  }
  const Index d = dim();
  const Index h = config_.hidden;
  const double alpha = config_.clamp;
  const double* p = params_.data();
  auto mat = [&](std::size_t offset, Index rows, Index cols) { return Eigen::Map<const Matrix>(p + offset, rows, cols); };
  auto row = [&](std::size_t offset, Index cols) { return Eigen::Map<const Eigen::RowVectorXd>(p + offset, cols); };

  Matrix y = z;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    const CouplingBlock& b = *it;
    const Eigen::RowVectorXd amask = b.active_mask.row(0);
    const Eigen::RowVectorXd ls = row(b.log_scale, d).cwiseProduct(amask);
    const Eigen::RowVectorXd bias = row(b.bias, d).cwiseProduct(amask);
    y.rowwise() -= bias;
    y.array().rowwise() *= (-ls).array().exp();

    const Eigen::RowVectorXd cmask = b.cond_mask.row(0);
    const Eigen::RowVectorXd tmask = b.trans_mask.row(0);
    Matrix xin = y;
    xin.array().rowwise() *= cmask.array();
    Matrix h1 = xin * mat(b.w1, h, d).transpose();
    h1.rowwise() += row(b.b1, h);
    h1 = h1.array().tanh();
    Matrix h2 = h1 * mat(b.w2, h, h).transpose();
    h2.rowwise() += row(b.b2, h);
    h2 = h2.array().tanh();
    Matrix sraw = h2 * mat(b.ws, d, h).transpose();
    sraw.rowwise() += row(b.bs, d);
    Matrix traw = h2 * mat(b.wt, d, h).transpose();
    traw.rowwise() += row(b.bt, d);
    Matrix s = (alpha * (sraw.array() / alpha).tanh()).matrix();
    s.array().rowwise() *= tmask.array();
    traw.array().rowwise() *= tmask.array();
    y = ((y - traw).array() * (-s.array()).exp()).matrix();

    const bool first_of_outer = b.inner == 0;
    if (first_of_outer) y = y * reversal(b.outer);
  }

  const Vector lo = box_.outer_lower();
  const Vector hi = box_.outer_upper();
  const Vector width = hi - lo;
  Matrix x(y.rows(), d);
  for (Index i = 0; i < y.rows(); ++i) {
    for (Index k = 0; k < d; ++k) {
      const double s = 1.0 / (1.0 + std::exp(-y(i, k)));
      double v = lo[k] + width[k] * s;
      if (!(v > lo[k])) v = std::nextafter(lo[k], hi[k]);
      if (!(v < hi[k])) v = std::nextafter(hi[k], lo[k]);
      x(i, k) = v;
    }
  }
  return x;
}

Matrix FlowModel::sample(Index n, RngStream& rng, bool restrict, double max_attempts, double* acceptance_rate) const {
  if (n < 1) throw Error("flow_sample: n must be at least 1");
  const Index d = dim();
  auto draw = [&](Index count) {
    Matrix z(count, d);
    for (Index i = 0; i < count; ++i) {
      for (Index k = 0; k < d; ++k) z(i, k) = rng.normal();
    }
    return inverse(z);
  };
  if (!restrict) {
    if (acceptance_rate) *acceptance_rate = 1.0;
    return draw(n);
  }
  const double budget = max_attempts * static_cast<double>(n);
  Matrix out(n, d);
  Index accepted = 0;
  double draws = 0.0;
  while (accepted < n) {
    if (draws >= budget) {
      throw StarvationError("flow_sample: too few draws landed inside the domain", draws > 0 ? accepted / draws : 0.0);
    }
    const Index want = std::min<Index>(n - accepted, static_cast<Index>(budget - draws) + 1);
    Matrix batch = draw(want);
    draws += static_cast<double>(want);
    for (Index i = 0; i < batch.rows() && accepted < n; ++i) {
      if (box_.contains(batch.row(i))) out.row(accepted++) = batch.row(i);
    }
  }
  if (acceptance_rate) *acceptance_rate = static_cast<double>(n) / draws;
  return out;
}

nlohmann::json FlowModel::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = "flow";
  j["dim"] = dim();
  j["K"] = config_.K;
  j["L"] = config_.L;
  j["hidden"] = config_.hidden;
  j["clamp"] = config_.clamp;
  j["box"] = {{"lower", std::vector<double>(box_.lower().data(), box_.lower().data() + dim())},
              {"upper", std::vector<double>(box_.upper().data(), box_.upper().data() + dim())},
              {"margin", box_.margin()}};
  j["frozen_schedule"] = frozen_schedule_;
  const double* p = params_.data();
  auto slice = [&](std::size_t offset, Index count) { return std::vector<double>(p + offset, p + offset + count); };
  const Index d = dim();
  const Index h = config_.hidden;
  nlohmann::json layers = nlohmann::json::array();
  for (const CouplingBlock& b : blocks_) {
    layers.push_back({{"weights", {slice(b.w1, h * d), slice(b.w2, h * h), slice(b.ws, d * h), slice(b.wt, d * h)}},
                      {"biases", {slice(b.b1, h), slice(b.b2, h), slice(b.bs, d), slice(b.bt, d)}},
                      {"actnorm_log_scale", slice(b.log_scale, d)},
                      {"actnorm_bias", slice(b.bias, d)}});
  }
  j["layers"] = layers;
  return j;
}

FlowModel FlowModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw Error("flow checkpoint: unsupported version");
    if (j.at("kind").get<std::string>() != "flow") throw Error("flow checkpoint: kind is not 'flow'");
    const auto lower = j.at("box").at("lower").get<std::vector<double>>();
    const auto upper = j.at("box").at("upper").get<std::vector<double>>();
    BoxDomain box(Eigen::Map<const Vector>(lower.data(), static_cast<Index>(lower.size())),
                  Eigen::Map<const Vector>(upper.data(), static_cast<Index>(upper.size())),
                  j.at("box").at("margin").get<double>());
    if (j.at("dim").get<Index>() != box.dim()) {
      throw DimensionError("flow checkpoint: dim", static_cast<std::size_t>(box.dim()), j.at("dim").get<std::size_t>());
    }
    FlowConfig config;
    config.K = j.at("K").get<Index>();
    config.L = j.at("L").get<Index>();
    config.hidden = j.at("hidden").get<Index>();
    config.clamp = j.at("clamp").get<double>();
    FlowModel f = FlowModel::init(box, config, 0);
    if (j.at("frozen_schedule").get<std::vector<Index>>() != f.frozen_schedule_) {
      throw Error("flow checkpoint: frozen_schedule does not match K and dim");
    }
    const auto& layers = j.at("layers");
    if (layers.size() != f.blocks_.size()) throw DimensionError("flow checkpoint: layer count", f.blocks_.size(), layers.size());
    const Index d = f.dim();
    const Index h = config.hidden;
    auto fill = [&](std::size_t offset, const nlohmann::json& values, Index count) {
      const auto v = values.get<std::vector<double>>();
      if (static_cast<Index>(v.size()) != count) {
        throw DimensionError("flow checkpoint: entry count", static_cast<std::size_t>(count), v.size());
      }
      std::copy(v.begin(), v.end(), f.params_.data() + offset);
    };
    for (std::size_t i = 0; i < f.blocks_.size(); ++i) {
      const CouplingBlock& b = f.blocks_[i];
      const auto& l = layers[i];
      fill(b.w1, l.at("weights").at(0), h * d);
      fill(b.w2, l.at("weights").at(1), h * h);
      fill(b.ws, l.at("weights").at(2), d * h);
      fill(b.wt, l.at("weights").at(3), d * h);
      fill(b.b1, l.at("biases").at(0), h);
      fill(b.b2, l.at("biases").at(1), h);
      fill(b.bs, l.at("biases").at(2), d);
      fill(b.bt, l.at("biases").at(3), d);
      fill(b.log_scale, l.at("actnorm_log_scale"), d);
      fill(b.bias, l.at("actnorm_bias"), d);
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("flow checkpoint: ") + e.what());
  }
}

void FlowModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

FlowModel FlowModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  return from_json(j);
}

ad::Var ce_loss(ad::Tape& tape, const FlowModel& flow, const Matrix& batch, const Vector& target,
                const Vector& proposal_log_pdf, bool self_normalize) {
  const Index m = batch.rows();
  if (m == 0) throw Error("ce_loss: empty batch");
  if (target.size() != m || proposal_log_pdf.size() != m) {
    throw DimensionError("ce_loss: per-point value count", static_cast<std::size_t>(m),
                         static_cast<std::size_t>(target.size() != m ? target.size() : proposal_log_pdf.size()));
  }
  Matrix w(m, 1);
  for (Index i = 0; i < m; ++i) {
    if (target[i] < 0.0 || !std::isfinite(target[i])) throw Error("ce_loss: target must be finite and nonnegative");
    if (!std::isfinite(proposal_log_pdf[i])) throw Error("ce_loss: proposal density vanishes at a batch point");
    w(i, 0) = target[i] * std::exp(-proposal_log_pdf[i]);
  }
  const double total = w.sum();
  if (self_normalize && total > 0.0) w *= static_cast<double>(m) / total;
  ad::Var logp = flow.log_density(tape, batch);
  return (-1.0 / static_cast<double>(m)) * ad::sum(tape.constant(std::move(w)) * logp);
}

double ce_loss(const FlowModel& flow, const FlowModel& proposal, const std::function<Vector(const Matrix&)>& target,
               const Matrix& batch, bool self_normalize) {
  ad::Tape tape(std::span<const double>(flow.parameters().data(), flow.parameter_count()));
  return ce_loss(tape, flow, batch, target(batch), proposal.log_pdf(batch), self_normalize).scalar();
}

FlowTrainResult train_flow_on_pool(FlowModel flow, const Matrix& pool, const Vector& target,
                                   const Vector& proposal_log_pdf, const FlowTrainConfig& config, RngStream& rng) {
  if (config.batch < 1) throw Error("train_flow: batch size must be positive");
  FlowTrainResult result{std::move(flow), {}};
  if (config.epochs <= 0) return result;
  const Index n = pool.rows();
  if (n == 0) throw Error("train_flow: empty pool");
  const Index m = std::min(config.batch, n);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Index cursor = n;  // forces a shuffle before the first step
  AdamState state(static_cast<Index>(result.flow.parameter_count()));
  AdamHyper hyper;
  hyper.lr = config.lr;
  std::vector<Index> rows(static_cast<std::size_t>(m));
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    for (Index i = 0; i < m; ++i) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      rows[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(cursor++)];
    }
    Vector& params = result.flow.parameters();
    ad::Tape tape(std::span<const double>(params.data(), params.size()));
    ad::Var loss = ce_loss(tape, result.flow, gather_rows(pool, rows), gather(target, rows),
                           gather(proposal_log_pdf, rows), config.self_normalize);
    const Vector grad = tape.grad_params(loss);
    result.epoch_losses.push_back(loss.scalar());
    adam_step(params, grad, state, hyper);
  }
  return result;
}

FlowTrainResult train_flow(FlowModel flow, const FlowModel& proposal,
                           const std::function<Vector(const Matrix&)>& target, const FlowTrainConfig& config,
                           RngStream& rng) {
  if (config.epochs <= 0) return {std::move(flow), {}};
  if (config.pool < 1) throw Error("train_flow: pool size must be positive");
  const Matrix pool = proposal.sample(config.pool, rng);
  const Vector tvals = target(pool);
  const Vector plog = proposal.log_pdf(pool);
  return train_flow_on_pool(std::move(flow), pool, tvals, plog, config, rng);
}

}  // namespace das2
