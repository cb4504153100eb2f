#include "das2/nets.hpp"

#include "das2/error.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace das2 {

namespace {

const char* ansatz_name(Ansatz::Kind k) {
  switch (k) {
    case Ansatz::Kind::none:
      return "none";
    case Ansatz::Kind::ic_shift:
      return "ic_shift";
    case Ansatz::Kind::ic_zero:
      return "ic_zero";
  }
  return "none";
}

Ansatz::Kind ansatz_from_name(const std::string& name) {
  if (name == "none") return Ansatz::Kind::none;
  if (name == "ic_shift") return Ansatz::Kind::ic_shift;
  if (name == "ic_zero") return Ansatz::Kind::ic_zero;
  throw Error("unknown ansatz '" + name + "'");
}

void check_sizes(const std::vector<Index>& sizes, const char* what) {
  if (sizes.size() < 2) throw Error(std::string(what) + ": need at least an input and an output layer");
  for (Index s : sizes) {
    if (s < 1) throw Error(std::string(what) + ": layer widths must be positive");
  }
}

// Column `col` of `points` as an n x 1 input, carrying a unit tangent when seeded.
ad::Var column_input(ad::Tape& tape, const Matrix& points, Index col, bool seeded) {
  Matrix c = points.col(col);
  if (seeded) return tape.seeded_input(std::move(c), 0);
  return tape.input(std::move(c));
}

}  // namespace

DenseStack::DenseStack(std::vector<Index> sizes, std::size_t& offset) : sizes_(std::move(sizes)) {
  check_sizes(sizes_, "DenseStack");
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    DenseLayer layer;
    layer.in = sizes_[i];
    layer.out = sizes_[i + 1];
    layer.weight_offset = offset;
    offset += static_cast<std::size_t>(layer.in * layer.out);
    layer.bias_offset = offset;
    offset += static_cast<std::size_t>(layer.out);
    layers_.push_back(layer);
  }
}

std::size_t DenseStack::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.in * l.out + l.out);
  return n;
}

ad::Var DenseStack::forward(ad::Tape& tape, ad::Var input) const {
  if (input.cols() != input_dim()) {
    throw DimensionError("DenseStack::forward: input width", static_cast<std::size_t>(input_dim()),
                         static_cast<std::size_t>(input.cols()));
  }
  ad::Var h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const DenseLayer& l = layers_[i];
    ad::Var w = tape.parameter(l.weight_offset, l.out, l.in);
    ad::Var b = tape.parameter(l.bias_offset, 1, l.out);
    h = ad::matmul_transposed(h, w) + b;
    if (i + 1 < layers_.size()) h = ad::tanh(h);
  }
  return h;
}

Matrix DenseStack::evaluate(std::span<const double> params, const Matrix& input) const {
  if (input.cols() != input_dim()) {
    throw DimensionError("DenseStack::evaluate: input width", static_cast<std::size_t>(input_dim()),
                         static_cast<std::size_t>(input.cols()));
  }
  Matrix h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const DenseLayer& l = layers_[i];
    Eigen::Map<const Matrix> w(params.data() + l.weight_offset, l.out, l.in);
    Eigen::Map<const Eigen::RowVectorXd> b(params.data() + l.bias_offset, l.out);
    Matrix next = h * w.transpose();
    next.rowwise() += b;
    if (i + 1 < layers_.size()) next = next.array().tanh();
    h = std::move(next);
  }
  return h;
}

void DenseStack::init_xavier(std::span<double> params, std::mt19937_64& rng) const {
  for (const auto& l : layers_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index k = 0; k < l.in * l.out; ++k) params[l.weight_offset + static_cast<std::size_t>(k)] = dist(rng);
    for (Index k = 0; k < l.out; ++k) params[l.bias_offset + static_cast<std::size_t>(k)] = 0.0;
  }
}

Surrogate Surrogate::mlp(std::vector<Index> layer_sizes, std::uint64_t seed, Ansatz ansatz) {
  if (layer_sizes.empty()) throw Error("mlp_init: empty layer list");
  check_sizes(layer_sizes, "mlp_init");
  Surrogate s;
  s.kind_ = SurrogateKind::mlp;
  s.ansatz_ = ansatz;
  std::size_t offset = 0;
  s.nets_.emplace_back(std::move(layer_sizes), offset);
  s.params_ = Vector::Zero(static_cast<Index>(offset));
  std::mt19937_64 rng(seed);
  s.nets_.front().init_xavier(std::span<double>(s.params_.data(), offset), rng);
  return s;
}

Surrogate Surrogate::branch_trunk(std::vector<Index> trunk_sizes, std::vector<Index> branch_sizes,
                                  std::uint64_t seed, Ansatz ansatz) {
  check_sizes(trunk_sizes, "branch_trunk trunk");
  check_sizes(branch_sizes, "branch_trunk branch");
  if (trunk_sizes.back() != branch_sizes.back()) {
    throw DimensionError("branch_trunk: branch output width must equal trunk output width",
                         static_cast<std::size_t>(trunk_sizes.back()), static_cast<std::size_t>(branch_sizes.back()));
  }
  Surrogate s;
  s.kind_ = SurrogateKind::branch_trunk;
  s.ansatz_ = ansatz;
  std::size_t offset = 0;
  s.nets_.emplace_back(std::move(trunk_sizes), offset);
  s.nets_.emplace_back(std::move(branch_sizes), offset);
  s.b0_offset_ = offset;
  ++offset;
  s.params_ = Vector::Zero(static_cast<Index>(offset));
  std::mt19937_64 rng(seed);
  std::span<double> all(s.params_.data(), offset);
  s.nets_[0].init_xavier(all, rng);
  s.nets_[1].init_xavier(all, rng);
  return s;
}

Index Surrogate::input_dim() const {
  if (kind_ == SurrogateKind::mlp) return nets_.front().input_dim();
  return nets_[0].input_dim() + nets_[1].input_dim();
}

Index Surrogate::spatial_dim() const {
  if (kind_ == SurrogateKind::mlp) return 1;
  return nets_[0].input_dim();
}

ad::Var Surrogate::raw_forward(ad::Tape& tape, const Matrix& points, std::optional<Index> seed_coord) const {
  if (kind_ == SurrogateKind::mlp) {
    ad::Var in = seed_coord ? tape.seeded_input(points, *seed_coord) : tape.input(points);
    return nets_.front().forward(tape, in);
  }
  const Index ns = spatial_dim();
  const Index nd = param_dim();
  Matrix x = points.leftCols(ns);
  Matrix xi = points.rightCols(nd);
  ad::Var tin = (seed_coord && *seed_coord < ns) ? tape.seeded_input(std::move(x), *seed_coord) : tape.input(std::move(x));
  ad::Var bin = (seed_coord && *seed_coord >= ns) ? tape.seeded_input(std::move(xi), *seed_coord - ns)
                                                  : tape.input(std::move(xi));
  ad::Var q = nets_[0].forward(tape, tin);
  ad::Var t = nets_[1].forward(tape, bin);
  ad::Var b0 = tape.parameter(b0_offset_, 1, 1);
  return ad::row_sum(q * t) + b0;
}

ad::Var Surrogate::wrap(ad::Tape& tape, ad::Var raw, ad::Var x) const {
  switch (ansatz_.kind) {
    case Ansatz::Kind::none:
      return raw;
    case Ansatz::Kind::ic_zero:
      return x * raw;
    case Ansatz::Kind::ic_shift:
      return tape.constant(ansatz_.u0) + x * raw;
  }
  return raw;
}

ad::Var Surrogate::forward(ad::Tape& tape, const Matrix& points, std::optional<Index> seed_coord) const {
  if (points.cols() != input_dim()) {
    throw DimensionError("Surrogate::forward: point dimension", static_cast<std::size_t>(input_dim()),
                         static_cast<std::size_t>(points.cols()));
  }
  if (seed_coord && (*seed_coord < 0 || *seed_coord >= input_dim())) {
    throw DimensionError("Surrogate::forward: input coordinate out of range; input dimension",
                         static_cast<std::size_t>(input_dim()), static_cast<std::size_t>(*seed_coord));
  }
  ad::Var raw = raw_forward(tape, points, seed_coord);
  if (ansatz_.kind == Ansatz::Kind::none) return raw;
  ad::Var x = column_input(tape, points, 0, seed_coord && *seed_coord == 0);
  return wrap(tape, raw, x);
}

ad::Var Surrogate::forward_product(ad::Tape& tape, const Matrix& x_grid, const Matrix& xi_batch) const {
  if (x_grid.cols() != spatial_dim()) {
    throw DimensionError("Surrogate::forward_product: x grid width", static_cast<std::size_t>(spatial_dim()),
                         static_cast<std::size_t>(x_grid.cols()));
  }
  if (xi_batch.cols() != param_dim()) {
    throw DimensionError("Surrogate::forward_product: parameter width", static_cast<std::size_t>(param_dim()),
                         static_cast<std::size_t>(xi_batch.cols()));
  }
  const Index nx = x_grid.rows();
  const Index nb = xi_batch.rows();
  if (kind_ == SurrogateKind::mlp) {
    Matrix pts(nx * nb, input_dim());
    for (Index j = 0; j < nb; ++j) {
      pts.block(j * nx, 0, nx, spatial_dim()) = x_grid;
      pts.block(j * nx, spatial_dim(), nx, param_dim()) = xi_batch.row(j).replicate(nx, 1);
    }
    return forward(tape, pts, Index{0});
  }
  ad::Var tin = tape.seeded_input(x_grid, 0);
  ad::Var bin = tape.input(xi_batch);
  ad::Var q = nets_[0].forward(tape, tin);
  ad::Var t = nets_[1].forward(tape, bin);
  ad::Var raw = ad::matmul_transposed(q, t) + tape.parameter(b0_offset_, 1, 1);
  if (ansatz_.kind == Ansatz::Kind::none) return raw;
  return wrap(tape, raw, column_input(tape, x_grid, 0, true));
}

Vector Surrogate::evaluate_raw(const Matrix& points) const {
  if (points.cols() != input_dim()) {
    throw DimensionError("Surrogate::evaluate: point dimension", static_cast<std::size_t>(input_dim()),
                         static_cast<std::size_t>(points.cols()));
  }
  const std::span<const double> p(params_.data(), params_.size());
  if (kind_ == SurrogateKind::mlp) return nets_.front().evaluate(p, points).col(0);
  const Matrix q = nets_[0].evaluate(p, points.leftCols(spatial_dim()));
  const Matrix t = nets_[1].evaluate(p, points.rightCols(param_dim()));
  return q.cwiseProduct(t).rowwise().sum().array() + params_[static_cast<Index>(b0_offset_)];
}

Vector Surrogate::evaluate(const Matrix& points) const {
  Vector raw = evaluate_raw(points);
  switch (ansatz_.kind) {
    case Ansatz::Kind::none:
      return raw;
    case Ansatz::Kind::ic_zero:
      return points.col(0).cwiseProduct(raw);
    case Ansatz::Kind::ic_shift:
      return (points.col(0).cwiseProduct(raw)).array() + ansatz_.u0;
  }
  return raw;
}

nlohmann::json Surrogate::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = kind_ == SurrogateKind::mlp ? "mlp" : "branch_trunk";
  nlohmann::json sizes = nlohmann::json::array();
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (const auto& net : nets_) {
    sizes.push_back(net.sizes());
    for (const auto& l : net.layers()) {
      const auto w0 = static_cast<Index>(l.weight_offset);
      const auto b0 = static_cast<Index>(l.bias_offset);
      weights.push_back(std::vector<double>(params_.data() + w0, params_.data() + w0 + l.in * l.out));
      biases.push_back(std::vector<double>(params_.data() + b0, params_.data() + b0 + l.out));
    }
  }
  j["layer_sizes"] = sizes;
  j["activation"] = "tanh";
  j["weights"] = weights;
  j["biases"] = biases;
  if (kind_ == SurrogateKind::branch_trunk) j["b0"] = params_[static_cast<Index>(b0_offset_)];
  j["ansatz"] = {{"kind", ansatz_name(ansatz_.kind)}, {"u0", ansatz_.u0}};
  return j;
}

Surrogate Surrogate::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw Error("surrogate checkpoint: unsupported version");
    if (j.at("activation").get<std::string>() != "tanh") throw Error("surrogate checkpoint: only tanh is supported");
    const std::string kind = j.at("kind").get<std::string>();
    const auto sizes = j.at("layer_sizes").get<std::vector<std::vector<Index>>>();
    Ansatz ansatz;
    ansatz.kind = ansatz_from_name(j.at("ansatz").at("kind").get<std::string>());
    ansatz.u0 = j.at("ansatz").at("u0").get<double>();
    Surrogate s = [&] {
      if (kind == "mlp") {
        if (sizes.size() != 1) throw DimensionError("surrogate checkpoint: mlp sub-network count", 1, sizes.size());
        return Surrogate::mlp(sizes[0], 0, ansatz);
      }
      if (kind == "branch_trunk") {
        if (sizes.size() != 2) {
          throw DimensionError("surrogate checkpoint: branch_trunk sub-network count", 2, sizes.size());
        }
        return Surrogate::branch_trunk(sizes[0], sizes[1], 0, ansatz);
      }
      throw Error("surrogate checkpoint: unknown kind '" + kind + "'");
    }();
    const auto weights = j.at("weights").get<std::vector<std::vector<double>>>();
    const auto biases = j.at("biases").get<std::vector<std::vector<double>>>();
    std::size_t layer = 0;
    for (const auto& net : s.nets_) {
      for (const auto& l : net.layers()) {
        if (layer >= weights.size() || layer >= biases.size()) {
          throw DimensionError("surrogate checkpoint: layer count", layer + 1, std::min(weights.size(), biases.size()));
        }
        const auto& w = weights[layer];
        const auto& b = biases[layer];
        if (w.size() != static_cast<std::size_t>(l.in * l.out)) {
          throw DimensionError("surrogate checkpoint: weight entries", static_cast<std::size_t>(l.in * l.out), w.size());
        }
        if (b.size() != static_cast<std::size_t>(l.out)) {
          throw DimensionError("surrogate checkpoint: bias entries", static_cast<std::size_t>(l.out), b.size());
        }
        std::copy(w.begin(), w.end(), s.params_.data() + l.weight_offset);
        std::copy(b.begin(), b.end(), s.params_.data() + l.bias_offset);
        ++layer;
      }
    }
    if (layer != weights.size()) throw DimensionError("surrogate checkpoint: layer count", layer, weights.size());
    if (s.kind_ == SurrogateKind::branch_trunk) s.params_[static_cast<Index>(s.b0_offset_)] = j.at("b0").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("surrogate checkpoint: ") + e.what());
  }
}

void Surrogate::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

Surrogate Surrogate::load(const std::filesystem::path& path) {
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

namespace {

Matrix point_row(const Surrogate& net, std::span<const double> point) {
  if (static_cast<Index>(point.size()) != net.input_dim()) {
    throw DimensionError("point dimension", static_cast<std::size_t>(net.input_dim()), point.size());
  }
  Matrix row(1, net.input_dim());
  for (Index k = 0; k < net.input_dim(); ++k) row(0, k) = point[static_cast<std::size_t>(k)];
  return row;
}

}  // namespace

Evaluation forward_eval(const Surrogate& net, std::span<const double> point) {
  Matrix row = point_row(net, point);
  Evaluation e;
  e.tape = std::make_unique<ad::Tape>(std::span<const double>(net.parameters().data(), net.parameter_count()));
  e.output = net.forward(*e.tape, row);
  e.value = e.output.value()(0, 0);
  return e;
}

Evaluation grad_input(const Surrogate& net, std::span<const double> point, Index coord) {
  if (coord < 0 || coord >= net.input_dim()) {
    throw DimensionError("grad_input: coordinate out of range; input dimension", static_cast<std::size_t>(net.input_dim()),
                         static_cast<std::size_t>(coord));
  }
  Matrix row = point_row(net, point);
  Evaluation e;
  e.tape = std::make_unique<ad::Tape>(std::span<const double>(net.parameters().data(), net.parameter_count()));
  ad::Var u = net.forward(*e.tape, row, coord);
  e.output = ad::tangent_of(u);
  e.value = e.output.value()(0, 0);
  return e;
}

double mlp_eval(const Surrogate& s, std::span<const double> point) {
  if (s.kind() != SurrogateKind::mlp) throw Error("mlp_eval: surrogate is not an mlp");
  for (double v : point) {
    if (std::isnan(v)) throw Error("mlp_eval: NaN input");
  }
  return s.evaluate(point_row(s, point))[0];
}

double branch_trunk_eval(const Surrogate& s, double x, std::span<const double> xi) {
  if (s.kind() != SurrogateKind::branch_trunk) throw Error("branch_trunk_eval: surrogate is not branch_trunk");
  if (s.spatial_dim() != 1) throw DimensionError("branch_trunk_eval: trunk input width", 1, static_cast<std::size_t>(s.spatial_dim()));
  Matrix row(1, s.input_dim());
  row(0, 0) = x;
  if (static_cast<Index>(xi.size()) != s.param_dim()) {
    throw DimensionError("branch_trunk_eval: parameter dimension", static_cast<std::size_t>(s.param_dim()), xi.size());
  }
  for (std::size_t k = 0; k < xi.size(); ++k) row(0, static_cast<Index>(k) + 1) = xi[k];
  return s.evaluate(row)[0];
}

double apply_ansatz(const Surrogate& s, double raw, double x) {
  switch (s.ansatz().kind) {
    case Ansatz::Kind::none:
      return raw;
    case Ansatz::Kind::ic_zero:
      return x * raw;
    case Ansatz::Kind::ic_shift:
      return s.ansatz().u0 + x * raw;
  }
  return raw;
}

}  // namespace das2
