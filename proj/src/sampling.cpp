#include "das2/sampling.hpp"

#include "das2/error.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace das2 {

namespace {

constexpr std::array<std::uint64_t, 20> kPrimes{2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                                                31, 37, 41, 43, 47, 53, 59, 61, 67, 71};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainingSet TrainingSet::from_points(Matrix points, int stage) {
  TrainingSet s;
  s.stages.assign(static_cast<std::size_t>(points.rows()), stage);
  s.points = std::move(points);
  return s;
}

void TrainingSet::validate(const BoxDomain& domain) const {
  if (static_cast<Index>(stages.size()) != size()) {
    throw DimensionError("TrainingSet: stage tag count", static_cast<std::size_t>(size()), stages.size());
  }
  if (size() > 0 && points.cols() != domain.dim()) {
    throw DimensionError("TrainingSet: point dimension", static_cast<std::size_t>(domain.dim()),
                         static_cast<std::size_t>(points.cols()));
  }
  for (Index i = 0; i < size(); ++i) {
    if (!domain.contains(points.row(i))) throw Error("TrainingSet: point " + std::to_string(i) + " lies outside the domain");
    if (i > 0 && stages[static_cast<std::size_t>(i)] < stages[static_cast<std::size_t>(i - 1)]) {
      throw Error("TrainingSet: stage tags decrease at row " + std::to_string(i));
    }
  }
  if (weighted()) {
    if (weights.size() != size()) {
      throw DimensionError("TrainingSet: weight count", static_cast<std::size_t>(size()), static_cast<std::size_t>(weights.size()));
    }
    if ((weights.array() <= 0.0).any()) throw Error("TrainingSet: weights must be strictly positive");
  }
}

void TrainingSet::write_csv(const std::filesystem::path& path, Index spatial_dim) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const Index d = points.cols() - spatial_dim;
  for (Index k = 0; k < spatial_dim; ++k) out << "x_" << k << ',';
  for (Index k = 0; k < d; ++k) out << "xi_" << k << ',';
  out << "stage,weight\n";
  for (Index i = 0; i < size(); ++i) {
    for (Index k = 0; k < points.cols(); ++k) out << format_double(points(i, k)) << ',';
    out << stages[static_cast<std::size_t>(i)] << ',' << format_double(weighted() ? weights[i] : 1.0) << '\n';
  }
}

Matrix uniform_sample(const BoxDomain& domain, Index n, RngStream& rng) {
  if (n < 0) throw Error("uniform_sample: negative count");
  Matrix out(n, domain.dim());
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < domain.dim(); ++k) {
      out(i, k) = domain.lower()[k] + (domain.upper()[k] - domain.lower()[k]) * rng.uniform();
    }
  }
  return out;
}

double radical_inverse(std::uint64_t base, std::uint64_t index) {
  double result = 0.0;
  double f = 1.0 / static_cast<double>(base);
  while (index > 0) {
    result += f * static_cast<double>(index % base);
    index /= base;
    f /= static_cast<double>(base);
  }
  return result;
}

Matrix halton_sample(const BoxDomain& domain, Index n, Index skip) {
  if (domain.dim() > static_cast<Index>(kPrimes.size())) {
    throw DimensionError("halton_sample: dimension exceeds prime table", kPrimes.size(), static_cast<std::size_t>(domain.dim()));
  }
  if (n < 0 || skip < 0) throw Error("halton_sample: negative count or skip");
  Matrix out(n, domain.dim());
  for (Index i = 0; i < n; ++i) {
    const auto index = static_cast<std::uint64_t>(i + 1 + skip);
    for (Index k = 0; k < domain.dim(); ++k) {
      const double u = radical_inverse(kPrimes[static_cast<std::size_t>(k)], index);
      out(i, k) = domain.lower()[k] + (domain.upper()[k] - domain.lower()[k]) * u;
    }
  }
  return out;
}

std::vector<Index> rar_select(const Vector& residuals, Index n) {
  if (n > residuals.size()) {
    throw DimensionError("rar_select: selection exceeds candidate count", static_cast<std::size_t>(residuals.size()),
                         static_cast<std::size_t>(n));
  }
  if (n < 0) throw Error("rar_select: negative selection count");
  std::vector<Index> order(static_cast<std::size_t>(residuals.size()));
  std::iota(order.begin(), order.end(), Index{0});
  const auto before = [&](Index a, Index b) {
    const double ra = residuals[a] * residuals[a];
    const double rb = residuals[b] * residuals[b];
    return ra != rb ? ra > rb : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + n, order.end(), before);
  order.resize(static_cast<std::size_t>(n));
  return order;
}

Matrix rar_select(const Matrix& candidates, const std::function<Vector(const Matrix&)>& residual_fn, Index n) {
  const std::vector<Index> picked = rar_select(residual_fn(candidates), n);
  Matrix out(n, candidates.cols());
  for (std::size_t i = 0; i < picked.size(); ++i) out.row(static_cast<Index>(i)) = candidates.row(picked[i]);
  return out;
}

double cutoff_h(const Eigen::Ref<const Eigen::RowVectorXd>& point, const BoxDomain& omega) {
  const Vector lo = omega.outer_lower();
  const Vector hi = omega.outer_upper();
  double h = 1.0;
  for (Index k = 0; k < omega.dim(); ++k) {
    const double p = point[k];
    if (p < lo[k] || p > hi[k]) throw Error("cutoff_h: point lies outside B");
    double factor = 1.0;
    if (p < omega.lower()[k]) {
      factor = (p - lo[k]) / (omega.lower()[k] - lo[k]);
    } else if (p > omega.upper()[k]) {
      factor = (hi[k] - p) / (hi[k] - omega.upper()[k]);
    }
    h = std::min(h, factor);
  }
  return h;
}

Vector cutoff_h_rows(const Matrix& points, const BoxDomain& omega) {
  Vector out(points.rows());
  for (Index i = 0; i < points.rows(); ++i) out[i] = cutoff_h(points.row(i), omega);
  return out;
}

TrainingSet refine_training_set(const TrainingSet& current, const TrainingSet& generated, RefineMode mode,
                                const std::optional<Vector>& density) {
  if (!current.stages.empty() && !generated.stages.empty()) {
    const int latest = *std::max_element(current.stages.begin(), current.stages.end());
    const int earliest = *std::min_element(generated.stages.begin(), generated.stages.end());
    if (earliest <= latest) throw Error("refine_training_set: new stage tags must exceed existing ones");
  }
  if (mode == RefineMode::replace) {
    if (!density) throw Error("refine_training_set: replace mode needs the sampling density");
    if (density->size() != generated.size()) {
      throw DimensionError("refine_training_set: density count", static_cast<std::size_t>(generated.size()),
                           static_cast<std::size_t>(density->size()));
    }
    if ((density->array() <= 0.0).any()) throw Error("refine_training_set: density must be positive");
    TrainingSet out = generated;
    out.weights = density->cwiseInverse();
    return out;
  }
  if (generated.size() == 0) {
    TrainingSet out = current;
    out.weights.resize(0);
    return out;
  }
  if (current.size() > 0 && current.points.cols() != generated.points.cols()) {
    throw DimensionError("refine_training_set: point dimension", static_cast<std::size_t>(current.points.cols()),
                         static_cast<std::size_t>(generated.points.cols()));
  }
  TrainingSet out;
  out.points.resize(current.size() + generated.size(), generated.points.cols());
  if (current.size() > 0) out.points.topRows(current.size()) = current.points;
  out.points.bottomRows(generated.size()) = generated.points;
  out.stages = current.stages;
  out.stages.insert(out.stages.end(), generated.stages.begin(), generated.stages.end());
  return out;
}

}  // namespace das2
