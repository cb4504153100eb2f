// Acceptance checks: prints one PASS/FAIL line per criterion. Arguments select
// a subset of criteria by number; no arguments runs all of them.
#include "das2/experiment.hpp"
#include "das2/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

using namespace das2;

namespace {

const std::filesystem::path source_dir = DAS2_SOURCE_DIR;
const std::filesystem::path work_dir = std::filesystem::temp_directory_path() / "das2_acceptance";

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.3g", x);
  return "[" + s + "]";
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

FlowModel random_flow(const BoxDomain& box, std::uint64_t seed) {
  FlowConfig c;
  c.K = 2;
  c.L = 3;
  c.hidden = 16;
  c.init_scale = 0.3;
  return FlowModel::init(box, c, seed);
}

Matrix uniform_in_outer(const BoxDomain& box, Index n, std::uint64_t seed) {
  RngStream rng(seed, 0);
  const Vector lo = box.outer_lower(), hi = box.outer_upper();
  Matrix pts(n, box.dim());
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < box.dim(); ++k) pts(i, k) = lo[k] + (hi[k] - lo[k]) * rng.uniform();
  return pts;
}

Verdict invertibility() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (Index d : {2, 6}) {
    const BoxDomain box(Vector::Zero(d), Vector::Ones(d), 0.05);
    const FlowModel f = random_flow(box, 100 + static_cast<std::uint64_t>(d));
    const Matrix x = uniform_in_outer(box, 10000, 7);
    worst = std::max(worst, (f.inverse(f.forward(x).z) - x).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-8 && secs < 10.0, "max error " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Verdict logdet() {
  const BoxDomain box(Vector::Zero(2), Vector::Ones(2), 0.05);
  const FlowModel f = random_flow(box, 202);
  const Matrix x = uniform_in_outer(box, 100, 9);
  const Vector analytic = f.forward(x).logdet;
  const double h = 1e-6;
  double worst = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    Eigen::Matrix2d jac;
    for (Index k = 0; k < 2; ++k) {
      Matrix up = x.row(i), down = x.row(i);
      up(0, k) += h;
      down(0, k) -= h;
      jac.col(k) = ((f.forward(up).z - f.forward(down).z) / (2 * h)).transpose();
    }
    worst = std::max(worst, std::abs(analytic[i] - std::log(std::abs(jac.determinant()))));
  }
  return {worst < 1e-4, "max |analytic - fd| " + fmt("%.3g", worst)};
}

// Flow fitted to an unnormalized Gaussian bump, trained once and shared.
struct BumpFit {
  FlowModel flow;
  double seconds;
};

const BumpFit& bump_fit();

Verdict normalization() {
  const FlowModel& f = bump_fit().flow;
  const BoxDomain& box = f.box();
  const Index n = 400;
  const Vector lo = box.outer_lower(), hi = box.outer_upper();
  const double hx = (hi[0] - lo[0]) / (n - 1), hy = (hi[1] - lo[1]) / (n - 1);
  // The density vanishes on the boundary of B, so only interior nodes carry weight.
  Matrix pts((n - 2) * (n - 2), 2);
  for (Index i = 1; i + 1 < n; ++i)
    for (Index j = 1; j + 1 < n; ++j) pts.row((i - 1) * (n - 2) + j - 1) << lo[0] + i * hx, lo[1] + j * hy;
  const double mass = f.log_pdf(pts).array().exp().sum() * hx * hy;
  return {mass >= 0.99 && mass <= 1.01, "mass " + fmt("%.5f", mass)};
}

Verdict gradients() {
  const Problem problem = make_param_ode();
  const Surrogate base = Surrogate::mlp({2, 4, 1}, 17, problem.ansatz());
  RngStream rng(18, 0);
  Matrix pts(10, 2);
  for (Index i = 0; i < 10; ++i) pts.row(i) << rng.uniform(), -3.0 + 6.0 * rng.uniform();
  auto loss = [&](const Vector& p, Vector* g) {
    Surrogate s = base;
    s.parameters() = p;
    ad::Tape tape({s.parameters().data(), static_cast<std::size_t>(p.size())});
    ad::Var l = empirical_loss(tape, s, problem, pts);
    if (g) *g = tape.grad_params(l);
    return l.scalar();
  };
  const double err = ad::check_gradient(loss, base.parameters(), 1e-6);
  return {err < 1e-4, "relative error " + fmt("%.3g", err) + " over " + std::to_string(base.parameters().size()) +
                          " parameters"};
}

const BumpFit& bump_fit() {
  static const BumpFit fit = [] {
    const auto t0 = std::chrono::steady_clock::now();
    const BoxDomain box(Vector::Zero(2), Vector::Ones(2), 0.05);
    FlowConfig fc;
    fc.K = 2;
    fc.L = 6;
    fc.hidden = 24;
    const FlowModel init = FlowModel::init(box, fc, 5);
    auto target = [](const Matrix& x) {
      return Vector((-((x.array() - 0.7).square().rowwise().sum()) / (2 * 0.1 * 0.1)).exp());
    };
    FlowTrainConfig tc;
    tc.epochs = 3000;
    tc.batch = 500;
    tc.pool = 20000;
    tc.lr = 1e-3;
    RngStream rng(6, 0);
    FlowModel trained = train_flow(init, init, target, tc, rng).flow;
    return BumpFit{std::move(trained), seconds_since(t0)};
  }();
  return fit;
}

Verdict density_fit() {
  const double c = 0.7, sigma = 0.1;
  const auto t0 = std::chrono::steady_clock::now();
  const BumpFit& fit = bump_fit();
  RngStream rng(7, 0);
  const Matrix s = fit.flow.sample(100000, rng);
  const Eigen::RowVectorXd mean = s.colwise().mean();
  const Eigen::RowVectorXd std_dev =
      ((s.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(s.rows() - 1)).sqrt();
  const double secs = fit.seconds + seconds_since(t0);
  const bool ok = (mean.array() - c).abs().maxCoeff() <= 0.05 &&
                  ((std_dev.array() - sigma).abs() / sigma).maxCoeff() <= 0.2 && secs < 300.0;
  return {ok, "mean (" + fmt("%.4f", mean[0]) + ", " + fmt("%.4f", mean[1]) + "), std (" + fmt("%.4f", std_dev[0]) +
                  ", " + fmt("%.4f", std_dev[1]) + "), " + fmt("%.1f", secs) + " s"};
}

Verdict rk45() {
  std::vector<double> grid(101);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(i) / 100.0;
  const double decay = 6.0;
  double linear_err = 0.0;
  for (double c : {-1.0, -0.4, 0.3, 0.8, 1.0}) {
    std::vector<double> xi(5, 0.0);
    xi[0] = c;
    const double norm2 = (c - 0.5) * (c - 0.5) + 4 * 0.25;
    const double slope = c * std::exp(-decay * norm2);
    const Vector u = rk45_oracle(xi, grid, decay);
    for (std::size_t i = 0; i < grid.size(); ++i)
      linear_err = std::max(linear_err, std::abs(u[static_cast<Index>(i)] - slope * grid[i]));
  }
  double self_err = 0.0;
  RngStream rng(11, 0);
  Rk45Options fine;
  fine.atol = 0.5e-8;
  fine.rtol = 0.5e-8;
  // Eight coefficients give a degree-7 right-hand side, beyond what one
  // Dormand-Prince step integrates exactly; the coarse grid leaves the step
  // size to the tolerance.
  const std::vector<double> coarse{0.0, 0.5, 1.0};
  const std::vector<const std::vector<double>*> grids{&grid, &coarse};
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> xi(8);
    for (double& v : xi) v = -1.0 + 2.0 * rng.uniform();
    for (const auto* g : grids) {
      const Vector a = rk45_oracle(xi, *g, 0.0);
      const Vector b = rk45_oracle(xi, *g, 0.0, fine);
      self_err = std::max(self_err, (a - b).cwiseAbs().maxCoeff());
    }
  }
  return {linear_err < 1e-6 && self_err < 1e-7,
          "closed-form error " + fmt("%.3g", linear_err) + ", self-convergence " + fmt("%.3g", self_err)};
}

// Experiment runs shared by several criteria, memoized by label.
struct Runs {
  std::map<std::string, RunResult> cache;
  std::map<std::string, double> seconds;

  const RunResult& get(const std::string& config_name, Baseline baseline, RefineMode refine, std::uint64_t seed) {
    const std::string label = config_name + "_" + to_string(baseline) + "_" + to_string(refine) + "_" +
                              std::to_string(seed);
    auto it = cache.find(label);
    if (it != cache.end()) return it->second;
    ExperimentConfig c = load_config(source_dir / "configs" / (config_name + ".json"));
    c.adaptive.baseline = baseline;
    c.adaptive.refine = refine;
    const auto t0 = std::chrono::steady_clock::now();
    RunResult r = run_experiment(c, seed, work_dir / label);
    seconds[label] = seconds_since(t0);
    std::cerr << "  run " << label << ": final mse " << r.final_error.mse << ", " << seconds[label] << " s\n";
    return cache.emplace(label, std::move(r)).first->second;
  }
  double max_seconds(const std::string& prefix) const {
    double m = 0.0;
    for (const auto& [k, v] : seconds)
      if (k.rfind(prefix, 0) == 0) m = std::max(m, v);
    return m;
  }
};

Runs runs;
const std::vector<std::uint64_t> three_seeds{1, 2, 3};

Verdict ode_ratios() {
  std::vector<double> final_mse, stage0, uniform;
  for (auto seed : three_seeds) {
    const RunResult& d = runs.get("ode_desk", Baseline::none, RefineMode::grow, seed);
    final_mse.push_back(d.final_error.mse);
    stage0.push_back(d.record.stages.front().validation.mse);
    uniform.push_back(runs.get("ode_desk", Baseline::uniform, RefineMode::grow, seed).final_error.mse);
  }
  const double m_final = median(final_mse), m_stage0 = median(stage0), m_uniform = median(uniform);
  const double secs = runs.max_seconds("ode_desk_");
  const bool ok = m_final <= 0.5 * m_stage0 && m_final <= 0.5 * m_uniform && secs < 900.0;
  return {ok, "median final " + fmt("%.3g", m_final) + " " + join(final_mse) + ", stage-0 " + fmt("%.3g", m_stage0) +
                  " " + join(stage0) + ", uniform " + fmt("%.3g", m_uniform) + " " + join(uniform) +
                  ", ratios " + fmt("%.3g", m_final / m_stage0) + " and " + fmt("%.3g", m_final / m_uniform) +
                  ", slowest run " + fmt("%.0f", secs) + " s"};
}

Verdict concentration() {
  std::vector<double> fractions;
  for (auto seed : three_seeds) {
    const TrainingSet& s = runs.get("ode_desk", Baseline::none, RefineMode::grow, seed).training_set;
    Index in_stage = 0, high = 0;
    for (Index i = 0; i < s.size(); ++i) {
      if (s.stages[static_cast<std::size_t>(i)] != 1) continue;
      ++in_stage;
      high += s.points(i, 1) > 2.0;
    }
    fractions.push_back(in_stage ? static_cast<double>(high) / static_cast<double>(in_stage) : 0.0);
  }
  const double m = median(fractions);
  return {m >= 2.0 / 6.0, "median fraction with xi > 2 " + fmt("%.3f", m) + " " + join(fractions) +
                              " (threshold 0.333)"};
}

Verdict replace_monotone() {
  std::vector<std::vector<double>> losses;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const RunResult& r = runs.get("ode_desk", Baseline::none, RefineMode::replace, seed);
    std::vector<double> l;
    for (const auto& st : r.record.stages) l.push_back(st.set_loss);
    losses.push_back(l);
  }
  std::vector<double> med;
  for (std::size_t k = 0; k < losses.front().size(); ++k) {
    std::vector<double> col;
    for (const auto& l : losses) col.push_back(l[k]);
    med.push_back(median(col));
  }
  bool ok = true;
  for (std::size_t k = 0; k + 1 < med.size(); ++k) ok = ok && med[k + 1] <= 1.10 * med[k];
  return {ok, "median weighted set loss per stage " + join(med)};
}

Verdict oplearn_ratios() {
  std::vector<double> das, uniform, rar;
  for (auto seed : three_seeds) {
    das.push_back(runs.get("oplearn_desk", Baseline::none, RefineMode::grow, seed).final_error.mse);
    uniform.push_back(runs.get("oplearn_desk", Baseline::uniform, RefineMode::grow, seed).final_error.mse);
    rar.push_back(runs.get("oplearn_desk", Baseline::rar, RefineMode::grow, seed).final_error.mse);
  }
  const double md = median(das), mu = median(uniform), mr = median(rar);
  const double secs = runs.max_seconds("oplearn_desk_");
  const bool ok = md <= mu / 3.0 && md <= mr / 2.0 && secs < 2700.0;
  return {ok, "median das2 " + fmt("%.3g", md) + " " + join(das) + ", uniform " + fmt("%.3g", mu) + " " +
                  join(uniform) + ", rar " + fmt("%.3g", mr) + " " + join(rar) + ", ratios " + fmt("%.3g", md / mu) +
                  " and " + fmt("%.3g", md / mr) + ", slowest run " + fmt("%.0f", secs) + " s"};
}

Verdict reproducibility() {
  runs.get("ode_desk", Baseline::none, RefineMode::grow, 1);
  const ExperimentConfig c = load_config(source_dir / "configs/ode_desk.json");
  const auto again = work_dir / "ode_desk_repeat";
  run_experiment(c, std::uint64_t{1}, again);
  const std::string a = read_file(work_dir / "ode_desk_none_grow_1/metrics.csv");
  const std::string b = read_file(again / "metrics.csv");
  return {!a.empty() && a == b, "metrics.csv " + std::to_string(a.size()) + " bytes, " +
                                    (a == b ? "identical" : "different") + " (threads " +
                                    std::to_string(thread_count()) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  std::filesystem::remove_all(work_dir);
  std::filesystem::create_directories(work_dir);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"flow invertibility", invertibility},
      {"log-det vs finite differences", logdet},
      {"density normalization", normalization},
      {"loss gradient vs finite differences", gradients},
      {"Gaussian bump density fit", density_fit},
      {"parametric ODE error ratios", ode_ratios},
      {"stage-1 sample concentration", concentration},
      {"replace-mode weighted loss", replace_monotone},
      {"operator learning error ratios", oplearn_ratios},
      {"RK45 oracle", rk45},
      {"reproducibility", reproducibility}};

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << number << " (" << criteria[i].first
              << "): " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
