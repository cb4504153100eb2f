// Command-line front end: run experiments, evaluate checkpoints, sample flows.
#include "das2/experiment.hpp"
#include "das2/parallel.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using das2::Index;
using das2::Matrix;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int run_command(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                const std::optional<std::string>& out) {
  das2::ExperimentConfig config = das2::load_config(config_path);
  std::optional<std::filesystem::path> out_dir;
  if (out) out_dir = *out;
  const das2::RunResult result = das2::run_experiment(config, seed, out_dir, &std::cerr);
  std::cout << "final_mse " << format_double(result.final_error.mse) << "\n"
            << "final_rel_l2 " << format_double(result.final_error.rel_l2) << "\n";
  return 0;
}

int eval_command(const std::string& checkpoint, const std::string& problem_name, const std::string& grid,
                 const std::string& config_path, const std::string& pointwise) {
  das2::Problem problem = das2::problem_by_name(problem_name);
  das2::ValidationSpec spec;
  bool have_spec = false;
  if (!config_path.empty()) {
    const das2::ExperimentConfig config = das2::load_config(config_path);
    if (config.problem.name != problem_name) {
      throw das2::ConfigError("--problem " + problem_name + " does not match the config's problem " +
                              config.problem.name);
    }
    problem = config.problem;
    spec = config.validation;
    have_spec = true;
  }
  if (!grid.empty()) {
    spec = das2::ValidationSpec::parse(grid);
    have_spec = true;
  }
  if (!have_spec) throw das2::ConfigError("eval: give --grid or --config");

  const das2::Surrogate s = das2::Surrogate::load(checkpoint);
  problem.check_surrogate(s);
  const das2::ValidationSet v = das2::build_validation(problem, spec);
  const Matrix pred = das2::evaluate_product(s, v.x_grid, v.xi);
  const das2::GridError err = das2::evaluate_grid(pred, v.reference);
  std::cout << "mse " << format_double(err.mse) << "\n"
            << "rel_l2 " << format_double(err.rel_l2) << "\n";

  if (!pointwise.empty()) {
    std::ofstream out(pointwise);
    if (!out) throw das2::Error("cannot write " + pointwise);
    out << "x_0";
    for (Index k = 0; k < v.xi.cols(); ++k) out << ",xi_" << k;
    out << ",prediction,reference,abs_error\n";
    for (Index j = 0; j < v.xi.rows(); ++j) {
      for (Index i = 0; i < v.x_grid.rows(); ++i) {
        out << format_double(v.x_grid(i, 0));
        for (Index k = 0; k < v.xi.cols(); ++k) out << ',' << format_double(v.xi(j, k));
        out << ',' << format_double(pred(j, i)) << ',' << format_double(v.reference(j, i)) << ','
            << format_double(std::abs(pred(j, i) - v.reference(j, i))) << '\n';
      }
    }
  }
  return 0;
}

int sample_command(const std::string& flow_path, Index n, std::uint64_t seed, bool restrict,
                   const std::string& out_path) {
  if (n < 0) throw das2::ConfigError("--n must be nonnegative");
  const das2::FlowModel flow = das2::FlowModel::load(flow_path);
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw das2::Error("cannot write " + out_path);
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  for (Index k = 0; k < flow.dim(); ++k) out << (k ? "," : "") << "p_" << k;
  out << "\n";
  if (n == 0) return 0;
  das2::RngStream rng(seed, 0);
  double acceptance = 1.0;
  const Matrix pts = flow.sample(n, rng, restrict, 50.0, &acceptance);
  for (Index i = 0; i < pts.rows(); ++i) {
    for (Index k = 0; k < pts.cols(); ++k) out << (k ? "," : "") << format_double(pts(i, k));
    out << "\n";
  }
  if (restrict) std::cerr << "acceptance_rate " << acceptance << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep adaptive sampling for parametric surrogate models"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  run->add_option("--config", config_path, "Experiment config")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Override the output directory");

  auto* eval = app.add_subcommand("eval", "Evaluate a surrogate checkpoint");
  std::string checkpoint, problem, grid, eval_config, pointwise;
  eval->add_option("--checkpoint", checkpoint, "Surrogate checkpoint (JSON)")->required();
  eval->add_option("--problem", problem, "param_ode or oplearn_cheb")->required();
  eval->add_option("--grid", grid, "NXxNXI or mixed:U,B,NX[,SEED]");
  eval->add_option("--config", eval_config, "Take problem constants and validation grid from a config");
  eval->add_option("--pointwise", pointwise, "Write pointwise errors to this CSV");

  auto* sample = app.add_subcommand("sample", "Draw points from a flow checkpoint");
  std::string flow_path, sample_out;
  Index n = 0;
  std::uint64_t sample_seed = 0;
  bool restrict = false;
  sample->add_option("--flow", flow_path, "Flow checkpoint (JSON)")->required();
  sample->add_option("--n", n, "Number of points")->required();
  sample->add_option("--seed", sample_seed, "Random seed")->required();
  sample->add_flag("--restrict", restrict, "Keep only points inside the domain");
  sample->add_option("--out", sample_out, "Write the CSV here instead of stdout");

  CLI11_PARSE(app, argc, argv);
  das2::tune_allocator();

  try {
    if (*run) return run_command(config_path, seed, out_dir);
    if (*eval) return eval_command(checkpoint, problem, grid, eval_config, pointwise);
    if (*sample) return sample_command(flow_path, n, sample_seed, restrict, sample_out);
  } catch (const das2::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
