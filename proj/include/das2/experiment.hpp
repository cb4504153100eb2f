#pragma once

#include "das2/error.hpp"
#include "das2/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace das2 {

/// Invalid configuration; the message starts with the offending field path
/// (or line and column for malformed JSON).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::mlp;
  std::vector<Index> hidden{32, 32, 32, 32, 32};  // mlp
  std::vector<Index> trunk_hidden{50, 50, 50, 50};
  std::vector<Index> branch_hidden{50, 50, 50, 50};
  Index width = 50;  // shared output width of trunk and branch
};

struct ValidationSpec {
  enum class Kind { tensor_grid, mixed };
  Kind kind = Kind::tensor_grid;
  Index nx = 256;
  Index nxi = 256;
  Index n_uniform = 1000;
  Index n_ball = 1000;
  std::uint64_t seed = 20240101;

  /// "NXxNXI" for a tensor grid, "mixed:U,B,NX[,SEED]" for the mixed set.
  static ValidationSpec parse(const std::string& spec);
  std::string describe() const;
};

struct ExperimentConfig {
  Problem problem = make_param_ode();
  nlohmann::json problem_json;  // resolved problem section
  SurrogateSpec surrogate;
  FlowConfig flow;
  AdaptiveConfig adaptive;
  ValidationSpec validation;
  std::string output_dir = "runs/default";

  /// Every semantic field with defaults filled in; excludes output_dir.
  nlohmann::json to_json() const;
  /// Hex digest of to_json(), stable across runs and platforms.
  std::string hash() const;

  Surrogate build_surrogate() const;
};

/// Problem from a resolved section {"name": .., constants..}; unknown keys rejected.
Problem problem_from_json(const nlohmann::json& j, nlohmann::json* resolved = nullptr);
Problem problem_by_name(const std::string& name);

ExperimentConfig parse_config(const nlohmann::json& j);
/// Reads and parses; malformed JSON is reported with line and column.
ExperimentConfig load_config(const std::filesystem::path& path);

ValidationSet build_validation(const Problem& problem, const ValidationSpec& spec);

/// Runs the configured experiment and writes metrics.csv, timing.csv,
/// stages.csv, summary.json, surrogate.json, flow.json (adaptive runs),
/// training_set.csv and config.json under the output directory.
RunResult run_experiment(ExperimentConfig config, const std::optional<std::uint64_t>& seed_override = std::nullopt,
                         const std::optional<std::filesystem::path>& out_override = std::nullopt,
                         std::ostream* log = nullptr);

/// FNV-1a over the bytes, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace das2
