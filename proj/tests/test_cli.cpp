#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "das2/experiment.hpp"
#include "das2/flow.hpp"
#include "helpers.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace das2;
using nlohmann::json;

namespace {

const std::filesystem::path source_dir = DAS2_SOURCE_DIR;
const std::string cli = DAS2_CLI_PATH;

struct Outcome {
  int code = -1;
  std::string out;
};

// Runs the CLI with stdout captured to a file and stderr discarded.
Outcome run_cli(const std::string& args, const std::filesystem::path& dir) {
  const auto out_file = dir / "stdout.txt";
  const std::string cmd = "\"" + cli + "\" " + args + " > \"" + out_file.string() + "\" 2> \"" +
                          (dir / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  std::stringstream buf;
  buf << in.rdbuf();
  o.out = buf.str();
  return o;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

double value_after(const std::string& text, const std::string& key) {
  for (const auto& line : lines_of(text)) {
    if (line.rfind(key + " ", 0) == 0) return std::stod(line.substr(key.size() + 1));
  }
  throw std::runtime_error("missing " + key);
}

const std::filesystem::path& tiny_run() {
  static const std::filesystem::path dir = [] {
    const auto d = testing::temp_dir("cli_run");
    const auto o = run_cli("run --config \"" + (source_dir / "tests/data/ode_tiny.json").string() + "\" --out \"" +
                               (d / "a").string() + "\"",
                           d);
    REQUIRE(o.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run twice gives byte-identical metrics") {
  const auto& d = tiny_run();
  const auto o = run_cli("run --config \"" + (source_dir / "tests/data/ode_tiny.json").string() + "\" --out \"" +
                             (d / "b").string() + "\"",
                         d);
  REQUIRE(o.code == 0);
  const std::string a = read_file(d / "a/metrics.csv");
  CHECK(!a.empty());
  CHECK(a == read_file(d / "b/metrics.csv"));
  CHECK(read_file(d / "a/training_set.csv") == read_file(d / "b/training_set.csv"));
  CHECK(read_file(d / "a/surrogate.json") == read_file(d / "b/surrogate.json"));
}

TEST_CASE("eval reproduces the run summary") {
  const auto& d = tiny_run();
  const json summary = json::parse(read_file(d / "a/summary.json"));
  const auto o = run_cli("eval --checkpoint \"" + (d / "a/surrogate.json").string() + "\" --problem param_ode --config \"" +
                             (source_dir / "tests/data/ode_tiny.json").string() + "\" --pointwise \"" +
                             (d / "pointwise.csv").string() + "\"",
                         d);
  REQUIRE(o.code == 0);
  const double mse = value_after(o.out, "mse");
  const double expected = summary.at("final_mse").get<double>();
  CHECK(std::abs(mse - expected) <= 1e-12 * std::max(1.0, expected));

  const auto rows = lines_of(read_file(d / "pointwise.csv"));
  REQUIRE(rows.size() == 32 * 32 + 1);
  CHECK(rows[0] == "x_0,xi_0,prediction,reference,abs_error");
}

TEST_CASE("eval with a grid string") {
  const auto& d = tiny_run();
  const auto o = run_cli("eval --checkpoint \"" + (d / "a/surrogate.json").string() + "\" --problem param_ode --grid 32x32",
                         d);
  REQUIRE(o.code == 0);
  const json summary = json::parse(read_file(d / "a/summary.json"));
  CHECK(std::abs(value_after(o.out, "mse") - summary.at("final_mse").get<double>()) <= 1e-12);
}

TEST_CASE("sample: header only for n = 0, determinism, restriction") {
  const auto& d = tiny_run();
  const std::string flow = (d / "a/flow.json").string();
  auto o = run_cli("sample --flow \"" + flow + "\" --n 0 --seed 1", d);
  REQUIRE(o.code == 0);
  CHECK(o.out == "p_0,p_1\n");

  o = run_cli("sample --flow \"" + flow + "\" --n 200 --seed 5", d);
  REQUIRE(o.code == 0);
  const std::string first = o.out;
  CHECK(lines_of(first).size() == 201);
  o = run_cli("sample --flow \"" + flow + "\" --n 200 --seed 5", d);
  CHECK(o.out == first);
  o = run_cli("sample --flow \"" + flow + "\" --n 200 --seed 6", d);
  CHECK(o.out != first);

  o = run_cli("sample --flow \"" + flow + "\" --n 300 --seed 7 --restrict --out \"" + (d / "r.csv").string() + "\"", d);
  REQUIRE(o.code == 0);
  const FlowModel f = FlowModel::load(flow);
  const auto rows = lines_of(read_file(d / "r.csv"));
  REQUIRE(rows.size() == 301);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::stringstream in(rows[i]);
    std::string a, b;
    std::getline(in, a, ',');
    std::getline(in, b, ',');
    CHECK(f.box().contains(Eigen::RowVector2d(std::stod(a), std::stod(b))));
  }
}

TEST_CASE("invalid inputs exit with an error code") {
  const auto d = testing::temp_dir("cli_errors");
  json j = json::parse(read_file(source_dir / "tests/data/ode_tiny.json"));
  j["adaptive"]["n_r"] = 0;
  {
    std::ofstream out(d / "bad.json");
    out << j.dump(2);
  }
  auto o = run_cli("run --config \"" + (d / "bad.json").string() + "\" --out \"" + (d / "out").string() + "\"", d);
  CHECK(o.code == 2);
  CHECK(read_file(d / "stderr.txt").find("adaptive.n_r: must be positive, got 0") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(d / "out"));

  const auto& run = tiny_run();
  o = run_cli("eval --checkpoint \"" + (run / "a/surrogate.json").string() + "\" --problem oplearn_cheb --grid mixed:5,5,8",
              d);
  CHECK(o.code != 0);
  o = run_cli("eval --checkpoint \"" + (run / "a/surrogate.json").string() + "\" --problem oplearn_cheb --config \"" +
                  (source_dir / "tests/data/ode_tiny.json").string() + "\"",
              d);
  CHECK(o.code == 2);
  o = run_cli("sample --flow \"" + (run / "a/flow.json").string() + "\" --n -1 --seed 1", d);
  CHECK(o.code != 0);
  o = run_cli("frobnicate", d);
  CHECK(o.code != 0);
}

}  // TEST_SUITE
