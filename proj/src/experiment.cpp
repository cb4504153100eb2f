#include "das2/experiment.hpp"

#include "das2/error.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace das2 {

using nlohmann::json;

namespace {

/// Typed view of one JSON object that remembers which keys were read, so
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  Index integer(const std::string& key, Index fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
    return v->get<Index>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      throw ConfigError(field(key) + ": expected a nonnegative integer");
    }
    return v->get<std::uint64_t>();
  }

  double number(const std::string& key, double fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
    return v->get<double>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(field(key) + ": expected a string");
    return v->get<std::string>();
  }

  std::string required_string(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(field(key) + ": missing");
    return string(key, "");
  }

  std::vector<Index> sizes(const std::string& key, const std::vector<Index>& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_array()) throw ConfigError(field(key) + ": expected an array of positive integers");
    std::vector<Index> out;
    for (const json& e : *v) {
      if (!e.is_number_integer() || e.get<Index>() < 1) {
        throw ConfigError(field(key) + ": expected an array of positive integers");
      }
      out.push_back(e.get<Index>());
    }
    return out;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError(field(item.key()) + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field + ": " + message);
}

Index positive(Section& s, const std::string& key, Index fallback) {
  const Index v = s.integer(key, fallback);
  require(v >= 1, s.field(key), "must be positive, got " + std::to_string(v));
  return v;
}

SamplingMode parse_mode(const std::string& v, const std::string& field) {
  if (v == "joint") return SamplingMode::joint;
  if (v == "marginal") return SamplingMode::marginal;
  throw ConfigError(field + ": expected \"joint\" or \"marginal\", got \"" + v + "\"");
}

RefineMode parse_refine(const std::string& v, const std::string& field) {
  if (v == "grow") return RefineMode::grow;
  if (v == "replace") return RefineMode::replace;
  throw ConfigError(field + ": expected \"grow\" or \"replace\", got \"" + v + "\"");
}

Baseline parse_baseline(const std::string& v, const std::string& field) {
  if (v == "none") return Baseline::none;
  if (v == "uniform") return Baseline::uniform;
  if (v == "qrs") return Baseline::qrs;
  if (v == "rar") return Baseline::rar;
  throw ConfigError(field + ": expected one of none, uniform, qrs, rar; got \"" + v + "\"");
}

json sizes_json(const std::vector<Index>& v) {
  json a = json::array();
  for (Index x : v) a.push_back(x);
  return a;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Problem problem_from_json(const json& j, json* resolved) {
  Section s(j, "problem");
  const std::string name = s.required_string("name");
  Problem p;
  json out{{"name", name}};
  if (name == "param_ode") {
    const double u0 = s.number("u0", 1.0);
    const double lo = s.number("xi_lower", -3.0);
    const double hi = s.number("xi_upper", 3.0);
    require(lo < hi, s.field("xi_upper"), "must exceed xi_lower");
    p = make_param_ode(u0, lo, hi);
    out["u0"] = u0;
    out["xi_lower"] = lo;
    out["xi_upper"] = hi;
  } else if (name == "oplearn_cheb") {
    const Index degree = positive(s, "degree", 8);
    const double decay = s.number("decay", 6.0);
    const double bound = s.number("bound", 1.0);
    require(decay >= 0.0, s.field("decay"), "must be nonnegative");
    require(bound > 0.0, s.field("bound"), "must be positive");
    p = make_oplearn(degree, decay, bound);
    out["degree"] = degree;
    out["decay"] = decay;
    out["bound"] = bound;
  } else {
    throw ConfigError(s.field("name") + ": unknown problem \"" + name + "\" (expected param_ode or oplearn_cheb)");
  }
  s.finish();
  if (resolved) *resolved = out;
  return p;
}

Problem problem_by_name(const std::string& name) { return problem_from_json(json{{"name", name}}); }

ValidationSpec ValidationSpec::parse(const std::string& spec) {
  ValidationSpec v;
  const auto bad = [&] {
    return ConfigError("grid spec \"" + spec + "\": expected NXxNXI or mixed:U,B,NX[,SEED]");
  };
  try {
    if (spec.rfind("mixed:", 0) == 0) {
      std::vector<long long> parts;
      std::stringstream ss(spec.substr(6));
      std::string item;
      while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        parts.push_back(std::stoll(item, &used));
        if (used != item.size()) throw bad();
      }
      if (parts.size() < 3 || parts.size() > 4) throw bad();
      v.kind = Kind::mixed;
      v.n_uniform = parts[0];
      v.n_ball = parts[1];
      v.nx = parts[2];
      if (parts.size() == 4) v.seed = static_cast<std::uint64_t>(parts[3]);
      if (v.n_uniform < 0 || v.n_ball < 0 || v.n_uniform + v.n_ball < 1 || v.nx < 1) throw bad();
      return v;
    }
    const auto x = spec.find('x');
    if (x == std::string::npos) throw bad();
    std::size_t used_a = 0, used_b = 0;
    const std::string a = spec.substr(0, x), b = spec.substr(x + 1);
    v.nx = std::stoll(a, &used_a);
    v.nxi = std::stoll(b, &used_b);
    if (used_a != a.size() || used_b != b.size() || v.nx < 1 || v.nxi < 1) throw bad();
    v.kind = Kind::tensor_grid;
    return v;
  } catch (const std::logic_error&) {
    throw bad();
  }
}

std::string ValidationSpec::describe() const {
  if (kind == Kind::tensor_grid) return std::to_string(nx) + "x" + std::to_string(nxi);
  return "mixed:" + std::to_string(n_uniform) + "," + std::to_string(n_ball) + "," + std::to_string(nx) + "," +
         std::to_string(seed);
}

json ExperimentConfig::to_json() const {
  json j;
  j["problem"] = problem_json;
  json s{{"kind", surrogate.kind == SurrogateKind::mlp ? "mlp" : "branch_trunk"}};
  if (surrogate.kind == SurrogateKind::mlp) {
    s["hidden"] = sizes_json(surrogate.hidden);
  } else {
    s["trunk_hidden"] = sizes_json(surrogate.trunk_hidden);
    s["branch_hidden"] = sizes_json(surrogate.branch_hidden);
    s["width"] = surrogate.width;
  }
  j["surrogate"] = s;
  j["flow"] = {{"K", flow.K}, {"L", flow.L}, {"hidden", flow.hidden}, {"clamp", flow.clamp}, {"init_scale", flow.init_scale}};
  const AdaptiveConfig& a = adaptive;
  j["adaptive"] = {{"n_adaptive", a.n_adaptive}, {"epochs", a.epochs},         {"flow_epochs", a.flow_epochs},
                   {"n_r", a.n_r},               {"batch", a.batch},           {"m_x", a.m_x},
                   {"flow_pool", a.flow_pool},   {"gamma", a.gamma},           {"lr", a.lr},
                   {"flow_lr", a.flow_lr},       {"box_margin", a.box_margin}, {"max_attempts", a.max_attempts},
                   {"self_normalize", a.self_normalize}, {"val_every", a.val_every}, {"seed", a.seed},
                   {"mode", to_string(a.mode)},  {"refine", to_string(a.refine)}, {"baseline", to_string(a.baseline)}};
  if (validation.kind == ValidationSpec::Kind::tensor_grid) {
    j["validation"] = {{"kind", "tensor_grid"}, {"nx", validation.nx}, {"nxi", validation.nxi}};
  } else {
    j["validation"] = {{"kind", "mixed"},
                       {"n_uniform", validation.n_uniform},
                       {"n_ball", validation.n_ball},
                       {"nx", validation.nx},
                       {"seed", validation.seed}};
  }
  return j;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json().dump()); }

Surrogate ExperimentConfig::build_surrogate() const {
  const std::uint64_t seed = derive_seed(adaptive.seed, 3);
  if (surrogate.kind == SurrogateKind::mlp) {
    std::vector<Index> sizes{problem.dim()};
    sizes.insert(sizes.end(), surrogate.hidden.begin(), surrogate.hidden.end());
    sizes.push_back(1);
    return Surrogate::mlp(sizes, seed, problem.ansatz());
  }
  std::vector<Index> trunk{problem.spatial_dim()};
  trunk.insert(trunk.end(), surrogate.trunk_hidden.begin(), surrogate.trunk_hidden.end());
  trunk.push_back(surrogate.width);
  std::vector<Index> branch{problem.param_dim()};
  branch.insert(branch.end(), surrogate.branch_hidden.begin(), surrogate.branch_hidden.end());
  branch.push_back(surrogate.width);
  return Surrogate::branch_trunk(trunk, branch, seed, problem.ansatz());
}

ExperimentConfig parse_config(const json& j) {
  Section top(j, "");
  ExperimentConfig c;

  const json* pj = top.find("problem");
  if (!pj) throw ConfigError("problem: missing");
  c.problem = problem_from_json(*pj, &c.problem_json);

  if (const json* sj = top.find("surrogate")) {
    Section s(*sj, "surrogate");
    const std::string kind = s.string("kind", "mlp");
    if (kind == "mlp") {
      c.surrogate.kind = SurrogateKind::mlp;
      c.surrogate.hidden = s.sizes("hidden", c.surrogate.hidden);
    } else if (kind == "branch_trunk") {
      c.surrogate.kind = SurrogateKind::branch_trunk;
      c.surrogate.trunk_hidden = s.sizes("trunk_hidden", c.surrogate.trunk_hidden);
      c.surrogate.branch_hidden = s.sizes("branch_hidden", c.surrogate.branch_hidden);
      c.surrogate.width = positive(s, "width", c.surrogate.width);
    } else {
      throw ConfigError("surrogate.kind: expected \"mlp\" or \"branch_trunk\", got \"" + kind + "\"");
    }
    s.finish();
  }

  if (const json* fj = top.find("flow")) {
    Section s(*fj, "flow");
    c.flow.K = positive(s, "K", c.flow.K);
    c.flow.L = positive(s, "L", c.flow.L);
    c.flow.hidden = positive(s, "hidden", c.flow.hidden);
    c.flow.clamp = s.number("clamp", c.flow.clamp);
    require(c.flow.clamp > 0.0, "flow.clamp", "must be positive");
    c.flow.init_scale = s.number("init_scale", c.flow.init_scale);
    require(c.flow.init_scale >= 0.0, "flow.init_scale", "must be nonnegative");
    s.finish();
  }

  if (const json* aj = top.find("adaptive")) {
    Section s(*aj, "adaptive");
    AdaptiveConfig& a = c.adaptive;
    a.n_adaptive = positive(s, "n_adaptive", a.n_adaptive);
    a.epochs = positive(s, "epochs", a.epochs);
    a.flow_epochs = s.integer("flow_epochs", a.flow_epochs);
    require(a.flow_epochs >= -1, s.field("flow_epochs"), "must be -1 (same as epochs) or nonnegative");
    a.n_r = positive(s, "n_r", a.n_r);
    a.batch = positive(s, "batch", a.batch);
    a.m_x = positive(s, "m_x", a.m_x);
    a.flow_pool = positive(s, "flow_pool", a.flow_pool);
    a.gamma = s.number("gamma", a.gamma);
    require(a.gamma >= 0.0, s.field("gamma"), "must be nonnegative");
    a.lr = s.number("lr", a.lr);
    require(a.lr > 0.0, s.field("lr"), "must be positive");
    a.flow_lr = s.number("flow_lr", a.flow_lr);
    require(a.flow_lr > 0.0, s.field("flow_lr"), "must be positive");
    a.box_margin = s.number("box_margin", a.box_margin);
    require(a.box_margin > 0.0, s.field("box_margin"), "must be positive");
    a.max_attempts = s.number("max_attempts", a.max_attempts);
    require(a.max_attempts >= 1.0, s.field("max_attempts"), "must be at least 1");
    a.self_normalize = s.boolean("self_normalize", a.self_normalize);
    a.val_every = s.integer("val_every", a.val_every);
    require(a.val_every >= 0, s.field("val_every"), "must be nonnegative");
    a.seed = s.unsigned_integer("seed", a.seed);
    a.mode = parse_mode(s.string("mode", to_string(a.mode)), s.field("mode"));
    a.refine = parse_refine(s.string("refine", to_string(a.refine)), s.field("refine"));
    a.baseline = parse_baseline(s.string("baseline", to_string(a.baseline)), s.field("baseline"));
    s.finish();
  }
  if (c.adaptive.mode == SamplingMode::marginal && c.problem.spatial_dim() != 1) {
    throw ConfigError("adaptive.mode: marginal sampling needs a one-dimensional spatial domain");
  }

  if (c.problem.kind == ProblemKind::oplearn_cheb) c.validation.kind = ValidationSpec::Kind::mixed;
  if (const json* vj = top.find("validation")) {
    Section s(*vj, "validation");
    const std::string kind =
        s.string("kind", c.validation.kind == ValidationSpec::Kind::tensor_grid ? "tensor_grid" : "mixed");
    if (kind == "tensor_grid") {
      c.validation.kind = ValidationSpec::Kind::tensor_grid;
      c.validation.nx = positive(s, "nx", c.validation.nx);
      c.validation.nxi = positive(s, "nxi", c.validation.nxi);
    } else if (kind == "mixed") {
      c.validation.kind = ValidationSpec::Kind::mixed;
      c.validation.n_uniform = s.integer("n_uniform", c.validation.n_uniform);
      c.validation.n_ball = s.integer("n_ball", c.validation.n_ball);
      require(c.validation.n_uniform >= 0 && c.validation.n_ball >= 0 &&
                  c.validation.n_uniform + c.validation.n_ball >= 1,
              "validation", "n_uniform and n_ball must be nonnegative with a positive sum");
      c.validation.nx = positive(s, "nx", 100);
      c.validation.seed = s.unsigned_integer("seed", c.validation.seed);
    } else {
      throw ConfigError("validation.kind: expected \"tensor_grid\" or \"mixed\", got \"" + kind + "\"");
    }
    s.finish();
  } else if (c.validation.kind == ValidationSpec::Kind::mixed) {
    c.validation.nx = 100;
  }
  if (c.validation.kind == ValidationSpec::Kind::tensor_grid && c.problem.kind != ProblemKind::param_ode) {
    throw ConfigError("validation.kind: tensor_grid is only available for param_ode");
  }

  c.output_dir = top.string("output_dir", c.output_dir);
  top.finish();
  c.adaptive.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(column) +
                      ": malformed JSON");
  }
  try {
    return parse_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ValidationSet build_validation(const Problem& problem, const ValidationSpec& spec) {
  if (spec.kind == ValidationSpec::Kind::tensor_grid) return tensor_grid_validation(problem, spec.nx, spec.nxi);
  return mixed_validation(problem, spec.n_uniform, spec.n_ball, spec.nx, spec.seed);
}

RunResult run_experiment(ExperimentConfig config, const std::optional<std::uint64_t>& seed_override,
                         const std::optional<std::filesystem::path>& out_override, std::ostream* log) {
  if (seed_override) config.adaptive.seed = *seed_override;
  const std::filesystem::path out = out_override ? *out_override : std::filesystem::path(config.output_dir);
  std::filesystem::create_directories(out);

  const ValidationSet validation = build_validation(config.problem, config.validation);
  RunResult result = run_adaptive(config.problem, config.build_surrogate(), config.flow, config.adaptive, validation, log);

  result.record.write_metrics_csv(out / "metrics.csv");
  result.record.write_metrics_csv(out / "timing.csv", true);
  result.record.write_stages_csv(out / "stages.csv");
  result.surrogate.save(out / "surrogate.json");
  if (result.flow) result.flow->save(out / "flow.json");
  const bool marginal = config.adaptive.mode == SamplingMode::marginal;
  result.training_set.write_csv(out / "training_set.csv", marginal ? 0 : config.problem.spatial_dim());

  json resolved = config.to_json();
  resolved["output_dir"] = out.string();
  write_text(out / "config.json", resolved.dump(2) + "\n");

  const Index points = config.adaptive.n_adaptive * config.adaptive.n_r;
  json summary;
  summary["final_mse"] = result.final_error.mse;
  summary["final_rel_l2"] = result.final_error.rel_l2;
  summary["budget"] = {{"points", points},
                       {"final_set_size", result.training_set.size()},
                       {"surrogate_epochs", config.adaptive.n_adaptive * config.adaptive.epochs}};
  summary["seed"] = config.adaptive.seed;
  summary["config_hash"] = config.hash();
  summary["method"] = config.adaptive.baseline == Baseline::none ? "das2-" + to_string(config.adaptive.mode)
                                                                  : to_string(config.adaptive.baseline);
  summary["validation"] = config.validation.describe();
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return result;
}

}  // namespace das2
