// Command-line front end: gen-mdp, oracle, run, sweep, validate.
//
// Exit codes: 0 success, 1 check failure or runtime error, 2 usage or config error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsam/algorithms.hpp"
#include "fedsam/error.hpp"
#include "fedsam/generator.hpp"
#include "fedsam/harness.hpp"
#include "fedsam/mdp.hpp"
#include "fedsam/mdp_io.hpp"
#include "fedsam/validation.hpp"

namespace fs = std::filesystem;
using namespace fedsam;

namespace {

constexpr int kExitCheck = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = ".";
  std::size_t parallel = 1;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_config) {
  if (with_config) {
    cmd->add_option("--config", flags.config, "JSON config file; missing keys take their defaults");
    cmd->add_option("--set", flags.overrides, "Override a config value: dotted.key=value (repeatable)");
  }
  cmd->add_option("--out", flags.out, "Output directory")->capture_default_str();
  cmd->add_option("--parallel", flags.parallel, "Worker threads for trials")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--seed", flags.seed, "Master seed; overrides FEDSAM_SEED");
}

std::uint64_t resolve_seed(const CommonFlags& flags, std::uint64_t fallback) {
  if (flags.seed) return *flags.seed;
  if (const char* env = std::getenv("FEDSAM_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*env == '\0' || *end != '\0') throw UsageError(std::string("FEDSAM_SEED is not an unsigned integer: ") + env);
    return v;
  }
  return fallback;
}

// Parses "a.b.c=value"; the value is read as JSON when possible, else as a string.
void apply_override(Json& config, const Json& schema, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &config;
  const Json* shape = &schema;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!shape->is_object() || !shape->contains(part)) throw UsageError("unknown config key '" + key + "'");
    shape = &shape->at(part);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = Json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

Json load_config(const CommonFlags& flags, const Json& schema) {
  Json config = Json::object();
  if (!flags.config.empty()) {
    try {
      config = read_json_file(flags.config);
    } catch (const IoError& e) {
      throw UsageError(e.what());
    }
  }
  for (const std::string& o : flags.overrides) apply_override(config, schema, o);
  check_against_schema(config, schema);
  return config;
}

void print_constants(const char* label, const TheoryConstants& c) {
  std::printf("  %-22s gamma_c=%.6f A1=%.4f A2=%.4f B=%.4f mu_min=%.5f phi=%.6g imax=%.4f beta=%g\n", label, c.gamma_c,
              c.A1, c.A2, c.B, c.mu_min, c.phi, c.imax, c.beta);
}

int cmd_gen_mdp(const CommonFlags& flags) {
  const Json schema = to_json(GeneratorParams{});
  Json config = schema;
  config.merge_patch(load_config(flags, schema));
  const GeneratorParams params = generator_params_from_json(config);
  params.validate();
  const std::uint64_t seed = resolve_seed(flags, 1);
  const Environment env = generate_environment(params, seed, true);

  const fs::path dir(flags.out);
  fs::create_directories(dir);
  write_json_file(dir / "environment.json", to_json(env));
  write_json_file(dir / "mdp.json", to_json(env.mdp));
  Json policies{{"target", to_json(env.target)}, {"behaviors", Json::array()}};
  for (const Policy& b : env.behaviors) policies["behaviors"].push_back(to_json(b));
  write_json_file(dir / "policies.json", policies);
  write_json_file(dir / "features.json", to_json(*env.features));
  write_json_file(dir / "generator.json", Json{{"params", to_json(params)}, {"seed", seed}});

  std::printf("wrote %s/{environment,mdp,policies,features,generator}.json (seed %llu)\n", dir.string().c_str(),
              static_cast<unsigned long long>(seed));
  std::printf("theory constants:\n");
  for (AlgorithmKind kind : {AlgorithmKind::on_policy_td_lfa, AlgorithmKind::off_policy_td_tabular, AlgorithmKind::q_learning}) {
    const InstancePtr inst = instance_from_environment(kind, env, params.n);
    print_constants(to_string(kind), theory_constants(*inst));
  }
  return 0;
}

int cmd_oracle(const CommonFlags& flags, const std::string& env_file, const std::string& which, std::size_t n) {
  if (n < 1) throw UsageError("--n must be >= 1");
  const Environment env = environment_from_json(read_json_file(env_file));
  const Mdp& mdp = env.mdp;
  Json out = Json::object();
  const bool all = which == "all";

  if (all || which == "value") {
    const Vector v = value_function_oracle(mdp, env.target);
    const double residual = sup_norm(n_step_bellman(mdp, env.target, v, 1) - v);
    out["value"] = {{"v", vector_to_json(v)}, {"residual", residual}};
    std::printf("V^pi      residual %.3e  values:", residual);
    for (Eigen::Index s = 0; s < v.size(); ++s) std::printf(" %.6f", v(s));
    std::printf("\n");
  }
  if (all || which == "q_star") {
    const RowMatrix q = q_star_oracle(mdp);
    const double residual = (bellman_optimality_operator(mdp, q) - q).cwiseAbs().maxCoeff();
    Json greedy = Json::array();
    for (std::size_t s = 0; s < mdp.n_states(); ++s) greedy.push_back(greedy_action(q, s));
    out["q_star"] = {{"q", matrix_to_json(q)}, {"residual", residual}, {"greedy_actions", greedy}};
    std::printf("Q*        residual %.3e\n", residual);
  }
  if (all || which == "projected") {
    const FeatureMatrix features = env.features ? *env.features : FeatureMatrix::tabular(mdp.n_states());
    const Vector v = projected_fixed_point_oracle(mdp, env.target, features, n);
    const Vector mu = stationary_distribution(policy_transition_matrix(mdp, env.target));
    const Vector phi_v = features.matrix() * v;
    const double residual = sup_norm(phi_v - weighted_projection(features, mu) * n_step_bellman(mdp, env.target, phi_v, n));
    out["projected"] = {{"v", vector_to_json(v)}, {"phi_v", vector_to_json(phi_v)}, {"residual", residual}, {"n", n}};
    std::printf("v^pi      residual %.3e  (d=%zu, n=%zu)\n", residual, features.dim(), n);
  }
  if (out.empty()) throw UsageError("--kind must be value, q_star, projected or all");

  const fs::path dir(flags.out);
  fs::create_directories(dir);
  write_json_file(dir / "oracle.json", out);
  std::printf("wrote %s\n", (dir / "oracle.json").string().c_str());
  return 0;
}

void print_sweep(const SweepResult& res) {
  std::printf("%5s %4s %6s %10s %9s %13s %11s %4s %4s  %s\n", "cell", "N", "K", "alpha", "T", "mse", "se", "ok", "div", "flag");
  for (std::size_t c = 0; c < res.cells.size(); ++c) {
    const CellSummary& s = res.cells[c];
    std::string flag;
    if (!s.valid) flag = "INVALID (more than half diverged)";
    else if (s.diverged > 0) flag = "diverged runs";
    if (s.late_blowups > 0) flag += (flag.empty() ? "" : ", ") + std::to_string(s.late_blowups) + " late blow-ups";
    std::printf("%5zu %4zu %6zu %10g %9zu %13.6e %11.3e %4zu %4zu  %s\n", c, s.cell.n_agents, s.cell.sync_period,
                s.cell.alpha, s.cell.horizon, s.mse.mean, s.mse.se, s.ok, s.diverged, flag.c_str());
  }
  for (const SpeedupFit& f : res.speedups)
    std::printf("speedup (K rule %s, alpha %g, T %zu): slope of log MSE vs log N = %.3f +- %.3f, MSE ratio %.3f\n",
                f.k_rule.c_str(), f.alpha, f.horizon, f.fit.slope, f.fit.half_width, f.ratio);
  for (const KCurve& k : res.k_curves)
    std::printf("K-curve (N %zu, alpha %g, T %zu): slope per log2 K = %.3e +- %.3e, spearman %.2f, %s\n", k.n_agents,
                k.alpha, k.horizon, k.fit.slope, k.fit.half_width, k.spearman,
                k.increasing ? "increasing" : (k.non_decreasing ? "no significant decrease" : "decreasing"));
}

int cmd_experiment(const CommonFlags& flags, bool single) {
  const Json schema = default_experiment_json();
  ExperimentSpec spec = experiment_from_json(load_config(flags, schema));
  spec.master_seed = resolve_seed(flags, spec.master_seed);
  if (single && expand_grid(spec).size() != 1)
    throw UsageError("run expects exactly one grid cell; use sweep for grids");
  const SweepContext ctx = prepare_experiment(spec);
  for (const std::string& w : horizon_warnings(spec, ctx)) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const SweepResult res = run_sweep(spec, ctx, flags.parallel);
  persist(flags.out, spec, ctx, res);
  print_sweep(res);
  std::printf("wrote results to %s\n", flags.out.c_str());
  return 0;
}

int cmd_validate(const CommonFlags& flags, const std::vector<int>& only, bool inject_fault) {
  ValidationOptions options;
  options.seed = resolve_seed(flags, options.seed);
  options.parallelism = flags.parallel;
  if (inject_fault) options.gamma_c_scale = 0.5;
  std::vector<int> ids = only;
  if (ids.empty())
    for (int id = 1; id <= kCheckCount; ++id) ids.push_back(id);
  for (int id : ids)
    if (id < 1 || id > kCheckCount) throw UsageError("--only ids must lie in 1.." + std::to_string(kCheckCount));

  std::vector<CheckResult> results;
  for (int id : ids) {
    results.push_back(run_check(id, options));
    std::printf("%s\n", format_check_line(results.back()).c_str());
    std::fflush(stdout);
  }
  const fs::path dir(flags.out);
  fs::create_directories(dir);
  const Json report = validation_report(results, options);
  write_json_file(dir / "validation.json", report);
  std::printf("%s; summary in %s\n", report.at("passed").get<bool>() ? "all checks passed" : "some checks failed",
              (dir / "validation.json").string().c_str());
  return report.at("passed").get<bool>() ? 0 : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated stochastic approximation laboratory"};
  app.require_subcommand(1);

  CommonFlags gen_flags, oracle_flags, run_flags, sweep_flags, validate_flags;
  CLI::App* gen = app.add_subcommand("gen-mdp", "Generate a Garnet environment and print theory constants");
  add_common(gen, gen_flags, true);

  CLI::App* oracle = app.add_subcommand("oracle", "Compute V^pi, Q* and the projected fixed point");
  add_common(oracle, oracle_flags, false);
  std::string env_file, which = "all";
  std::size_t n_step = 1;
  oracle->add_option("--env", env_file, "environment.json written by gen-mdp")->required();
  oracle->add_option("--kind", which, "value, q_star, projected or all")->capture_default_str();
  oracle->add_option("--n", n_step, "Lookahead for the projected fixed point")->capture_default_str();

  CLI::App* run = app.add_subcommand("run", "Run a single-cell experiment and persist it");
  add_common(run, run_flags, true);
  CLI::App* sweep = app.add_subcommand("sweep", "Run an experiment grid and persist it");
  add_common(sweep, sweep_flags, true);

  CLI::App* validate = app.add_subcommand("validate", "Run the acceptance suite");
  add_common(validate, validate_flags, false);
  std::vector<int> only;
  bool inject_fault = false;
  validate->add_option("--only", only, "Check ids to run (default all)")->delimiter(',');
  validate->add_flag("--inject-fault", inject_fault, "Halve the declared contraction factors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_mdp(gen_flags);
    if (*oracle) return cmd_oracle(oracle_flags, env_file, which, n_step);
    if (*run) return cmd_experiment(run_flags, true);
    if (*sweep) return cmd_experiment(sweep_flags, false);
    if (*validate) return cmd_validate(validate_flags, only, inject_fault);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::fprintf(stderr, "invalid parameter: %s\n", e.what());
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheck;
  }
  return 0;
}
