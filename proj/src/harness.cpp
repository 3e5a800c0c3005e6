#include "fedsam/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "fedsam/error.hpp"
#include "fedsam/sampling.hpp"

namespace fedsam {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string json_type(const Json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer() || j.is_number_unsigned()) return "integer";
  if (j.is_number_float()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool type_matches(const Json& value, const Json& schema) {
  const std::string want = json_type(schema);
  const std::string got = json_type(value);
  if (want == got) return true;
  if (want == "number" && got == "integer") return true;
  if (want == "integer" && got == "integer") return true;
  return false;
}

}  // namespace

void check_against_schema(const Json& value, const Json& schema, const std::string& path) {
  if (schema.is_object()) {
    if (!value.is_object()) throw ValidationError("config key '" + path + "' must be an object");
    for (auto it = value.begin(); it != value.end(); ++it) {
      const std::string key = path.empty() ? it.key() : path + "." + it.key();
      if (!schema.contains(it.key())) throw ValidationError("unknown config key '" + key + "'");
      check_against_schema(it.value(), schema.at(it.key()), key);
    }
    return;
  }
  if (schema.is_array()) {
    if (!value.is_array()) throw ValidationError("config key '" + path + "' must be an array");
    if (value.empty()) throw ValidationError("config key '" + path + "' must not be empty");
    for (const Json& v : value) {
      const bool ok = path == "grid.sync_period" ? (v.is_string() || v.is_number_integer() || v.is_number_unsigned())
                                                 : type_matches(v, schema.front());
      if (!ok) throw ValidationError("config key '" + path + "' has an element of type " + json_type(v));
    }
    return;
  }
  if (!type_matches(value, schema))
    throw ValidationError("config key '" + path + "' must be of type " + json_type(schema) + ", got " +
                          json_type(value));
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  if (s == "nan") return kNaN;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw IoError("bad number '" + s + "' in results table");
  return v;
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw IoError("bad integer '" + s + "' in results table");
  return v;
}

template <class Fn>
void run_parallel(std::size_t count, std::size_t parallelism, Fn&& fn) {
  if (parallelism <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  tbb::task_arena arena(static_cast<int>(parallelism));
  arena.execute([&] { tbb::parallel_for(std::size_t{0}, count, [&](std::size_t k) { fn(k); }); });
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void ExperimentSpec::validate() const {
  generator.validate();
  if (n_agents.empty() || sync_period.empty() || alpha.empty() || horizon.empty())
    throw ValidationError("every grid axis needs at least one value");
  for (std::size_t n : n_agents)
    if (n < 1) throw ValidationError("grid.n_agents entries must be >= 1");
  for (double a : alpha)
    if (!(a >= 0.0) || !std::isfinite(a)) throw ValidationError("grid.alpha entries must be finite and >= 0");
  for (std::size_t t : horizon)
    if (t < 1) throw ValidationError("grid.horizon entries must be >= 1");
  for (const std::string& k : sync_period) resolve_sync_period(k, horizon.front(), n_agents.front());
  if (replications < 1) throw ValidationError("replications must be >= 1");
  if (!(output_c >= 0.0) || !std::isfinite(output_c)) throw ValidationError("output_c must be >= 0");
}

Json to_json(const ExperimentSpec& spec) {
  Json sync = Json::array();
  for (const std::string& k : spec.sync_period) sync.push_back(k);
  return Json{{"algorithm", to_string(spec.kind)},
              {"instance", {{"seed", spec.instance_seed}, {"file", spec.instance_file}, {"generator", to_json(spec.generator)}}},
              {"grid",
               {{"n_agents", spec.n_agents}, {"sync_period", sync}, {"alpha", spec.alpha}, {"horizon", spec.horizon}}},
              {"replications", spec.replications},
              {"output_c", spec.output_c},
              {"master_seed", spec.master_seed},
              {"record_series", spec.record_series},
              {"checkpoint_every", spec.checkpoint_every},
              {"timing", spec.timing}};
}

Json default_experiment_json() { return to_json(ExperimentSpec{}); }

ExperimentSpec experiment_from_json(const Json& j) {
  const Json schema = default_experiment_json();
  check_against_schema(j, schema, "");
  Json merged = schema;
  merged.merge_patch(j);

  ExperimentSpec spec;
  spec.kind = algorithm_kind_from_string(merged.at("algorithm").get<std::string>());
  const Json& inst = merged.at("instance");
  spec.instance_seed = inst.at("seed").get<std::uint64_t>();
  spec.instance_file = inst.at("file").get<std::string>();
  spec.generator = generator_params_from_json(inst.at("generator"));
  const Json& grid = merged.at("grid");
  spec.n_agents = grid.at("n_agents").get<std::vector<std::size_t>>();
  spec.sync_period.clear();
  for (const Json& k : grid.at("sync_period"))
    spec.sync_period.push_back(k.is_string() ? k.get<std::string>() : std::to_string(k.get<std::uint64_t>()));
  spec.alpha = grid.at("alpha").get<std::vector<double>>();
  spec.horizon = grid.at("horizon").get<std::vector<std::size_t>>();
  spec.replications = merged.at("replications").get<std::size_t>();
  spec.output_c = merged.at("output_c").get<double>();
  spec.master_seed = merged.at("master_seed").get<std::uint64_t>();
  spec.record_series = merged.at("record_series").get<bool>();
  spec.checkpoint_every = merged.at("checkpoint_every").get<std::size_t>();
  spec.timing = merged.at("timing").get<bool>();
  spec.validate();
  return spec;
}

std::size_t resolve_sync_period(const std::string& rule, std::size_t horizon, std::size_t n_agents) {
  if (rule == "T/N") return std::max<std::size_t>(1, horizon / std::max<std::size_t>(1, n_agents));
  std::size_t k = 0;
  const auto res = std::from_chars(rule.data(), rule.data() + rule.size(), k);
  if (res.ec != std::errc() || res.ptr != rule.data() + rule.size() || k < 1)
    throw ValidationError("sync period '" + rule + "' must be a positive integer or \"T/N\"");
  return k;
}

std::vector<Cell> expand_grid(const ExperimentSpec& spec) {
  std::vector<Cell> cells;
  for (std::size_t n : spec.n_agents)
    for (const std::string& k : spec.sync_period)
      for (double a : spec.alpha)
        for (std::size_t t : spec.horizon) cells.push_back({n, k, resolve_sync_period(k, t, n), a, t});
  return cells;
}

std::uint64_t trial_id(std::size_t cell_index, std::size_t replication) {
  return derive_key(cell_index, {replication, 0x747269616cull});
}

TrialResult run_trial(const FedSamProblem& problem, const TheoryConstants& constants, const Cell& cell,
                      std::size_t cell_index, std::size_t replication, const TrialOptions& options) {
  TrialResult out;
  out.cell_index = cell_index;
  out.cell = cell;
  out.replication = replication;

  FedRunConfig cfg;
  cfg.n_agents = cell.n_agents;
  cfg.sync_period = cell.sync_period;
  cfg.step_size = cell.alpha;
  cfg.horizon = cell.horizon;
  cfg.output_c = options.output_c > 0.0 ? options.output_c : constants.c_out(cell.alpha);
  if (!(cfg.output_c > 0.0))
    throw ParameterError("theory output constant 1 - alpha phi / 2 is not positive for alpha = " +
                         format_double(cell.alpha));
  cfg.master_seed = options.master_seed;
  cfg.trial = trial_id(cell_index, replication);
  cfg.parallel = options.parallel_agents;
  cfg.record_series = options.record_series;
  cfg.checkpoint_every = options.checkpoint_every;

  const auto start = std::chrono::steady_clock::now();
  try {
    const RunTrace trace = run_fedsam(problem, cfg);
    out.t_hat = trace.output_index;
    const double err = norm(problem.norm_kind, trace.output_theta);
    const double fin = norm(problem.norm_kind, trace.final_theta);
    out.mse = err * err;
    out.final_sq_error = fin * fin;
    out.max_sync_omega = trace.max_sync_omega;
    if (options.record_series) {
      out.series_t = trace.checkpoint_t;
      out.series_omega = trace.omega_series;
      for (const Vector& th : trace.theta_bar_series) {
        const double e = norm(problem.norm_kind, th);
        out.series_error.push_back(e * e);
      }
      const std::size_t m = out.series_error.size();
      if (m >= 10) {
        const std::size_t tail = (m + 9) / 10;
        double late = 0.0;
        for (std::size_t k = m - tail; k < m; ++k) late += out.series_error[k];
        late /= static_cast<double>(tail);
        out.late_blowup = late > out.series_error[m / 10];
      }
    }
  } catch (const DivergenceError& e) {
    out.status = "diverged";
    out.message = e.what();
    out.mse = kNaN;
    out.final_sq_error = kNaN;
    CounterRng output_rng(output_stream_key(cfg.master_seed, cfg.trial));
    out.t_hat = sample_output_index(cfg.output_c, cfg.horizon, output_rng);
  }
  if (options.timing)
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

SpeedupFit fit_speedup(const std::vector<double>& n_agents, const std::vector<MeanSe>& mse) {
  SpeedupFit out;
  out.n_agents = n_agents;
  std::vector<double> x, y, w;
  bool weighted = true;
  for (std::size_t k = 0; k < n_agents.size(); ++k) {
    if (!(mse[k].mean > 0.0)) throw NumericError("speedup fit needs positive MSE values");
    out.mse.push_back(mse[k].mean);
    x.push_back(std::log(n_agents[k]));
    y.push_back(std::log(mse[k].mean));
    if (mse[k].se > 0.0)
      w.push_back((mse[k].mean / mse[k].se) * (mse[k].mean / mse[k].se));
    else
      weighted = false;
  }
  out.fit = weighted_line_fit(x, y, weighted ? std::span<const double>(w) : std::span<const double>());
  out.ratio = out.mse.back() / out.mse.front();
  return out;
}

KCurve fit_k_curve(const std::vector<double>& sync_period, const std::vector<MeanSe>& mse) {
  KCurve out;
  out.sync_period = sync_period;
  std::vector<double> x, w;
  bool weighted = true;
  for (std::size_t k = 0; k < sync_period.size(); ++k) {
    out.mse.push_back(mse[k].mean);
    out.se.push_back(mse[k].se);
    x.push_back(std::log2(sync_period[k]));
    if (mse[k].se > 0.0)
      w.push_back(1.0 / (mse[k].se * mse[k].se));
    else
      weighted = false;
  }
  out.fit = weighted_line_fit(x, out.mse, weighted ? std::span<const double>(w) : std::span<const double>());
  out.spearman = spearman(sync_period, out.mse);
  out.non_decreasing = out.fit.slope >= -out.fit.half_width;
  out.increasing = out.fit.slope > out.fit.half_width;
  return out;
}

SweepResult aggregate(std::vector<TrialResult> trials, const std::vector<Cell>& cells) {
  SweepResult out;
  std::vector<std::vector<double>> mse(cells.size()), fin(cells.size());
  out.cells.resize(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) out.cells[c].cell = cells[c];
  for (const TrialResult& t : trials) {
    CellSummary& s = out.cells.at(t.cell_index);
    if (t.status == "ok") {
      ++s.ok;
      mse[t.cell_index].push_back(t.mse);
      fin[t.cell_index].push_back(t.final_sq_error);
      s.max_sync_omega = std::max(s.max_sync_omega, t.max_sync_omega);
      if (t.late_blowup) ++s.late_blowups;
    } else {
      ++s.diverged;
    }
  }
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellSummary& s = out.cells[c];
    s.mse = mean_and_se(mse[c]);
    s.final_sq_error = mean_and_se(fin[c]);
    s.valid = s.ok > 0 && 2 * s.diverged <= s.ok + s.diverged;
  }

  // Speedup: cells sharing (K rule, alpha, T) with at least two N values.
  std::map<std::tuple<std::string, double, std::size_t>, std::vector<std::size_t>> by_rule;
  std::map<std::tuple<std::size_t, double, std::size_t>, std::vector<std::size_t>> by_n;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (!out.cells[c].valid) continue;
    by_rule[{cells[c].k_rule, cells[c].alpha, cells[c].horizon}].push_back(c);
    by_n[{cells[c].n_agents, cells[c].alpha, cells[c].horizon}].push_back(c);
  }
  for (auto& [key, idx] : by_rule) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return cells[a].n_agents < cells[b].n_agents; });
    if (idx.size() < 2 || cells[idx.front()].n_agents == cells[idx.back()].n_agents) continue;
    std::vector<double> n;
    std::vector<MeanSe> m;
    for (std::size_t c : idx) {
      n.push_back(static_cast<double>(cells[c].n_agents));
      m.push_back(out.cells[c].mse);
    }
    SpeedupFit fit = fit_speedup(n, m);
    std::tie(fit.k_rule, fit.alpha, fit.horizon) = key;
    out.speedups.push_back(std::move(fit));
  }
  for (auto& [key, idx] : by_n) {
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return cells[a].sync_period < cells[b].sync_period; });
    if (idx.size() < 2 || cells[idx.front()].sync_period == cells[idx.back()].sync_period) continue;
    std::vector<double> k;
    std::vector<MeanSe> m;
    for (std::size_t c : idx) {
      k.push_back(static_cast<double>(cells[c].sync_period));
      m.push_back(out.cells[c].mse);
    }
    KCurve curve = fit_k_curve(k, m);
    std::tie(curve.n_agents, curve.alpha, curve.horizon) = key;
    out.k_curves.push_back(std::move(curve));
  }
  out.trials = std::move(trials);
  return out;
}

std::vector<std::string> horizon_warnings(const ExperimentSpec& spec, const SweepContext& context) {
  std::vector<MixingEstimate> mixing;
  for (const Matrix& p : context.instance->p_behavior) mixing.push_back(mixing_diagnostics(p));
  std::vector<std::string> out;
  for (const Cell& cell : expand_grid(spec)) {
    std::size_t tau = 1;
    for (const MixingEstimate& m : mixing) tau = std::max(tau, m.tau_alpha(cell.alpha));
    const std::size_t threshold = std::max(cell.sync_period + tau, 2 * tau);
    if (cell.horizon <= threshold)
      out.push_back("cell N=" + std::to_string(cell.n_agents) + " K=" + std::to_string(cell.sync_period) +
                    " alpha=" + format_double(cell.alpha) + " T=" + std::to_string(cell.horizon) +
                    ": T does not exceed max(K + tau_alpha, 2 tau_alpha) = " + std::to_string(threshold));
  }
  return out;
}

SweepContext prepare_experiment(const ExperimentSpec& spec) {
  spec.validate();
  SweepContext ctx;
  if (!spec.instance_file.empty()) {
    const Environment env = environment_from_json(read_json_file(spec.instance_file));
    ctx.instance = instance_from_environment(spec.kind, env, spec.generator.n);
  } else {
    ctx.instance = generate_instance(spec.kind, spec.generator, spec.instance_seed);
  }
  ctx.problem = build_problem(ctx.instance);
  ctx.constants = theory_constants(*ctx.instance);
  return ctx;
}

SweepResult run_sweep(const ExperimentSpec& spec, const SweepContext& context, std::size_t parallelism) {
  const std::vector<Cell> cells = expand_grid(spec);
  const std::size_t reps = spec.replications;
  TrialOptions options;
  options.master_seed = spec.master_seed;
  options.output_c = spec.output_c;
  options.record_series = spec.record_series;
  options.checkpoint_every = spec.checkpoint_every;
  options.timing = spec.timing;

  std::vector<TrialResult> trials(cells.size() * reps);
  run_parallel(trials.size(), parallelism, [&](std::size_t k) {
    const std::size_t c = k / reps;
    trials[k] = run_trial(context.problem, context.constants, cells[c], c, k % reps, options);
  });
  return aggregate(std::move(trials), cells);
}

double iid_second_moment(double alpha, double sigma, double x0, std::size_t t) {
  const double stationary = alpha * sigma * sigma / (2.0 - alpha);
  return (x0 * x0 - stationary) * std::pow(1.0 - alpha, 2.0 * static_cast<double>(t)) + stationary;
}

FedSamProblem iid_scalar_problem(double sigma, double x0) {
  if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
  FedSamProblem p;
  p.dim = 1;
  p.norm_kind = NormKind::euclidean;
  p.theta0 = Vector::Constant(1, x0);
  p.apply_G = [](std::size_t, const Vector&, const NoiseView&) { return Vector(Vector::Zero(1)); };
  p.apply_b = [](std::size_t, const NoiseView& y) { return Vector(Vector::Constant(1, y.value)); };
  p.make_noise = [sigma](std::size_t, CounterRng rng) -> std::unique_ptr<NoiseProcess> {
    return std::make_unique<IidNormalNoise>(sigma, rng);
  };
  p.expected_G = [](std::size_t, const Vector&) { return Vector(Vector::Zero(1)); };
  p.fast_step = [](std::size_t, Eigen::Ref<Vector> x, const NoiseView& y, double step) {
    x(0) += step * (0.0 - x(0) + y.value);
  };
  register_problem(p);
  return p;
}

IidReport iid_scalar_validation(double alpha, double sigma, double x0, const std::vector<std::size_t>& t_grid,
                                std::size_t replications, std::uint64_t seed, std::size_t parallelism) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  if (t_grid.empty() || replications < 1) throw ParameterError("need a time grid and at least one replication");
  const FedSamProblem problem = iid_scalar_problem(sigma, x0);
  const std::size_t t_max = std::max<std::size_t>(1, *std::max_element(t_grid.begin(), t_grid.end()));
  std::size_t every = 0;
  for (std::size_t t : t_grid) every = std::gcd(every, t);
  every = std::max<std::size_t>(1, std::gcd(every, t_max));

  FedRunConfig cfg;
  cfg.step_size = alpha;
  cfg.horizon = t_max;
  cfg.master_seed = seed;
  cfg.checkpoint_every = every;

  std::vector<double> squares(replications * t_grid.size());
  run_parallel(replications, parallelism, [&](std::size_t r) {
    FedRunConfig local = cfg;
    local.trial = r;
    const RunTrace trace = run_fedsam(problem, local);
    for (std::size_t g = 0; g < t_grid.size(); ++g) {
      const double x = trace.theta_bar_series.at(t_grid[g] / every)(0);
      squares[r * t_grid.size() + g] = x * x;
    }
  });

  IidReport report;
  std::vector<double> column(replications);
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    for (std::size_t r = 0; r < replications; ++r) column[r] = squares[r * t_grid.size() + g];
    const MeanSe ms = mean_and_se(column);
    IidRow row{t_grid[g], ms.mean, ms.se, iid_second_moment(alpha, sigma, x0, t_grid[g]), 0.0};
    const double diff = row.empirical - row.exact;
    row.z = row.se > 0.0 ? diff / row.se : (std::abs(diff) <= 1e-15 ? 0.0 : std::numeric_limits<double>::infinity());
    report.max_abs_z = std::max(report.max_abs_z, std::abs(row.z));
    report.rows.push_back(row);
  }
  return report;
}

Json to_json(const TheoryConstants& c) {
  return Json{{"gamma_c", c.gamma_c}, {"A1", c.A1},       {"A2", c.A2},     {"B", c.B},
              {"mu_min", c.mu_min},   {"phi", c.phi},     {"imax", c.imax}, {"beta", c.beta},
              {"gamma_c_operator", c.gamma_c_operator}};
}

Json instance_summary(const AlgorithmInstance& instance) {
  Json j{{"algorithm", to_string(instance.kind)},
         {"n_states", instance.mdp.n_states()},
         {"n_actions", instance.mdp.n_actions()},
         {"gamma", instance.mdp.gamma()},
         {"n", instance.n},
         {"dim", instance.dim()},
         {"beta", instance.beta},
         {"n_behaviors", instance.behaviors.size()}};
  Json mixing = Json::array();
  for (const Matrix& p : instance.p_behavior) {
    try {
      const MixingEstimate est = mixing_diagnostics(p);
      mixing.push_back({{"rho", est.rho}, {"m_bar", est.m_bar}});
    } catch (const ErgodicityError& e) {
      mixing.push_back({{"error", e.what()}});
    }
  }
  j["mixing"] = std::move(mixing);
  return j;
}

Json summary_json(const SweepResult& result) {
  Json cells = Json::array();
  for (std::size_t c = 0; c < result.cells.size(); ++c) {
    const CellSummary& s = result.cells[c];
    cells.push_back({{"cell", c},
                     {"n_agents", s.cell.n_agents},
                     {"k_rule", s.cell.k_rule},
                     {"sync_period", s.cell.sync_period},
                     {"alpha", s.cell.alpha},
                     {"horizon", s.cell.horizon},
                     {"mse", s.mse.mean},
                     {"mse_se", s.mse.se},
                     {"final_sq_error", s.final_sq_error.mean},
                     {"final_sq_error_se", s.final_sq_error.se},
                     {"ok", s.ok},
                     {"diverged", s.diverged},
                     {"valid", s.valid},
                     {"late_blowups", s.late_blowups},
                     {"max_sync_omega", s.max_sync_omega}});
  }
  Json speedups = Json::array();
  for (const SpeedupFit& f : result.speedups)
    speedups.push_back({{"k_rule", f.k_rule},
                        {"alpha", f.alpha},
                        {"horizon", f.horizon},
                        {"n_agents", f.n_agents},
                        {"mse", f.mse},
                        {"slope", f.fit.slope},
                        {"half_width", f.fit.half_width},
                        {"ratio", f.ratio}});
  Json curves = Json::array();
  for (const KCurve& k : result.k_curves)
    curves.push_back({{"n_agents", k.n_agents},
                      {"alpha", k.alpha},
                      {"horizon", k.horizon},
                      {"sync_period", k.sync_period},
                      {"mse", k.mse},
                      {"se", k.se},
                      {"slope", k.fit.slope},
                      {"half_width", k.fit.half_width},
                      {"spearman", k.spearman},
                      {"non_decreasing", k.non_decreasing},
                      {"increasing", k.increasing}});
  return Json{{"cells", std::move(cells)}, {"speedup", std::move(speedups)}, {"k_curves", std::move(curves)}};
}

std::string results_csv(const std::vector<TrialResult>& trials) {
  std::string out = "cell,n_agents,k_rule,sync_period,alpha,horizon,replication,mse,final_sq_error,t_hat,wall_ms,status\n";
  for (const TrialResult& t : trials) {
    out += std::to_string(t.cell_index) + ',' + std::to_string(t.cell.n_agents) + ',' + t.cell.k_rule + ',' +
           std::to_string(t.cell.sync_period) + ',' + format_double(t.cell.alpha) + ',' +
           std::to_string(t.cell.horizon) + ',' + std::to_string(t.replication) + ',' + format_double(t.mse) + ',' +
           format_double(t.final_sq_error) + ',' + std::to_string(t.t_hat) + ',' + format_double(t.wall_ms) + ',' +
           t.status + '\n';
  }
  return out;
}

std::vector<TrialResult> parse_results_csv(const std::string& text) {
  std::vector<TrialResult> out;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("cell,", 0) != 0) throw IoError("results table has no header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split(line, ',');
    if (f.size() != 12) throw IoError("results row has " + std::to_string(f.size()) + " fields, expected 12");
    TrialResult t;
    t.cell_index = parse_size(f[0]);
    t.cell = {parse_size(f[1]), f[2], parse_size(f[3]), parse_double(f[4]), parse_size(f[5])};
    t.replication = parse_size(f[6]);
    t.mse = parse_double(f[7]);
    t.final_sq_error = parse_double(f[8]);
    t.t_hat = parse_size(f[9]);
    t.wall_ms = parse_double(f[10]);
    t.status = f[11];
    out.push_back(std::move(t));
  }
  return out;
}

void persist(const std::filesystem::path& dir, const ExperimentSpec& spec, const SweepContext& context,
             const SweepResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const Json metadata{{"code_version", kCodeVersion},
                      {"spec", to_json(spec)},
                      {"theory_constants", to_json(context.constants)},
                      {"instance", instance_summary(*context.instance)},
                      {"master_seed", spec.master_seed},
                      {"seed_derivation", "agent stream key = derive_key(master_seed, {trial_id(cell, replication), agent})"},
                      {"cells", expand_grid(spec).size()},
                      {"replications", spec.replications}};
  write_json_file(dir / "metadata.json", metadata);
  write_text_file(dir / "results.csv", results_csv(result.trials));
  write_json_file(dir / "summary.json", summary_json(result));

  if (spec.record_series) {
    std::string lines;
    for (const TrialResult& t : result.trials)
      for (std::size_t k = 0; k < t.series_t.size(); ++k)
        lines += Json{{"cell", t.cell_index},
                      {"replication", t.replication},
                      {"t", t.series_t[k]},
                      {"error", t.series_error[k]},
                      {"omega", t.series_omega[k]}}
                     .dump() +
                 '\n';
    write_text_file(dir / "series.jsonl", lines);
  }
}

LoadedResults load_results(const std::filesystem::path& dir) {
  LoadedResults out;
  out.metadata = read_json_file(dir / "metadata.json");
  out.trials = parse_results_csv(read_text_file(dir / "results.csv"));
  return out;
}

}  // namespace fedsam
