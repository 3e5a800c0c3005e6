#include "fedsam/validation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "fedsam/algorithms.hpp"
#include "fedsam/engine.hpp"
#include "fedsam/error.hpp"
#include "fedsam/generator.hpp"
#include "fedsam/harness.hpp"
#include "fedsam/mdp.hpp"
#include "fedsam/sampling.hpp"

namespace fedsam {
namespace {

std::string strf(const char* format, ...) {
  char buf[1024];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

CheckResult start_check(int id, const char* name, double time_limit) {
  CheckResult r;
  r.id = id;
  r.name = name;
  r.time_limit = time_limit;
  return r;
}

void finish(CheckResult& r, bool passed, std::string detail, const Stopwatch& watch) {
  r.seconds = watch.seconds();
  const bool in_time = r.time_limit <= 0.0 || r.seconds < r.time_limit;
  r.passed = passed && in_time;
  r.detail = std::move(detail);
  if (!in_time) r.detail += strf("; runtime %.1f s exceeds %.0f s", r.seconds, r.time_limit);
  r.observed["seconds"] = r.seconds;
}

// Random parameter vector with a log-uniform scale in [1e-2, 1e2].
Vector random_theta(std::size_t dim, CounterRng& rng) {
  const double scale = std::pow(10.0, 4.0 * rng.uniform() - 2.0);
  Vector v(dim);
  for (std::size_t k = 0; k < dim; ++k) v(k) = scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

// Independent references built from explicit loops.

Matrix loop_policy_matrix(const Mdp& mdp, const Policy& pi) {
  Matrix p = Matrix::Zero(mdp.n_states(), mdp.n_states());
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    for (std::size_t a = 0; a < mdp.n_actions(); ++a)
      for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) p(s, s2) += pi.prob(s, a) * mdp.transition(s, a, s2);
  return p;
}

Vector loop_policy_reward(const Mdp& mdp, const Policy& pi) {
  Vector r = Vector::Zero(mdp.n_states());
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) r(s) += pi.prob(s, a) * mdp.reward(s, a);
  return r;
}

Vector iterative_policy_evaluation(const Mdp& mdp, const Policy& pi) {
  const Matrix p = loop_policy_matrix(mdp, pi);
  const Vector r = loop_policy_reward(mdp, pi);
  Vector v = Vector::Zero(mdp.n_states());
  for (int it = 0; it < 100000; ++it) {
    const Vector next = r + mdp.gamma() * p * v;
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (change <= 1e-14) break;
  }
  return v;
}

Vector power_stationary(const Matrix& p) {
  Vector mu = Vector::Constant(p.rows(), 1.0 / static_cast<double>(p.rows()));
  for (int it = 0; it < 1000000; ++it) {
    Vector next = (mu.transpose() * p).transpose();
    next /= next.sum();
    const double change = (next - mu).cwiseAbs().maxCoeff();
    mu = next;
    if (change <= 1e-16) break;
  }
  return mu;
}

double bellman_residual(const Mdp& mdp, const RowMatrix& q) {
  double worst = 0.0;
  for (std::size_t s = 0; s < mdp.n_states(); ++s)
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      double target = mdp.reward(s, a);
      for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) target += mdp.gamma() * mdp.transition(s, a, s2) * q.row(s2).maxCoeff();
      worst = std::max(worst, std::abs(target - q(s, a)));
    }
  return worst;
}

GeneratorParams varied_params(std::size_t k) {
  GeneratorParams p;
  p.n_states = 2 + (7 * k) % 19;
  p.n_actions = 2 + k % 3;
  p.branching = std::min<std::size_t>(3, p.n_states);
  p.d = std::min<std::size_t>(p.n_states, 1 + k % 5);
  p.n = 1 + k % 3;
  p.gamma = 0.5 + 0.45 * static_cast<double>(k % 4) / 3.0;
  p.n_behaviors = 1 + k % 3;
  p.heterogeneity = 0.5;
  return p;
}

std::uint64_t instance_seed(const ValidationOptions& options, int check, std::size_t k) {
  return derive_key(options.seed, {static_cast<std::uint64_t>(check), k});
}

bool files_identical(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  const std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return sa == sb;
}

}  // namespace

CheckResult check_iid_closed_form(const ValidationOptions& options) {
  CheckResult r = start_check(1, "iid scalar closed form", 30.0);
  Stopwatch watch;
  const std::vector<std::size_t> grid{0, 10, 50, 200};
  const IidReport report = iid_scalar_validation(0.1, 1.0, 1.0, grid, 100000, options.seed, options.parallelism);
  std::string detail;
  for (const IidRow& row : report.rows) {
    detail += strf("t=%zu emp=%.6f exact=%.6f z=%.2f; ", row.t, row.empirical, row.exact, row.z);
    r.observed["rows"].push_back({{"t", row.t}, {"empirical", row.empirical}, {"se", row.se}, {"exact", row.exact}, {"z", row.z}});
  }
  r.observed["max_abs_z"] = report.max_abs_z;
  detail += strf("max |z| = %.2f (limit 3)", report.max_abs_z);
  finish(r, report.max_abs_z <= 3.0, detail, watch);
  return r;
}

CheckResult check_oracles(const ValidationOptions& options) {
  CheckResult r = start_check(2, "oracle consistency", 10.0);
  Stopwatch watch;
  double worst_v = 0.0, worst_q = 0.0, worst_proj = 0.0, worst_tab = 0.0;
  for (std::size_t k = 0; k < 20; ++k) {
    const GeneratorParams p = varied_params(k);
    const Environment env = generate_environment(p, instance_seed(options, 2, k), true);
    const Mdp& mdp = env.mdp;
    const Vector v_pi = value_function_oracle(mdp, env.target);
    worst_v = std::max(worst_v, sup_norm(v_pi - iterative_policy_evaluation(mdp, env.target)));
    worst_q = std::max(worst_q, bellman_residual(mdp, q_star_oracle(mdp)));

    const FeatureMatrix& features = *env.features;
    const Vector v = projected_fixed_point_oracle(mdp, env.target, features, p.n);
    const Matrix pp = loop_policy_matrix(mdp, env.target);
    const Vector rr = loop_policy_reward(mdp, env.target);
    const Vector mu = power_stationary(pp);
    Vector tv = features.matrix() * v;
    for (std::size_t step = 0; step < p.n; ++step) tv = rr + mdp.gamma() * pp * tv;
    const Matrix& phi = features.matrix();
    const Matrix gram = phi.transpose() * mu.asDiagonal() * phi;
    const Vector projected = phi * gram.ldlt().solve(phi.transpose() * mu.asDiagonal() * tv);
    worst_proj = std::max(worst_proj, sup_norm(features.matrix() * v - projected));

    const Vector tab = projected_fixed_point_oracle(mdp, env.target, FeatureMatrix::tabular(p.n_states), p.n);
    worst_tab = std::max(worst_tab, sup_norm(tab - v_pi));
  }
  r.observed = {{"value_vs_iterative", worst_v}, {"q_star_residual", worst_q}, {"projected_residual", worst_proj},
                {"tabular_projection_vs_value", worst_tab}};
  const bool ok = worst_v <= 1e-8 && worst_q <= 1e-10 && worst_proj <= 1e-8 && worst_tab <= 1e-8;
  finish(r, ok,
         strf("20 instances: |V - iterative| = %.2e, Q* residual = %.2e, projected residual = %.2e, "
              "tabular projection vs V = %.2e",
              worst_v, worst_q, worst_proj, worst_tab),
         watch);
  return r;
}

CheckResult check_contraction(const ValidationOptions& options) {
  CheckResult r = start_check(3, "contraction factors", 20.0);
  Stopwatch watch;
  std::size_t violations = 0, exact_violations = 0, pairs = 0;
  double worst_ratio_td = 0.0, worst_ratio_q = 0.0, max_exact = 0.0, max_radius = 0.0, worst_matrix_gap = 0.0;
  double min_gamma_c = 1.0;
  for (AlgorithmKind kind : {AlgorithmKind::off_policy_td_tabular, AlgorithmKind::q_learning}) {
    for (std::size_t k = 0; k < 20; ++k) {
      GeneratorParams p = varied_params(k);
      if (kind == AlgorithmKind::q_learning) p.n = 1;
      const InstancePtr inst = generate_instance(kind, p, instance_seed(options, 3, k));
      const TheoryConstants tc = theory_constants(*inst);
      const double bound = tc.gamma_c * options.gamma_c_scale;
      min_gamma_c = std::min(min_gamma_c, bound);
      max_exact = std::max(max_exact, tc.gamma_c_operator);
      CounterRng rng(derive_key(options.seed, {3, k, static_cast<std::uint64_t>(kind)}));
      for (std::size_t pair = 0; pair < 100; ++pair) {
        const Vector t1 = random_theta(inst->dim(), rng);
        const Vector t2 = random_theta(inst->dim(), rng);
        const double dist = sup_norm(t1 - t2);
        for (std::size_t agent = 0; agent < inst->behaviors.size(); ++agent) {
          const double diff = sup_norm(expected_operator(*inst, agent, t1) - expected_operator(*inst, agent, t2));
          ++pairs;
          if (diff > bound * dist + 1e-12) ++violations;
          if (diff > tc.gamma_c_operator * dist + 1e-12) ++exact_violations;
          double& worst = kind == AlgorithmKind::q_learning ? worst_ratio_q : worst_ratio_td;
          if (dist > 0.0) worst = std::max(worst, diff / dist / tc.gamma_c);
        }
      }
    }
  }
  for (std::size_t k = 0; k < 20; ++k) {
    GeneratorParams p = varied_params(k);
    p.n_behaviors = 1;
    const InstancePtr inst = generate_instance(AlgorithmKind::on_policy_td_lfa, p, instance_seed(options, 3, 100 + k));
    // Expected update matrix rebuilt from its definition.
    const Matrix& phi = inst->features->matrix();
    Matrix pn = Matrix::Identity(p.n_states, p.n_states);
    for (std::size_t step = 0; step < p.n; ++step) pn = pn * inst->p_target;
    const Matrix drift = std::pow(inst->mdp.gamma(), static_cast<double>(p.n)) * pn - Matrix::Identity(p.n_states, p.n_states);
    const Matrix m = Matrix::Identity(p.d, p.d) + phi.transpose() * inst->mu_target.asDiagonal() * drift * phi / inst->beta;
    worst_matrix_gap = std::max(worst_matrix_gap, (m - expected_operator_matrix(*inst, 0)).cwiseAbs().maxCoeff());
    const double radius = m.eigenvalues().cwiseAbs().maxCoeff();
    max_radius = std::max(max_radius, radius);
  }
  const double radius_limit = 0.99 * options.gamma_c_scale;
  r.observed = {{"pairs", pairs},
                {"violations", violations},
                {"violations_against_exact_modulus", exact_violations},
                {"worst_ratio_over_gamma_c_off_policy", worst_ratio_td},
                {"worst_ratio_over_gamma_c_q_learning", worst_ratio_q},
                {"max_exact_operator_modulus", max_exact},
                {"lfa_max_spectral_radius", max_radius},
                {"lfa_matrix_gap", worst_matrix_gap},
                {"gamma_c_scale", options.gamma_c_scale}};
  const bool ok = violations == 0 && max_radius <= radius_limit && worst_matrix_gap <= 1e-12;
  finish(r, ok,
         strf("%zu violations in %zu pair checks (worst ratio/gamma_c: TD %.4f, Q %.4f; %zu violations against "
              "the exact operator modulus); LFA max spectral radius %.4f (limit %.4f), matrix gap %.1e",
              violations, pairs, worst_ratio_td, worst_ratio_q, exact_violations, max_radius, radius_limit,
              worst_matrix_gap),
         watch);
  return r;
}

CheckResult check_fixed_points(const ValidationOptions& options) {
  CheckResult r = start_check(4, "fixed-point nullity", 20.0);
  Stopwatch watch;
  std::map<std::string, double> zero_gap, raw_gap;
  for (AlgorithmKind kind : {AlgorithmKind::on_policy_td_lfa, AlgorithmKind::off_policy_td_tabular, AlgorithmKind::q_learning}) {
    const std::string name = to_string(kind);
    zero_gap[name] = 0.0;
    raw_gap[name] = 0.0;
    for (std::size_t k = 0; k < 20; ++k) {
      GeneratorParams p = varied_params(k);
      if (kind == AlgorithmKind::q_learning) p.n = 1;
      if (kind == AlgorithmKind::on_policy_td_lfa) p.n_behaviors = 1;
      const InstancePtr inst = generate_instance(kind, p, instance_seed(options, 4, k));
      const Mdp& mdp = inst->mdp;
      for (std::size_t b = 0; b < inst->behaviors.size(); ++b) {
        zero_gap[name] = std::max(zero_gap[name], sup_norm(expected_operator(*inst, b, Vector::Zero(inst->dim()))));
        const Policy& behavior = inst->behaviors[b];
        Vector mean = Vector::Zero(inst->dim());
        if (kind == AlgorithmKind::q_learning) {
          const RowMatrix& q = inst->q_star;
          for (std::size_t s = 0; s < mdp.n_states(); ++s)
            for (std::size_t a = 0; a < mdp.n_actions(); ++a)
              for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) {
                const double prob = inst->mu_behavior[b](s) * behavior.prob(s, a) * mdp.transition(s, a, s2);
                if (prob == 0.0) continue;
                const Transition tr{static_cast<int>(s), static_cast<int>(a), static_cast<int>(s2)};
                mean += prob * flatten(q_learning_update(q, tr, mdp, 1.0) - q);
              }
        } else {
          const Vector& v = inst->fixed_point;
          for_each_window(mdp, behavior, inst->mu_behavior[b], inst->n,
                          [&](std::span<const int> states, std::span<const int> actions, double prob) {
                            const Vector next = kind == AlgorithmKind::on_policy_td_lfa
                                                    ? onpolicy_td_update(v, states, actions, *inst->features, mdp, inst->n, 1.0)
                                                    : offpolicy_td_update(v, states, actions, inst->target, behavior, mdp, inst->n, 1.0);
                            mean += prob * (next - v);
                          });
        }
        raw_gap[name] = std::max(raw_gap[name], sup_norm(mean));
      }
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, gap] : zero_gap) {
    ok = ok && gap <= 1e-12 && raw_gap[name] <= 1e-12;
    detail += strf("%s: |Gbar(0)| = %.1e, expected raw update at oracle = %.1e; ", name.c_str(), gap, raw_gap[name]);
    r.observed[name] = {{"expected_operator_at_zero", gap}, {"expected_raw_update_at_oracle", raw_gap[name]}};
  }
  detail += "20 instances each";
  finish(r, ok, detail, watch);
  return r;
}

CheckResult check_assumptions(const ValidationOptions& options) {
  CheckResult r = start_check(5, "assumption suite", 60.0);
  Stopwatch watch;
  bool ok = true;
  std::string detail;

  for (AlgorithmKind kind : {AlgorithmKind::on_policy_td_lfa, AlgorithmKind::off_policy_td_tabular, AlgorithmKind::q_learning}) {
    double worst_a1 = 0.0, worst_a2 = 0.0, worst_b = 0.0;
    std::size_t exceed = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      GeneratorParams p = varied_params(k + 3);
      if (kind == AlgorithmKind::q_learning) p.n = 1;
      if (kind == AlgorithmKind::on_policy_td_lfa) p.n_behaviors = 1;
      const InstancePtr inst = generate_instance(kind, p, instance_seed(options, 5, k));
      const FedSamProblem problem = build_problem(inst);
      const TheoryConstants tc = theory_constants(*inst);
      const NormKind nk = problem.norm_kind;
      const std::size_t agents = inst->behaviors.size();
      std::vector<std::unique_ptr<NoiseProcess>> noise;
      for (std::size_t i = 0; i < agents; ++i)
        noise.push_back(problem.make_noise(i, CounterRng(agent_stream_key(options.seed, 5000 + k, i))));
      CounterRng rng(derive_key(options.seed, {5, k, static_cast<std::uint64_t>(kind)}));
      for (std::size_t sample = 0; sample < 10000; ++sample) {
        const std::size_t agent = sample % agents;
        noise[agent]->advance();
        const NoiseView y = noise[agent]->current();
        const Vector t1 = random_theta(problem.dim, rng);
        const Vector t2 = random_theta(problem.dim, rng);
        const Vector g1 = problem.apply_G(agent, t1, y);
        const double lip = norm(nk, g1 - problem.apply_G(agent, t2, y)) / norm(nk, t1 - t2);
        const double growth = norm(nk, g1) / norm(nk, t1);
        const double bound = norm(nk, problem.apply_b(agent, y));
        worst_a1 = std::max(worst_a1, lip / tc.A1);
        worst_a2 = std::max(worst_a2, growth / tc.A2);
        worst_b = std::max(worst_b, tc.B > 0.0 ? bound / tc.B : (bound > 0.0 ? 2.0 : 0.0));
        if (lip > tc.A1 * (1.0 + 1e-12) || growth > tc.A2 * (1.0 + 1e-12) || bound > tc.B * (1.0 + 1e-12) + 1e-12) ++exceed;
      }
    }
    ok = ok && exceed == 0;
    detail += strf("%s: %zu exceedances, max sample/declared A1 %.3f A2 %.3f B %.3f; ", to_string(kind), exceed,
                   worst_a1, worst_a2, worst_b);
    r.observed[to_string(kind)] = {{"exceedances", exceed}, {"A1_ratio", worst_a1}, {"A2_ratio", worst_a2}, {"B_ratio", worst_b}};
  }

  // Noise averaging on i.i.d. scalar noise.
  const FedSamProblem iid = iid_scalar_problem(1.0, 0.0);
  const double base = noise_average_diagnostic(iid, 1, 1, 20000, derive_key(options.seed, {5, 1}));
  double prev = base;
  for (std::size_t n : {4, 16}) {
    const double value = noise_average_diagnostic(iid, n, 1, 20000, derive_key(options.seed, {5, n}));
    const double scaled = value / base * std::sqrt(static_cast<double>(n));
    const bool within = std::abs(scaled - 1.0) <= 0.2 && value < prev;
    ok = ok && within;
    prev = value;
    detail += strf("N=%zu ratio*sqrt(N) = %.3f; ", n, scaled);
    r.observed["noise_scaling"].push_back({{"n_agents", n}, {"ratio_times_sqrt_n", scaled}});
  }

  // Cross-agent independence: chi-square on the joint state of two agents.
  RowMatrix reward = RowMatrix::Zero(2, 1);
  const Mdp chain(2, 1, {0.9, 0.1, 0.2, 0.8}, reward, 0.5);
  const Policy single = Policy::uniform(2, 1);
  const std::vector<double> xi = uniform_distribution(2);
  double worst_chi2 = 0.0;
  for (auto [a, b] : {std::pair<std::size_t, std::size_t>{0, 1}, {2, 5}, {0, 15}}) {
    double table[2][2] = {{0, 0}, {0, 0}};
    const std::size_t draws = 20000;
    for (std::size_t t = 0; t < draws; ++t) {
      AgentChain ca(chain, single, xi, 1, a, CounterRng(agent_stream_key(options.seed, t, a)));
      AgentChain cb(chain, single, xi, 1, b, CounterRng(agent_stream_key(options.seed, t, b)));
      for (int step = 0; step < 10; ++step) {
        ca.advance();
        cb.advance();
      }
      table[ca.states()[0]][cb.states()[0]] += 1.0;
    }
    double chi2 = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double expected = (table[i][0] + table[i][1]) * (table[0][j] + table[1][j]) / static_cast<double>(draws);
        chi2 += (table[i][j] - expected) * (table[i][j] - expected) / expected;
      }
    worst_chi2 = std::max(worst_chi2, chi2);
  }
  ok = ok && worst_chi2 <= 9.0;
  detail += strf("independence chi2 max %.2f (limit 9)", worst_chi2);
  r.observed["independence_chi2"] = worst_chi2;
  finish(r, ok, detail, watch);
  return r;
}

CheckResult check_single_node(const ValidationOptions& options) {
  CheckResult r = start_check(6, "single-node convergence", 120.0);
  Stopwatch watch;
  bool ok = true;
  std::string detail;
  GeneratorParams p;
  p.n_states = 5;
  for (AlgorithmKind kind : {AlgorithmKind::off_policy_td_tabular, AlgorithmKind::q_learning}) {
    const InstancePtr inst = generate_instance(kind, p, 1);
    const Vector reference = kind == AlgorithmKind::q_learning ? flatten(inst->q_star) : inst->v_pi;
    std::size_t hits = 0;
    double worst = 0.0;
    std::vector<double> errors;
    for (std::size_t seed = 0; seed < 20; ++seed) {
      FedRunConfig cfg;
      cfg.step_size = 0.01;
      cfg.horizon = 200000;
      cfg.master_seed = options.seed;
      cfg.trial = seed;
      cfg.record_series = false;
      const RunTrace trace = run_local_rule(raw_rule(inst), chain_noise_factory(inst), Vector::Zero(inst->dim()),
                                            NormKind::sup, cfg);
      const double err = sup_norm(trace.final_theta - reference);
      errors.push_back(err);
      worst = std::max(worst, err);
      if (err <= 0.05) ++hits;
    }
    const bool pass = hits >= 19;
    ok = ok && pass;
    detail += strf("%s: %zu/20 runs within 0.05 (worst %.4f); ", to_string(kind), hits, worst);
    r.observed[to_string(kind)] = {{"within", hits}, {"errors", errors}};
  }
  detail += "5 states, n=1, alpha=0.01, T=200000, need >= 19/20";
  finish(r, ok, detail, watch);
  return r;
}

namespace {

ExperimentSpec trend_spec(const ValidationOptions& options) {
  ExperimentSpec spec;
  spec.kind = AlgorithmKind::off_policy_td_tabular;
  spec.alpha = {0.05};
  spec.horizon = {100000};
  spec.replications = 100;
  spec.master_seed = options.seed;
  return spec;
}

}  // namespace

CheckResult check_linear_speedup(const ValidationOptions& options) {
  CheckResult r = start_check(7, "linear speedup", 600.0);
  Stopwatch watch;
  ExperimentSpec spec = trend_spec(options);
  spec.n_agents = {1, 2, 4, 8, 16};
  spec.sync_period = {"1"};
  const SweepContext ctx = prepare_experiment(spec);
  const SweepResult res = run_sweep(spec, ctx, options.parallelism);
  if (res.speedups.size() != 1) {
    finish(r, false, "speedup fit unavailable (invalid cells)", watch);
    return r;
  }
  const SpeedupFit& fit = res.speedups.front();
  r.observed = summary_json(res);
  const bool ok = fit.fit.slope >= -1.3 && fit.fit.slope <= -0.5 && fit.ratio <= 0.25;
  std::string detail = "MSE by N:";
  for (std::size_t k = 0; k < fit.n_agents.size(); ++k) detail += strf(" %g:%.3e", fit.n_agents[k], fit.mse[k]);
  detail += strf("; slope %.3f +- %.3f (need [-1.3, -0.5]); MSE(16)/MSE(1) = %.3f (need <= 0.25)", fit.fit.slope,
                 fit.fit.half_width, fit.ratio);
  finish(r, ok, detail, watch);
  return r;
}

CheckResult check_sync_period(const ValidationOptions& options) {
  CheckResult r = start_check(8, "synchronization period", 600.0);
  Stopwatch watch;
  ExperimentSpec spec = trend_spec(options);
  spec.n_agents = {8};
  spec.sync_period = {"1", "4", "16", "64"};
  spec.generator.n_behaviors = 8;
  spec.generator.heterogeneity = 0.5;
  const SweepContext ctx = prepare_experiment(spec);
  const SweepResult res = run_sweep(spec, ctx, options.parallelism);
  double max_omega = 0.0;
  for (const CellSummary& c : res.cells) max_omega = std::max(max_omega, c.max_sync_omega);
  r.observed = summary_json(res);
  if (res.k_curves.size() != 1) {
    finish(r, false, "K-curve unavailable (invalid cells)", watch);
    return r;
  }
  const KCurve& curve = res.k_curves.front();
  const bool ok = curve.non_decreasing && max_omega == 0.0;
  std::string detail = "MSE by K:";
  for (std::size_t k = 0; k < curve.sync_period.size(); ++k)
    detail += strf(" %g:%.3e+-%.1e", curve.sync_period[k], curve.mse[k], curve.se[k]);
  detail += strf("; slope per log2 K %.2e +- %.2e (%s), spearman %.2f; max Omega at sync %g", curve.fit.slope,
                 curve.fit.half_width, curve.increasing ? "significant increase" : "no significant decrease",
                 curve.spearman, max_omega);
  finish(r, ok, detail, watch);
  return r;
}

CheckResult check_determinism(const ValidationOptions& options) {
  CheckResult r = start_check(9, "determinism", 0.0);
  Stopwatch watch;
  bool ok = true;
  std::string detail;
  std::size_t compared = 0;
  for (AlgorithmKind kind : {AlgorithmKind::on_policy_td_lfa, AlgorithmKind::off_policy_td_tabular, AlgorithmKind::q_learning}) {
    ExperimentSpec spec;
    spec.kind = kind;
    spec.generator.n_behaviors = kind == AlgorithmKind::on_policy_td_lfa ? 1 : 2;
    spec.n_agents = {1, 4};
    spec.sync_period = {"1", "T/N"};
    spec.alpha = {0.05};
    spec.horizon = {2000};
    spec.replications = 4;
    spec.record_series = true;
    spec.master_seed = options.seed;
    const SweepContext ctx = prepare_experiment(spec);
    const std::filesystem::path root = options.work_dir / to_string(kind);
    const std::vector<std::pair<std::string, std::size_t>> runs{{"p1", 1}, {"p8", 8}, {"p1again", 1}};
    for (const auto& [name, par] : runs) persist(root / name, spec, ctx, run_sweep(spec, ctx, par));
    for (const char* file : {"results.csv", "summary.json", "metadata.json", "series.jsonl"})
      for (const char* other : {"p8", "p1again"}) {
        ++compared;
        if (!files_identical(root / "p1" / file, root / other / file)) {
          ok = false;
          detail += strf("%s/%s differs between p1 and %s; ", to_string(kind), file, other);
        }
      }
    // Agent-level parallelism inside one trial.
    TrialOptions serial;
    serial.master_seed = options.seed;
    serial.record_series = true;
    TrialOptions threaded = serial;
    threaded.parallel_agents = true;
    const Cell cell{8, "4", 4, 0.05, 2000};
    const TrialResult a = run_trial(ctx.problem, ctx.constants, cell, 0, 0, serial);
    const TrialResult b = run_trial(ctx.problem, ctx.constants, cell, 0, 0, threaded);
    ++compared;
    if (results_csv({a}) != results_csv({b}) || a.series_error != b.series_error) {
      ok = false;
      detail += strf("%s: agent-parallel trial differs; ", to_string(kind));
    }
  }
  std::error_code ec;
  std::filesystem::remove_all(options.work_dir, ec);
  r.observed = {{"comparisons", compared}};
  if (ok) detail = strf("%zu file/trial comparisons byte-identical across parallelism 1, 8 and reruns", compared);
  finish(r, ok, detail, watch);
  return r;
}

CheckResult check_output_distribution(const ValidationOptions& options) {
  CheckResult r = start_check(10, "output-time distribution", 0.0);
  Stopwatch watch;
  double worst_sum = 0.0;
  for (double c : {0.5, 1.0 - 1e-6, 2.0})
    for (std::size_t t : {1, 10, 100000}) {
      const std::vector<double> q = q_distribution(c, t);
      // Extended accumulator: a plain double sum of 1e5 terms carries ~1e-12 of its own rounding.
      long double total = 0.0L;
      for (double v : q) total += v;
      worst_sum = std::max(worst_sum, static_cast<double>(std::abs(total - 1.0L)));
    }
  // Frequencies: T = 10 per index, and T = 100000 in 10 equal-width bins.
  double worst_z = 0.0;
  std::size_t bins = 0;
  const std::size_t draws = 100000;
  for (double c : {0.5, 1.0 - 1e-6, 2.0})
    for (std::size_t horizon : {10, 100000}) {
      const std::vector<double> q = q_distribution(c, horizon);
      const std::size_t width = horizon / 10;
      std::vector<double> expected(10, 0.0), counts(10, 0.0);
      for (std::size_t t = 0; t < horizon; ++t) expected[t / width] += q[t];
      CounterRng rng(derive_key(options.seed, {10, horizon, static_cast<std::uint64_t>(c * 1e6)}));
      const OutputSampler sampler(q);
      for (std::size_t k = 0; k < draws; ++k) counts[sampler(rng) / width] += 1.0;
      for (std::size_t b = 0; b < 10; ++b) {
        const double mean = expected[b] * draws;
        const double sd = std::sqrt(draws * expected[b] * (1.0 - expected[b]));
        const double z = sd > 0.0 ? (counts[b] - mean) / sd : (counts[b] == mean ? 0.0 : 1e300);
        worst_z = std::max(worst_z, std::abs(z));
        ++bins;
      }
    }
  r.observed = {{"max_sum_error", worst_sum}, {"max_abs_z", worst_z}, {"bins", bins}};
  finish(r, worst_sum <= 1e-12 && worst_z <= 3.0,
         strf("max |sum q - 1| = %.1e (limit 1e-12); max |z| over %zu bins = %.2f (limit 3)", worst_sum, bins, worst_z),
         watch);
  return r;
}

CheckResult run_check(int id, const ValidationOptions& options) {
  using Fn = CheckResult (*)(const ValidationOptions&);
  static const Fn table[kCheckCount] = {check_iid_closed_form, check_oracles,         check_contraction,
                                        check_fixed_points,    check_assumptions,     check_single_node,
                                        check_linear_speedup,  check_sync_period,     check_determinism,
                                        check_output_distribution};
  if (id < 1 || id > kCheckCount) throw ParameterError("check id must lie in 1.." + std::to_string(kCheckCount));
  try {
    return table[id - 1](options);
  } catch (const std::exception& e) {
    CheckResult r;
    r.id = id;
    r.name = "check " + std::to_string(id);
    r.detail = std::string("error: ") + e.what();
    return r;
  }
}

std::vector<CheckResult> run_validation(const std::vector<int>& ids, const ValidationOptions& options) {
  std::vector<CheckResult> out;
  for (int id : ids) out.push_back(run_check(id, options));
  return out;
}

Json validation_report(const std::vector<CheckResult>& results, const ValidationOptions& options) {
  Json checks = Json::array();
  bool all = true;
  for (const CheckResult& r : results) {
    all = all && r.passed;
    checks.push_back({{"id", r.id},
                      {"name", r.name},
                      {"status", r.passed ? "pass" : "fail"},
                      {"detail", r.detail},
                      {"seconds", r.seconds},
                      {"time_limit", r.time_limit},
                      {"observed", r.observed}});
  }
  return Json{{"code_version", kCodeVersion},
              {"seed", options.seed},
              {"parallelism", options.parallelism},
              {"gamma_c_scale", options.gamma_c_scale},
              {"passed", all},
              {"checks", std::move(checks)}};
}

std::string format_check_line(const CheckResult& r) {
  return strf("criterion %d %s %s: ", r.id, r.passed ? "PASS" : "FAIL", r.name.c_str()) + r.detail +
         strf(" (%.1f s)", r.seconds);
}

}  // namespace fedsam
