#include "fedsam/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <tbb/parallel_for.h>

#include "fedsam/error.hpp"

namespace fedsam {
namespace {

constexpr std::uint64_t kOutputStreamId = ~std::uint64_t{0};
constexpr std::uint64_t kRegistrationStreamId = 0x7265676973746572ull;

// Offsets from the first agent keep the mean exact when all agents agree.
Vector mean_of(const std::vector<Vector>& thetas) {
  const Vector& base = thetas.front();
  Vector offset = Vector::Zero(base.size());
  for (const Vector& t : thetas) offset += t - base;
  return base + offset / static_cast<double>(thetas.size());
}

LocalRule generic_rule(const FedSamProblem& problem) {
  return [&problem](std::size_t agent, Eigen::Ref<Vector> x, const NoiseView& y, double step) {
    const Vector theta = x;
    x += step * (problem.apply_G(agent, theta, y) - theta + problem.apply_b(agent, y));
  };
}

}  // namespace

double norm(NormKind kind, const Eigen::Ref<const Vector>& v) {
  return kind == NormKind::sup ? sup_norm(v) : v.norm();
}

const char* to_string(NormKind kind) { return kind == NormKind::sup ? "sup" : "euclidean"; }

void register_problem(FedSamProblem& problem, std::uint64_t seed, std::size_t agents,
                      std::size_t samples) {
  problem.registered = false;
  if (problem.dim == 0) throw ValidationError("problem dimension must be positive");
  if (static_cast<std::size_t>(problem.theta0.size()) != problem.dim)
    throw ShapeError("theta0 length does not match the problem dimension");
  if (!problem.apply_G || !problem.apply_b || !problem.make_noise)
    throw ValidationError("problem needs apply_G, apply_b and make_noise");
  if (!(problem.step_scale > 0.0)) throw ValidationError("step scale must be positive");

  const Vector zero = Vector::Zero(problem.dim);
  for (std::size_t i = 0; i < agents; ++i) {
    auto noise = problem.make_noise(i, CounterRng(derive_key(seed, {kRegistrationStreamId, i})));
    CounterRng theta_rng(derive_key(seed, {kRegistrationStreamId, i, 1}));
    for (std::size_t k = 0; k < samples; ++k, noise->advance()) {
      const NoiseView y = noise->current();
      const Vector g0 = problem.apply_G(i, zero, y);
      if (static_cast<std::size_t>(g0.size()) != problem.dim) throw ShapeError("apply_G returned the wrong length");
      if (norm(problem.norm_kind, g0) > 1e-12)
        throw ValidationError("G(0, y) != 0 for agent " + std::to_string(i) + " at sample " + std::to_string(k));
      const Vector b = problem.apply_b(i, y);
      if (static_cast<std::size_t>(b.size()) != problem.dim) throw ShapeError("apply_b returned the wrong length");
      if (!problem.fast_step) continue;

      Vector theta(problem.dim);
      for (auto& v : theta) v = standard_normal(theta_rng);
      const double step = 0.37;
      Vector fast = theta;
      problem.fast_step(i, fast, y, step);
      const Vector slow = theta + step * (problem.apply_G(i, theta, y) - theta + b);
      if (norm(NormKind::sup, fast - slow) > 1e-12 * (1.0 + norm(NormKind::sup, slow)))
        throw ValidationError("fast step disagrees with the generic update for agent " + std::to_string(i));
    }
  }
  problem.registered = true;
}

void FedRunConfig::validate() const {
  if (n_agents < 1) throw ParameterError("n_agents must be >= 1");
  if (sync_period < 1) throw ParameterError("sync_period must be >= 1");
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ParameterError("step_size must be finite and >= 0");
  if (horizon < 1) throw ParameterError("horizon must be >= 1");
  if (!(output_c > 0.0) || !std::isfinite(output_c)) throw ParameterError("output_c must be positive");
}

std::size_t FedRunConfig::effective_checkpoint_every() const {
  return checkpoint_every > 0 ? checkpoint_every : std::max<std::size_t>(1, horizon / 500);
}

std::vector<double> q_distribution(double c, std::size_t horizon) {
  if (!(c > 0.0) || !std::isfinite(c)) throw ParameterError("output constant c must be positive");
  if (horizon < 1) throw ParameterError("horizon must be >= 1");
  const double log_c = std::log(c);
  // log w_t = -t log c peaks at t = 0 for c >= 1 and at t = T - 1 otherwise.
  const double peak = log_c >= 0.0 ? 0.0 : -static_cast<double>(horizon - 1) * log_c;
  std::vector<double> q(horizon);
  long double total = 0.0L;
  for (std::size_t t = 0; t < horizon; ++t) {
    q[t] = std::exp(-static_cast<double>(t) * log_c - peak);
    total += q[t];
  }
  const double norm = static_cast<double>(total);
  for (double& v : q) v /= norm;
  return q;
}

std::size_t sample_output_index(double c, std::size_t horizon, CounterRng& rng) {
  return OutputSampler(q_distribution(c, horizon))(rng);
}

OutputSampler::OutputSampler(const std::vector<double>& q) : cumulative_(q.size()) {
  double total = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] > 0.0) {
      total += q[k];
      last_positive_ = k;
    }
    cumulative_[k] = total;
  }
}

std::size_t OutputSampler::operator()(CounterRng& rng) const {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) return last_positive_;
  return static_cast<std::size_t>(it - cumulative_.begin());
}

std::uint64_t agent_stream_key(std::uint64_t master_seed, std::uint64_t trial, std::size_t agent) {
  return derive_key(master_seed, {trial, agent});
}

std::uint64_t output_stream_key(std::uint64_t master_seed, std::uint64_t trial) {
  return derive_key(master_seed, {trial, kOutputStreamId});
}

Vector fedsam_local_step(const FedSamProblem& problem, std::size_t agent, const Vector& theta,
                         const NoiseView& y, double alpha, std::size_t t) {
  if (static_cast<std::size_t>(theta.size()) != problem.dim) throw ShapeError("theta has the wrong length");
  Vector out = theta + alpha * (problem.apply_G(agent, theta, y) - theta + problem.apply_b(agent, y));
  if (!out.allFinite()) throw DivergenceError(t, agent);
  return out;
}

void sync_average(std::vector<Vector>& thetas) {
  if (thetas.empty()) throw ShapeError("sync_average needs at least one agent");
  for (const Vector& t : thetas)
    if (t.size() != thetas.front().size()) throw ShapeError("agents hold parameters of different lengths");
  const Vector mean = mean_of(thetas);
  for (Vector& t : thetas) t = mean;
}

SyncError sync_error(const std::vector<Vector>& thetas, NormKind kind) {
  if (thetas.empty()) return {};
  const Vector mean = mean_of(thetas);
  SyncError out;
  for (const Vector& t : thetas) {
    const double dev = norm(kind, mean - t);
    out.delta += dev;
    out.omega += dev * dev;
  }
  out.delta /= static_cast<double>(thetas.size());
  out.omega /= static_cast<double>(thetas.size());
  return out;
}

RunTrace run_local_rule(const LocalRule& rule, const NoiseFactory& make_noise, const Vector& x0,
                        NormKind kind, const FedRunConfig& config) {
  config.validate();
  const std::size_t n = config.n_agents;
  const std::size_t horizon = config.horizon;
  const std::size_t k_sync = config.sync_period;
  const std::size_t every = config.effective_checkpoint_every();
  const double step = config.step_size;

  std::vector<Vector> x(n, x0);
  std::vector<std::unique_ptr<NoiseProcess>> noise(n);
  for (std::size_t i = 0; i < n; ++i)
    noise[i] = make_noise(i, CounterRng(agent_stream_key(config.master_seed, config.trial, i)));

  CounterRng output_rng(output_stream_key(config.master_seed, config.trial));
  RunTrace trace;
  trace.output_index = sample_output_index(config.output_c, horizon, output_rng);

  auto checkpoint = [&](std::size_t t) {
    const SyncError err = sync_error(x, kind);
    trace.checkpoint_t.push_back(t);
    trace.theta_bar_series.push_back(mean_of(x));
    trace.omega_series.push_back(err.omega);
    trace.delta_series.push_back(err.delta);
  };

  const std::size_t end =
      config.stop_at_output && !config.record_series ? trace.output_index : horizon;
  constexpr std::size_t kNever = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> failed_at(n, kNever);

  std::size_t t = 0;
  if (trace.output_index == 0) trace.output_theta = mean_of(x);
  if (config.record_series) checkpoint(0);

  while (t < end) {
    std::size_t next = std::min(end, (t / k_sync + 1) * k_sync);
    if (config.record_series) next = std::min(next, (t / every + 1) * every);
    if (trace.output_index > t) next = std::min(next, trace.output_index);

    auto run_agent = [&](std::size_t i) {
      Vector& xi = x[i];
      NoiseProcess& yi = *noise[i];
      for (std::size_t s = t; s < next; ++s) {
        rule(i, xi, yi.current(), step);
        if (!xi.allFinite()) {
          failed_at[i] = s;
          return;
        }
        yi.advance();
      }
    };
    if (config.parallel && n > 1)
      tbb::parallel_for(std::size_t{0}, n, run_agent);
    else
      for (std::size_t i = 0; i < n; ++i) run_agent(i);

    std::size_t bad_agent = kNever;
    for (std::size_t i = 0; i < n; ++i)
      if (failed_at[i] != kNever && (bad_agent == kNever || failed_at[i] < failed_at[bad_agent])) bad_agent = i;
    if (bad_agent != kNever) throw DivergenceError(failed_at[bad_agent], bad_agent);

    t = next;
    if (t % k_sync == 0) {
      sync_average(x);
      trace.max_sync_omega = std::max(trace.max_sync_omega, sync_error(x, kind).omega);
      ++trace.sync_count;
    }
    if (t == trace.output_index) trace.output_theta = mean_of(x);
    if (config.record_series && (t % every == 0 || t == horizon)) checkpoint(t);
  }
  trace.final_theta = mean_of(x);
  trace.steps_run = t;
  return trace;
}

RunTrace run_fedsam(const FedSamProblem& problem, const FedRunConfig& config) {
  if (!problem.registered) throw PreconditionError("problem must be registered before running");
  FedRunConfig scaled = config;
  scaled.step_size = config.step_size * problem.step_scale;
  const LocalRule rule = problem.fast_step ? problem.fast_step : generic_rule(problem);
  return run_local_rule(rule, problem.make_noise, problem.theta0, problem.norm_kind, scaled);
}

double noise_average_diagnostic(const FedSamProblem& problem, std::size_t n_agents, std::size_t r,
                                std::size_t samples, std::uint64_t seed) {
  if (n_agents < 1 || samples < 1) throw ParameterError("need at least one agent and one sample");
  double total = 0.0;
  for (std::size_t m = 0; m < samples; ++m) {
    Vector sum = Vector::Zero(problem.dim);
    for (std::size_t i = 0; i < n_agents; ++i) {
      auto noise = problem.make_noise(i, CounterRng(derive_key(seed, {m, i})));
      for (std::size_t k = 0; k < r; ++k) noise->advance();
      sum += problem.apply_b(i, noise->current());
    }
    total += norm(problem.norm_kind, sum / static_cast<double>(n_agents));
  }
  return total / static_cast<double>(samples);
}

IidNormalNoise::IidNormalNoise(double sigma, CounterRng rng) : sigma_(sigma), rng_(rng) { advance(); }

void IidNormalNoise::advance() { value_ = sigma_ * standard_normal(rng_); }

}  // namespace fedsam
