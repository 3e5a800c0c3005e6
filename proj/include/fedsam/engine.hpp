#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fedsam/mdp.hpp"
#include "fedsam/rng.hpp"

namespace fedsam {

/// One realization of an agent's noise y^i_t. Tabular and LFA problems fill
/// the state/action window; scalar problems use value.
struct NoiseView {
  std::span<const int> states;
  std::span<const int> actions;
  double value = 0.0;
};

/// Per-agent noise process. current() is y_t; advance() moves to y_{t+1}.
class NoiseProcess {
 public:
  virtual ~NoiseProcess() = default;
  virtual NoiseView current() const = 0;
  virtual void advance() = 0;
};

enum class NormKind { sup, euclidean };

double norm(NormKind kind, const Eigen::Ref<const Vector>& v);
const char* to_string(NormKind kind);

using AgentVectorMap = std::function<Vector(std::size_t agent, const Vector& theta, const NoiseView& y)>;
using AgentNoiseMap = std::function<Vector(std::size_t agent, const NoiseView& y)>;
using NoiseFactory = std::function<std::unique_ptr<NoiseProcess>(std::size_t agent, CounterRng rng)>;
/// In-place local rule: x <- x + step * direction(x, y).
using LocalRule =
    std::function<void(std::size_t agent, Eigen::Ref<Vector> x, const NoiseView& y, double step)>;

/// Generic stochastic-approximation problem driven by the federated loop.
/// G(theta, y) must vanish at theta = 0 for every agent and noise value.
struct FedSamProblem {
  std::size_t dim = 0;
  NormKind norm_kind = NormKind::sup;
  Vector theta0;
  AgentVectorMap apply_G;
  AgentNoiseMap apply_b;
  NoiseFactory make_noise;
  /// Optional expected operator Gbar(theta).
  std::function<Vector(std::size_t agent, const Vector& theta)> expected_G;
  /// Optional in-place form of theta + step (G - theta + b); checked against
  /// the generic formula at registration.
  LocalRule fast_step;
  /// Multiplier applied to the configured step size (beta for the LFA reduction).
  double step_scale = 1.0;
  bool registered = false;
};

/// Validates the problem, checks G(0, y) = 0 on sampled noise for the first
/// `agents` agents, checks fast_step against the generic step, and marks the
/// problem as registered. Throws ValidationError on any failure.
void register_problem(FedSamProblem& problem, std::uint64_t seed = 0, std::size_t agents = 4,
                      std::size_t samples = 64);

struct FedRunConfig {
  std::size_t n_agents = 1;
  std::size_t sync_period = 1;
  double step_size = 0.01;
  std::size_t horizon = 1000;
  double output_c = 1.0;
  std::uint64_t master_seed = 0;
  std::uint64_t trial = 0;
  bool parallel = false;
  /// Record theta-bar and Omega at checkpoints; when false and stop_at_output
  /// is set, the run ends at the sampled output index.
  bool record_series = true;
  bool stop_at_output = false;
  /// Checkpoint spacing; 0 selects max(1, T / 500).
  std::size_t checkpoint_every = 0;

  void validate() const;
  std::size_t effective_checkpoint_every() const;
};

struct RunTrace {
  std::vector<std::size_t> checkpoint_t;
  std::vector<Vector> theta_bar_series;
  std::vector<double> omega_series;
  std::vector<double> delta_series;
  std::size_t output_index = 0;
  Vector output_theta;
  /// Averaged parameter at the last executed step.
  Vector final_theta;
  std::size_t steps_run = 0;
  /// Largest Omega observed right after any synchronization.
  double max_sync_omega = 0.0;
  std::size_t sync_count = 0;
};

/// q(t) = c^{-t} / sum_{t' < T} c^{-t'} for t = 0..T-1, evaluated in log space.
std::vector<double> q_distribution(double c, std::size_t horizon);

/// Draws the output index from q^c_T.
std::size_t sample_output_index(double c, std::size_t horizon, CounterRng& rng);
/// Inverse-CDF sampler over a precomputed q_distribution. One uniform per draw;
/// the result equals sample_categorical on the same table.
class OutputSampler {
 public:
  explicit OutputSampler(const std::vector<double>& q);
  std::size_t operator()(CounterRng& rng) const;

 private:
  std::vector<double> cumulative_;
  std::size_t last_positive_ = 0;
};

/// Stream keys used by every run; exposed so tests can rebuild any stream.
std::uint64_t agent_stream_key(std::uint64_t master_seed, std::uint64_t trial, std::size_t agent);
std::uint64_t output_stream_key(std::uint64_t master_seed, std::uint64_t trial);

/// theta + alpha (G(theta, y) - theta + b(y)). Throws DivergenceError(t, agent)
/// if the result is not finite.
Vector fedsam_local_step(const FedSamProblem& problem, std::size_t agent, const Vector& theta,
                         const NoiseView& y, double alpha, std::size_t t = 0);

/// Replaces every parameter by the arithmetic mean.
void sync_average(std::vector<Vector>& thetas);

struct SyncError {
  double delta = 0.0;
  double omega = 0.0;
};

/// Delta = mean_i ||mean - theta^i||, Omega = mean_i ||mean - theta^i||^2.
SyncError sync_error(const std::vector<Vector>& thetas, NormKind kind);

/// Runs the federated loop on a registered problem.
RunTrace run_fedsam(const FedSamProblem& problem, const FedRunConfig& config);

/// The same loop for an arbitrary local rule; used for raw (unshifted) updates.
RunTrace run_local_rule(const LocalRule& rule, const NoiseFactory& make_noise, const Vector& x0,
                        NormKind kind, const FedRunConfig& config);

/// Monte-Carlo estimate of E ||(1/N) sum_i b^i(y^i_r)|| with fresh chains
/// advanced r steps, averaged over `samples` independent draws.
double noise_average_diagnostic(const FedSamProblem& problem, std::size_t n_agents, std::size_t r,
                                std::size_t samples, std::uint64_t seed);

/// Noise process returning i.i.d. Normal(0, sigma^2) scalars.
class IidNormalNoise final : public NoiseProcess {
 public:
  IidNormalNoise(double sigma, CounterRng rng);
  NoiseView current() const override { return {{}, {}, value_}; }
  void advance() override;

 private:
  double sigma_;
  CounterRng rng_;
  double value_ = 0.0;
};

}  // namespace fedsam
