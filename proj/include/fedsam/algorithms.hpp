#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedsam/engine.hpp"
#include "fedsam/mdp.hpp"
#include "fedsam/sampling.hpp"

namespace fedsam {

enum class AlgorithmKind { on_policy_td_lfa, off_policy_td_tabular, q_learning };

const char* to_string(AlgorithmKind kind);
AlgorithmKind algorithm_kind_from_string(const std::string& name);

/// Immutable problem description plus cached oracle quantities.
///
/// Agent i samples with behaviors[i % behaviors.size()]. For on-policy LFA
/// the behavior list is {target}. Q-learning uses n = 1 and ignores target.
struct AlgorithmInstance {
  AlgorithmInstance(AlgorithmKind kind_, Mdp mdp_, Policy target_)
      : kind(kind_), mdp(std::move(mdp_)), target(std::move(target_)) {}

  AlgorithmKind kind;
  Mdp mdp;
  Policy target;
  std::vector<Policy> behaviors;
  std::optional<FeatureMatrix> features;
  std::size_t n = 1;
  double beta = 1.0;
  std::vector<double> xi;

  /// Fixed point in parameter coordinates: v^pi (d), V^pi (|S|) or flattened Q*.
  Vector fixed_point;
  Vector v_pi;
  RowMatrix q_star;
  Matrix p_target;
  Vector mu_target;
  std::vector<Matrix> p_behavior;
  std::vector<Vector> mu_behavior;
  /// ratio[b](s, a) = target(a|s) / behaviors[b](a|s).
  std::vector<RowMatrix> ratio;
  /// Linear part of Gbar per behavior index (TD kinds only).
  std::vector<Matrix> gbar;

  std::size_t dim() const;
  std::size_t behavior_index(std::size_t agent) const { return agent % behaviors.size(); }
  const Policy& behavior_for(std::size_t agent) const { return behaviors[behavior_index(agent)]; }
  NormKind norm_kind() const {
    return kind == AlgorithmKind::on_policy_td_lfa ? NormKind::euclidean : NormKind::sup;
  }
};

using InstancePtr = std::shared_ptr<const AlgorithmInstance>;

/// Computes stationary distributions, importance ratios, the oracle fixed
/// point and (LFA) the scaling beta. Throws CoverageError, ErgodicityError,
/// ValidationError as appropriate.
InstancePtr make_instance(AlgorithmKind kind, Mdp mdp, Policy target, std::vector<Policy> behaviors,
                          std::optional<FeatureMatrix> features, std::size_t n,
                          std::vector<double> xi = {});

// Raw (production) updates.

/// v + alpha phi(S_t) sum_l gamma^l (R(S_l, A_l) + gamma phi(S_{l+1})'v - phi(S_l)'v).
Vector onpolicy_td_update(const Vector& v, std::span<const int> states, std::span<const int> actions,
                          const FeatureMatrix& features, const Mdp& mdp, std::size_t n, double alpha);

/// Changes only entry S_t, weighting each TD error by the running product of
/// importance ratios. Throws CoverageError when the behavior misses a target action.
Vector offpolicy_td_update(const Vector& v, std::span<const int> states, std::span<const int> actions,
                           const Policy& target, const Policy& behavior, const Mdp& mdp, std::size_t n,
                           double alpha);

/// Changes only (S_t, A_t): Q += alpha (R + gamma max_a Q(S_{t+1}, a) - Q(S_t, A_t)).
RowMatrix q_learning_update(const RowMatrix& q, const Transition& tr, const Mdp& mdp, double alpha);

/// Raw-coordinate local rule for the federated loop.
LocalRule raw_rule(const InstancePtr& instance);

/// Noise factory producing each agent's Markov window.
NoiseFactory chain_noise_factory(const InstancePtr& instance);

/// Shifted-coordinate problem (theta = estimate - fixed point), registered.
/// Engine step is alpha * beta for LFA. Throws PreconditionError without an oracle.
FedSamProblem build_problem(const InstancePtr& instance);

/// Exact expected operator Gbar^i(theta) for agent i.
Vector expected_operator(const AlgorithmInstance& instance, std::size_t agent, const Vector& theta);

/// Linear part of Gbar^i for the two TD kinds (identity plus drift).
Matrix expected_operator_matrix(const AlgorithmInstance& instance, std::size_t agent);

struct TheoryConstants {
  double gamma_c = 0.0;
  double A1 = 0.0;
  double A2 = 0.0;
  double B = 0.0;
  double mu_min = 0.0;
  double phi = 0.0;
  double imax = 0.0;
  double beta = 1.0;
  /// Exact sup-norm Lipschitz modulus of Gbar (tabular kinds); spectral radius for LFA.
  double gamma_c_operator = 0.0;

  /// 1 - alpha phi / 2.
  double c_out(double alpha) const { return 1.0 - alpha * phi / 2.0; }
};

/// phi(gamma_c) = 1 - 0.5 (1 + gamma_c) e^{1/4} / sqrt(sqrt(e) - 1 + ((1 + gamma_c) / (2 gamma_c))^2).
double rate_constant_from_contraction(double gamma_c);

/// 1 - mu_min (1 - gamma^{n+1}).
double off_policy_td_gamma_c(double mu_min, double gamma, std::size_t n);
/// 1 - (1 - gamma) mu_min.
double q_learning_gamma_c(double mu_min, double gamma);
/// sum_{l<n} (gamma imax)^l, equal to n when gamma imax = 1.
double ratio_geometric_sum(double gamma, double imax, std::size_t n);

TheoryConstants theory_constants(const AlgorithmInstance& instance);

/// Spectral radius of I + (1/beta) Phi' D (gamma^n P^n - I) Phi.
double lfa_spectral_radius(const AlgorithmInstance& instance, double beta);

/// Smallest beta = 2^k (k in [-30, 30]) whose spectral radius is <= 1 - margin.
double select_beta(const AlgorithmInstance& instance, double margin = 0.01);

/// Calls fn(states, actions, prob) for every window with positive probability
/// when S_t is drawn from `start` and the chain follows `behavior`. Returns
/// false without calling fn when there are more than max_windows windows.
bool for_each_window(const Mdp& mdp, const Policy& behavior, const Vector& start, std::size_t n,
                     const std::function<void(std::span<const int>, std::span<const int>, double)>& fn,
                     std::size_t max_windows = 2'000'000);

}  // namespace fedsam
