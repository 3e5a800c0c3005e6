#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedsam/mdp.hpp"
#include "fedsam/rng.hpp"

namespace fedsam {

struct Transition {
  int state;
  int action;
  int next_state;
};

/// One agent's Markovian trajectory seen through a sliding window
/// y_t = (S_t, A_t, ..., A_{t+n-1}, S_{t+n}).
///
/// The chain keeps pointers to the MDP and behavior policy; both must outlive
/// it. Copies are independent and continue the same stream.
class AgentChain {
 public:
  /// Draws S_0 ~ xi and n transitions. Throws DistributionError for an invalid xi.
  AgentChain(const Mdp& mdp, const Policy& behavior, std::span<const double> xi, std::size_t n,
             std::size_t agent_id, CounterRng rng);

  /// Shifts the window by one step and returns the newly sampled transition
  /// (S_{t+n}, A_{t+n}, S_{t+n+1}).
  Transition advance();

  /// S_t .. S_{t+n}; n + 1 entries.
  std::span<const int> states() const { return {states_.data() + head_, n_ + 1}; }
  /// A_t .. A_{t+n-1}; n entries.
  std::span<const int> actions() const { return {actions_.data() + head_, n_}; }

  std::size_t n() const { return n_; }
  std::size_t agent_id() const { return agent_id_; }
  const CounterRng& rng() const { return rng_; }
  const Policy& behavior() const { return *behavior_; }

 private:
  void push_action_and_state();

  const Mdp* mdp_;
  const Policy* behavior_;
  std::size_t n_;
  std::size_t agent_id_;
  CounterRng rng_;
  // Contiguous storage; the window starts at head_ and is compacted when the
  // buffer fills, so the spans above are always contiguous.
  std::vector<int> states_;
  std::vector<int> actions_;
  std::size_t head_ = 0;
};

/// Validates a distribution over |S| states (non-negative, sums to 1 within 1e-12).
void check_distribution(std::span<const double> xi, std::size_t n_states);

/// Uniform distribution over n states.
std::vector<double> uniform_distribution(std::size_t n);

struct MixingEstimate {
  double rho = 0.0;
  double m_bar = 0.0;
  std::size_t horizon = 0;

  /// max(1, ceil(2 ln(alpha) / ln(rho))); 1 when rho == 0.
  std::size_t tau_alpha(double alpha) const;
};

/// rho is the second-largest eigenvalue modulus of p_pi. m_bar is the
/// smallest constant with max_s TV(P^t(s, .), mu) <= m_bar rho^t for every
/// t = 1..horizon. Throws NearPeriodicError when rho >= 1 - 1e-12.
MixingEstimate mixing_diagnostics(const Matrix& p_pi, std::size_t horizon = 200);

/// max over start states of the total-variation distance between P^t(s, .) and mu.
double max_tv_distance(const Matrix& p_t, const Vector& mu);

}  // namespace fedsam
