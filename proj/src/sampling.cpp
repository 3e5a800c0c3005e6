#include "fedsam/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Eigenvalues>

#include "fedsam/error.hpp"

namespace fedsam {
namespace {

constexpr std::size_t kCompactSlack = 256;

}  // namespace

void check_distribution(std::span<const double> xi, std::size_t n_states) {
  if (xi.size() != n_states)
    throw DistributionError("initial distribution has " + std::to_string(xi.size()) +
                            " entries, expected " + std::to_string(n_states));
  double sum = 0.0;
  for (double p : xi) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DistributionError("initial distribution has a negative entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kStochasticTolerance) throw DistributionError("initial distribution does not sum to 1");
}

std::vector<double> uniform_distribution(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

AgentChain::AgentChain(const Mdp& mdp, const Policy& behavior, std::span<const double> xi,
                       std::size_t n, std::size_t agent_id, CounterRng rng)
    : mdp_(&mdp), behavior_(&behavior), n_(n), agent_id_(agent_id), rng_(rng) {
  check_compatible(mdp, behavior);
  check_distribution(xi, mdp.n_states());
  if (n_ == 0) throw ParameterError("window length n must be >= 1");
  states_.reserve(n_ + 1 + kCompactSlack);
  actions_.reserve(n_ + kCompactSlack);
  states_.push_back(static_cast<int>(sample_categorical(xi, rng_)));
  for (std::size_t k = 0; k < n_; ++k) push_action_and_state();
}

void AgentChain::push_action_and_state() {
  const auto s = static_cast<std::size_t>(states_.back());
  const auto a = sample_categorical(behavior_->action_distribution(s), rng_);
  const auto next = sample_categorical(mdp_->next_state_distribution(s, a), rng_);
  actions_.push_back(static_cast<int>(a));
  states_.push_back(static_cast<int>(next));
}

Transition AgentChain::advance() {
  if (states_.size() == states_.capacity()) {
    std::memmove(states_.data(), states_.data() + head_, (n_ + 1) * sizeof(int));
    std::memmove(actions_.data(), actions_.data() + head_, n_ * sizeof(int));
    states_.resize(n_ + 1);
    actions_.resize(n_);
    head_ = 0;
  }
  push_action_and_state();
  ++head_;
  const std::size_t last = states_.size() - 1;
  return {states_[last - 1], actions_[last - 1], states_[last]};
}

std::size_t MixingEstimate::tau_alpha(double alpha) const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("tau_alpha needs alpha in (0, 1)");
  if (rho <= 0.0) return 1;
  const double tau = std::ceil(2.0 * std::log(alpha) / std::log(rho));
  return std::max<std::size_t>(1, static_cast<std::size_t>(tau));
}

double max_tv_distance(const Matrix& p_t, const Vector& mu) {
  return 0.5 * (p_t.rowwise() - mu.transpose()).cwiseAbs().rowwise().sum().maxCoeff();
}

MixingEstimate mixing_diagnostics(const Matrix& p_pi, std::size_t horizon) {
  const Eigen::Index n = p_pi.rows();
  if (n == 0 || p_pi.cols() != n) throw ShapeError("transition matrix must be square and non-empty");
  MixingEstimate est;
  est.horizon = horizon;
  if (n > 1) {
    Eigen::EigenSolver<Matrix> solver(p_pi, false);
    if (solver.info() != Eigen::Success) throw NumericError("eigenvalue computation failed");
    const Eigen::VectorXcd eig = solver.eigenvalues();
    // Drop the Perron eigenvalue (closest to 1); the largest remaining modulus is rho.
    Eigen::Index perron = 0;
    (eig.array() - 1.0).abs().minCoeff(&perron);
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != perron) est.rho = std::max(est.rho, std::abs(eig(k)));
  }
  if (est.rho >= 1.0 - 1e-12)
    throw NearPeriodicError("second eigenvalue modulus " + std::to_string(est.rho) + " is within 1e-12 of 1");

  const Vector mu = stationary_distribution(p_pi);
  Matrix p_t = p_pi;
  for (std::size_t t = 1; t <= horizon; ++t) {
    const double tv = max_tv_distance(p_t, mu);
    if (tv < 1e-13) break;
    const double scale = std::pow(est.rho, static_cast<double>(t));
    if (scale <= 0.0) break;
    est.m_bar = std::max(est.m_bar, tv / scale);
    p_t = p_t * p_pi;
  }
  return est;
}

}  // namespace fedsam
