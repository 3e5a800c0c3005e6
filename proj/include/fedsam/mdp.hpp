#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fedsam {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Tolerance for row sums of stochastic tables.
inline constexpr double kStochasticTolerance = 1e-12;

/// Finite discounted MDP with rewards in [0, 1].
///
/// The transition kernel is stored densely as [s][a][s'] so that the
/// next-state distribution of any (s, a) is a contiguous span.
class Mdp {
 public:
  /// Throws ValidationError when any invariant fails and ShapeError when the
  /// table sizes do not match the declared counts.
  Mdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
      RowMatrix reward, double gamma);

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double gamma() const { return gamma_; }

  double transition(std::size_t s, std::size_t a, std::size_t next) const {
    return transition_[(s * n_actions_ + a) * n_states_ + next];
  }
  std::span<const double> next_state_distribution(std::size_t s, std::size_t a) const {
    return {transition_.data() + (s * n_actions_ + a) * n_states_, n_states_};
  }
  const std::vector<double>& transition_table() const { return transition_; }

  double reward(std::size_t s, std::size_t a) const { return reward_(s, a); }
  const RowMatrix& rewards() const { return reward_; }

  /// Same dynamics with a different reward table (used for zero-reward checks).
  Mdp with_rewards(RowMatrix reward) const;

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> transition_;
  RowMatrix reward_;
  double gamma_;
};

/// Stochastic action-selection table pi(a|s), one row per state.
class Policy {
 public:
  explicit Policy(RowMatrix probs);

  static Policy uniform(std::size_t n_states, std::size_t n_actions);
  /// Deterministic policy choosing actions[s] in state s.
  static Policy deterministic(std::span<const std::size_t> actions, std::size_t n_actions);

  std::size_t n_states() const { return static_cast<std::size_t>(probs_.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(probs_.cols()); }
  double prob(std::size_t s, std::size_t a) const { return probs_(s, a); }
  std::span<const double> action_distribution(std::size_t s) const {
    return {probs_.data() + s * probs_.cols(), static_cast<std::size_t>(probs_.cols())};
  }
  const RowMatrix& table() const { return probs_; }

 private:
  RowMatrix probs_;
};

/// Full-column-rank |S| x d feature table; row s is phi(s).
class FeatureMatrix {
 public:
  /// Throws ValidationError if d > |S| or the column rank is below d
  /// (rank-revealing QR with threshold 1e-10).
  explicit FeatureMatrix(Matrix phi);

  static FeatureMatrix tabular(std::size_t n_states);

  std::size_t n_states() const { return static_cast<std::size_t>(phi_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(phi_.cols()); }
  auto row(std::size_t s) const { return phi_.row(static_cast<Eigen::Index>(s)); }
  const Matrix& matrix() const { return phi_; }

 private:
  Matrix phi_;
};

void check_compatible(const Mdp& mdp, const Policy& policy);

/// P^pi(s, s') = sum_a P(s'|s,a) pi(a|s).
Matrix policy_transition_matrix(const Mdp& mdp, const Policy& policy);

/// r^pi(s) = sum_a pi(a|s) R(s,a).
Vector policy_reward(const Mdp& mdp, const Policy& policy);

/// Stationary distribution of a row-stochastic matrix.
///
/// The linear solve of mu (P - I) = 0 with sum(mu) = 1 is authoritative. It is
/// cross-checked against the rows of P^(2^k) obtained by repeated squaring;
/// disagreement beyond 1e-8, a singular system, or any mass <= 1e-12 raises
/// ErgodicityError.
Vector stationary_distribution(const Matrix& p_pi);

/// V^pi = (I - gamma P^pi)^{-1} r^pi, checked to a Bellman residual of 1e-10.
Vector value_function_oracle(const Mdp& mdp, const Policy& policy);

/// (T Q)(s,a) = R(s,a) + gamma sum_s' P(s'|s,a) max_a' Q(s',a').
RowMatrix bellman_optimality_operator(const Mdp& mdp, const RowMatrix& q);

/// Q* by value iteration, polished by exact evaluation of the greedy policy.
/// The returned table has a Bellman-optimality residual of at most 1e-10 in
/// sup-norm or NumericError is thrown.
RowMatrix q_star_oracle(const Mdp& mdp);

/// Greedy action with ties broken toward the lowest index.
std::size_t greedy_action(const RowMatrix& q, std::size_t s);

/// (T^pi)^n V = sum_{l<n} gamma^l (P^pi)^l r^pi + gamma^n (P^pi)^n V.
Vector n_step_bellman(const Mdp& mdp, const Policy& policy, const Vector& v, std::size_t n);

/// Pi = Phi (Phi' D Phi)^{-1} Phi' D for the mu-weighted projection.
Matrix weighted_projection(const FeatureMatrix& features, const Vector& mu);

/// Solution v of Phi v = Pi((T^pi)^n Phi v), obtained from the normal
/// equations Phi' D (I - gamma^n P^n) Phi v = Phi' D r^(n).
Vector projected_fixed_point_oracle(const Mdp& mdp, const Policy& policy,
                                    const FeatureMatrix& features, std::size_t n);

/// pi(a|s) / pi_b(a|s). Throws CoverageError when the behavior policy gives
/// zero probability to an action the target uses.
double importance_ratio(const Policy& target, const Policy& behavior, std::size_t s,
                        std::size_t a);

/// Max importance ratio over all states, actions and behavior policies.
double max_importance_ratio(const Policy& target, std::span<const Policy> behaviors);

/// Elementwise sup-norm.
inline double sup_norm(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

/// Flattens a |S| x |A| table to a vector with index s * |A| + a.
Vector flatten(const RowMatrix& q);
RowMatrix unflatten(const Vector& v, std::size_t n_states, std::size_t n_actions);

}  // namespace fedsam
