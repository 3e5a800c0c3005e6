#include "fedsam/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "fedsam/error.hpp"

namespace fedsam {
namespace {

void check_stochastic_row(std::span<const double> row, const std::string& what) {
  double sum = 0.0;
  for (double p : row) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError(what + " has a negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kStochasticTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << what << " sums to " << sum;
    throw ValidationError(msg.str());
  }
}

std::string state_action(std::size_t s, std::size_t a) {
  return "(" + std::to_string(s) + ", " + std::to_string(a) + ")";
}

}  // namespace

Mdp::Mdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
         RowMatrix reward, double gamma)
    : n_states_(n_states),
      n_actions_(n_actions),
      transition_(std::move(transition)),
      reward_(std::move(reward)),
      gamma_(gamma) {
  if (n_states_ == 0 || n_actions_ == 0) throw ValidationError("MDP needs at least one state and one action");
  if (transition_.size() != n_states_ * n_actions_ * n_states_)
    throw ShapeError("transition table has " + std::to_string(transition_.size()) +
                     " entries, expected " + std::to_string(n_states_ * n_actions_ * n_states_));
  if (static_cast<std::size_t>(reward_.rows()) != n_states_ ||
      static_cast<std::size_t>(reward_.cols()) != n_actions_)
    throw ShapeError("reward table must be |S| x |A|");
  if (!(gamma_ > 0.0 && gamma_ < 1.0)) throw ValidationError("gamma must lie in (0, 1)");
  for (std::size_t s = 0; s < n_states_; ++s)
    for (std::size_t a = 0; a < n_actions_; ++a) {
      check_stochastic_row(next_state_distribution(s, a), "transition row " + state_action(s, a));
      const double r = reward_(s, a);
      if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("reward at " + state_action(s, a) + " outside [0, 1]");
    }
}

Mdp Mdp::with_rewards(RowMatrix reward) const {
  return Mdp(n_states_, n_actions_, transition_, std::move(reward), gamma_);
}

Policy::Policy(RowMatrix probs) : probs_(std::move(probs)) {
  if (probs_.rows() == 0 || probs_.cols() == 0) throw ValidationError("policy table is empty");
  for (std::size_t s = 0; s < n_states(); ++s)
    check_stochastic_row(action_distribution(s), "policy row " + std::to_string(s));
}

Policy Policy::uniform(std::size_t n_states, std::size_t n_actions) {
  return Policy(RowMatrix::Constant(n_states, n_actions, 1.0 / static_cast<double>(n_actions)));
}

Policy Policy::deterministic(std::span<const std::size_t> actions, std::size_t n_actions) {
  RowMatrix probs = RowMatrix::Zero(actions.size(), n_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] >= n_actions) throw ShapeError("action index out of range");
    probs(s, actions[s]) = 1.0;
  }
  return Policy(std::move(probs));
}

FeatureMatrix::FeatureMatrix(Matrix phi) : phi_(std::move(phi)) {
  if (phi_.cols() == 0 || phi_.rows() == 0) throw ValidationError("feature matrix is empty");
  if (phi_.cols() > phi_.rows()) throw ValidationError("feature dimension d exceeds |S|");
  if (!phi_.allFinite()) throw ValidationError("feature matrix has non-finite entries");
  Eigen::ColPivHouseholderQR<Matrix> qr(phi_);
  qr.setThreshold(1e-10);
  if (qr.rank() != phi_.cols())
    throw ValidationError("feature matrix has column rank " + std::to_string(qr.rank()) +
                          " < d = " + std::to_string(phi_.cols()));
}

FeatureMatrix FeatureMatrix::tabular(std::size_t n_states) {
  return FeatureMatrix(Matrix::Identity(n_states, n_states));
}

void check_compatible(const Mdp& mdp, const Policy& policy) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
    throw ShapeError("policy shape " + std::to_string(policy.n_states()) + "x" +
                     std::to_string(policy.n_actions()) + " does not match MDP " +
                     std::to_string(mdp.n_states()) + "x" + std::to_string(mdp.n_actions()));
}

Matrix policy_transition_matrix(const Mdp& mdp, const Policy& policy) {
  check_compatible(mdp, policy);
  const std::size_t ns = mdp.n_states();
  Matrix p = Matrix::Zero(ns, ns);
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const double w = policy.prob(s, a);
      if (w == 0.0) continue;
      const auto row = mdp.next_state_distribution(s, a);
      for (std::size_t next = 0; next < ns; ++next) p(s, next) += w * row[next];
    }
  return p;
}

Vector policy_reward(const Mdp& mdp, const Policy& policy) {
  check_compatible(mdp, policy);
  return (mdp.rewards().cwiseProduct(policy.table())).rowwise().sum();
}

Vector stationary_distribution(const Matrix& p_pi) {
  const Eigen::Index n = p_pi.rows();
  if (n == 0 || p_pi.cols() != n) throw ShapeError("transition matrix must be square and non-empty");
  for (Eigen::Index s = 0; s < n; ++s) {
    const double sum = p_pi.row(s).sum();
    if ((p_pi.row(s).array() < 0.0).any() || std::abs(sum - 1.0) > 1e-10)
      throw ValidationError("matrix is not row-stochastic at row " + std::to_string(s));
  }

  Matrix a = p_pi.transpose() - Matrix::Identity(n, n);
  a.row(n - 1).setOnes();
  Vector rhs = Vector::Zero(n);
  rhs(n - 1) = 1.0;
  Eigen::FullPivLU<Matrix> lu(a);
  if (lu.rank() < n) throw ErgodicityError("stationary system is singular (chain is reducible)");
  Vector mu = lu.solve(rhs);

  if ((mu.array() <= 1e-12).any())
    throw ErgodicityError("stationary mass <= 1e-12 on some state (chain is not irreducible)");

  // Rows of P^(2^k) converge to mu only for aperiodic irreducible chains.
  Matrix power = p_pi;
  bool agreed = false;
  for (int k = 0; k < 64 && !agreed; ++k) {
    const double gap = (power.rowwise() - mu.transpose()).cwiseAbs().maxCoeff();
    agreed = gap <= 1e-8;
    if (!agreed) power = power * power;
  }
  if (!agreed)
    throw ErgodicityError("power iteration and linear solve disagree beyond 1e-8 (periodic chain)");
  return mu;
}

Vector value_function_oracle(const Mdp& mdp, const Policy& policy) {
  const Matrix p = policy_transition_matrix(mdp, policy);
  const Vector r = policy_reward(mdp, policy);
  const Eigen::Index n = p.rows();
  const Matrix a = Matrix::Identity(n, n) - mdp.gamma() * p;
  Eigen::PartialPivLU<Matrix> lu(a);
  Vector v = lu.solve(r);
  // One refinement step keeps the residual at the rounding floor.
  v += lu.solve(r - a * v);
  if (!v.allFinite()) throw NumericError("value system I - gamma P is singular");
  const double residual = sup_norm(r + mdp.gamma() * p * v - v);
  if (residual > 1e-10)
    throw NumericError("Bellman residual " + std::to_string(residual) + " exceeds 1e-10");
  return v;
}

RowMatrix bellman_optimality_operator(const Mdp& mdp, const RowMatrix& q) {
  const std::size_t ns = mdp.n_states();
  const std::size_t na = mdp.n_actions();
  if (static_cast<std::size_t>(q.rows()) != ns || static_cast<std::size_t>(q.cols()) != na)
    throw ShapeError("Q table must be |S| x |A|");
  const Vector vmax = q.rowwise().maxCoeff();
  RowMatrix out(ns, na);
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t a = 0; a < na; ++a) {
      const auto row = mdp.next_state_distribution(s, a);
      double expected = 0.0;
      for (std::size_t next = 0; next < ns; ++next) expected += row[next] * vmax(next);
      out(s, a) = mdp.reward(s, a) + mdp.gamma() * expected;
    }
  return out;
}

RowMatrix q_star_oracle(const Mdp& mdp) {
  const double gamma = mdp.gamma();
  const double threshold = (1.0 - gamma) * 1e-10 / (2.0 * gamma);
  RowMatrix q = RowMatrix::Zero(mdp.n_states(), mdp.n_actions());
  double previous = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (long iter = 0; iter < 10'000'000; ++iter) {
    RowMatrix next = bellman_optimality_operator(mdp, q);
    const double change = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
    if (change <= threshold) break;
    // Below the threshold's reach the change stops shrinking at the rounding floor.
    stalled = change >= previous ? stalled + 1 : 0;
    if (stalled >= 50) break;
    previous = change;
  }
  double residual = (bellman_optimality_operator(mdp, q) - q).cwiseAbs().maxCoeff();
  // Exact evaluation of the greedy policy removes the value-iteration tail.
  const std::size_t ns = mdp.n_states();
  std::vector<std::size_t> greedy(ns, 0);
  for (int round = 0; round < 20; ++round) {
    bool changed = round == 0;
    for (std::size_t s = 0; s < ns; ++s) {
      const std::size_t a = greedy_action(q, s);
      changed = changed || a != greedy[s];
      greedy[s] = a;
    }
    if (!changed) break;
    Matrix system = Matrix::Identity(ns, ns);
    Vector rhs(ns);
    for (std::size_t s = 0; s < ns; ++s) {
      rhs(s) = mdp.reward(s, greedy[s]);
      for (std::size_t s2 = 0; s2 < ns; ++s2) system(s, s2) -= gamma * mdp.transition(s, greedy[s], s2);
    }
    const Vector v = system.partialPivLu().solve(rhs);
    RowMatrix candidate(ns, mdp.n_actions());
    for (std::size_t s = 0; s < ns; ++s)
      for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
        double value = mdp.reward(s, a);
        for (std::size_t s2 = 0; s2 < ns; ++s2) value += gamma * mdp.transition(s, a, s2) * v(s2);
        candidate(s, a) = value;
      }
    const double candidate_residual = (bellman_optimality_operator(mdp, candidate) - candidate).cwiseAbs().maxCoeff();
    if (!(candidate_residual < residual)) break;
    q = std::move(candidate);
    residual = candidate_residual;
  }
  if (residual > 1e-10)
    throw NumericError("optimality residual " + std::to_string(residual) + " exceeds 1e-10");
  return q;
}

std::size_t greedy_action(const RowMatrix& q, std::size_t s) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < static_cast<std::size_t>(q.cols()); ++a)
    if (q(s, a) > q(s, best)) best = a;
  return best;
}

Vector n_step_bellman(const Mdp& mdp, const Policy& policy, const Vector& v, std::size_t n) {
  const Matrix p = policy_transition_matrix(mdp, policy);
  const Vector r = policy_reward(mdp, policy);
  if (static_cast<std::size_t>(v.size()) != mdp.n_states()) throw ShapeError("value vector must have |S| entries");
  Vector out = v;
  for (std::size_t l = 0; l < n; ++l) out = r + mdp.gamma() * p * out;
  return out;
}

Matrix weighted_projection(const FeatureMatrix& features, const Vector& mu) {
  const Matrix& phi = features.matrix();
  if (mu.size() != phi.rows()) throw ShapeError("distribution length must equal |S|");
  const Matrix gram = phi.transpose() * mu.asDiagonal() * phi;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericError("weighted Gram matrix Phi' D Phi is singular");
  return phi * ldlt.solve(phi.transpose() * mu.asDiagonal());
}

Vector projected_fixed_point_oracle(const Mdp& mdp, const Policy& policy,
                                    const FeatureMatrix& features, std::size_t n) {
  if (n == 0) throw ParameterError("step count n must be >= 1");
  if (features.n_states() != mdp.n_states()) throw ShapeError("feature rows must equal |S|");
  const Matrix p = policy_transition_matrix(mdp, policy);
  const Vector r = policy_reward(mdp, policy);
  const Vector mu = stationary_distribution(p);
  const Eigen::Index ns = p.rows();

  Matrix pn = Matrix::Identity(ns, ns);
  Vector rn = Vector::Zero(ns);
  double gn = 1.0;
  for (std::size_t l = 0; l < n; ++l) {
    rn += gn * pn * r;
    pn = pn * p;
    gn *= mdp.gamma();
  }
  const Matrix& phi = features.matrix();
  const Matrix lhs = phi.transpose() * mu.asDiagonal() * (Matrix::Identity(ns, ns) - gn * pn) * phi;
  const Vector rhs = phi.transpose() * mu.asDiagonal() * rn;
  Eigen::FullPivLU<Matrix> lu(lhs);
  if (lu.rank() < lhs.rows())
    throw NumericError("projected system matrix Phi' D (I - gamma^n P^n) Phi is singular");
  Vector v = lu.solve(rhs);
  v += lu.solve(rhs - lhs * v);

  const Vector fv = phi * v;
  const Vector target = weighted_projection(features, mu) * n_step_bellman(mdp, policy, fv, n);
  const double residual = sup_norm(fv - target);
  if (residual > 1e-8)
    throw NumericError("projected fixed-point residual " + std::to_string(residual) + " exceeds 1e-8");
  return v;
}

double importance_ratio(const Policy& target, const Policy& behavior, std::size_t s, std::size_t a) {
  if (target.n_states() != behavior.n_states() || target.n_actions() != behavior.n_actions())
    throw ShapeError("target and behavior policies differ in shape");
  const double pt = target.prob(s, a);
  const double pb = behavior.prob(s, a);
  if (pb == 0.0) {
    if (pt > 0.0) throw CoverageError("behavior policy does not cover " + state_action(s, a));
    return 0.0;
  }
  return pt / pb;
}

double max_importance_ratio(const Policy& target, std::span<const Policy> behaviors) {
  double out = 0.0;
  for (const Policy& b : behaviors)
    for (std::size_t s = 0; s < target.n_states(); ++s)
      for (std::size_t a = 0; a < target.n_actions(); ++a)
        out = std::max(out, importance_ratio(target, b, s, a));
  return out;
}

Vector flatten(const RowMatrix& q) {
  return Eigen::Map<const Vector>(q.data(), q.size());
}

RowMatrix unflatten(const Vector& v, std::size_t n_states, std::size_t n_actions) {
  if (static_cast<std::size_t>(v.size()) != n_states * n_actions) throw ShapeError("flat table has wrong length");
  return Eigen::Map<const RowMatrix>(v.data(), n_states, n_actions);
}

}  // namespace fedsam
