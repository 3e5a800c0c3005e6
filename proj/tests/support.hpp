#pragma once

#include <cstddef>
#include <vector>

#include "fedsam/generator.hpp"
#include "fedsam/mdp.hpp"

namespace fedsam::testing {

/// Deterministic cycle s -> s + 1 mod |S| under every action.
inline Mdp cyclic_mdp(std::size_t n_states, std::size_t n_actions, double gamma) {
  std::vector<double> p(n_states * n_actions * n_states, 0.0);
  for (std::size_t s = 0; s < n_states; ++s)
    for (std::size_t a = 0; a < n_actions; ++a) p[(s * n_actions + a) * n_states + (s + 1) % n_states] = 1.0;
  return Mdp(n_states, n_actions, std::move(p), RowMatrix::Zero(n_states, n_actions), gamma);
}

inline Mdp uniform_mdp(std::size_t n_states, std::size_t n_actions, double gamma, double reward) {
  std::vector<double> p(n_states * n_actions * n_states, 1.0 / static_cast<double>(n_states));
  return Mdp(n_states, n_actions, std::move(p), RowMatrix::Constant(n_states, n_actions, reward), gamma);
}

inline Environment small_environment(std::size_t n_states, std::uint64_t seed, bool features = true) {
  GeneratorParams params;
  params.n_states = n_states;
  params.d = std::min<std::size_t>(params.d, n_states);
  return generate_environment(params, seed, features);
}

/// Plain successive approximation of V^pi; independent of the linear solve.
inline Vector iterate_policy_evaluation(const Mdp& mdp, const Policy& policy, double tol = 1e-13) {
  const std::size_t ns = mdp.n_states();
  Vector v = Vector::Zero(static_cast<Eigen::Index>(ns));
  for (int iter = 0; iter < 100000; ++iter) {
    Vector next(v.size());
    for (std::size_t s = 0; s < ns; ++s) {
      double acc = 0.0;
      for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
        double future = 0.0;
        for (std::size_t s2 = 0; s2 < ns; ++s2) future += mdp.transition(s, a, s2) * v(static_cast<Eigen::Index>(s2));
        acc += policy.prob(s, a) * (mdp.reward(s, a) + mdp.gamma() * future);
      }
      next(static_cast<Eigen::Index>(s)) = acc;
    }
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (change < tol) break;
  }
  return v;
}

}  // namespace fedsam::testing
