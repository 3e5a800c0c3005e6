#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "fedsam/error.hpp"
#include "fedsam/sampling.hpp"
#include "support.hpp"

using namespace fedsam;

TEST_SUITE("sampling") {
  TEST_CASE("single-state chain repeats that state") {
    const Mdp mdp = testing::uniform_mdp(1, 2, 0.9, 0.0);
    const Policy pi = Policy::uniform(1, 2);
    AgentChain chain(mdp, pi, uniform_distribution(1), 3, 0, CounterRng(1));
    for (int t = 0; t < 20; ++t) {
      for (int s : chain.states()) CHECK(s == 0);
      CHECK(chain.states().size() == 4);
      CHECK(chain.actions().size() == 3);
      chain.advance();
    }
  }

  TEST_CASE("deterministic dynamics are followed exactly") {
    const Mdp mdp = testing::cyclic_mdp(5, 1, 0.9);
    const Policy pi = Policy::uniform(5, 1);
    const std::vector<double> xi{0, 0, 1, 0, 0};
    AgentChain chain(mdp, pi, xi, 2, 0, CounterRng(4));
    CHECK(chain.states()[0] == 2);
    for (int t = 0; t < 12; ++t) {
      const auto st = chain.states();
      for (std::size_t l = 0; l < st.size(); ++l) CHECK(st[l] == static_cast<int>((2 + t + l) % 5));
      const Transition tr = chain.advance();
      CHECK(tr.next_state == (tr.state + 1) % 5);
    }
  }

  TEST_CASE("same seed gives identical windows, distinct streams differ") {
    const Environment env = testing::small_environment(6, 3, false);
    const auto xi = uniform_distribution(6);
    AgentChain a(env.mdp, env.target, xi, 2, 0, CounterRng(10));
    AgentChain b(env.mdp, env.target, xi, 2, 0, CounterRng(10));
    AgentChain c(env.mdp, env.target, xi, 2, 1, CounterRng(11));
    bool differs = false;
    for (int t = 0; t < 1000; ++t) {
      const Transition ta = a.advance(), tb = b.advance(), tc = c.advance();
      CHECK(ta.state == tb.state);
      CHECK(ta.action == tb.action);
      CHECK(ta.next_state == tb.next_state);
      differs |= ta.state != tc.state || ta.action != tc.action;
    }
    CHECK(differs);
  }

  TEST_CASE("initial state frequencies under uniform xi") {
    const Mdp mdp = testing::uniform_mdp(4, 1, 0.9, 0.0);
    const Policy pi = Policy::uniform(4, 1);
    const auto xi = uniform_distribution(4);
    std::array<int, 4> counts{};
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
      AgentChain chain(mdp, pi, xi, 1, 0, CounterRng(derive_key(5, {static_cast<std::uint64_t>(k)})));
      ++counts[static_cast<std::size_t>(chain.states()[0])];
    }
    const double se = std::sqrt(0.25 * 0.75 / n);
    for (int c : counts) CHECK(std::abs(c / double(n) - 0.25) <= 3.0 * se);
  }

  TEST_CASE("transition frequencies match the kernel") {
    const Environment env = testing::small_environment(4, 6, false);
    AgentChain chain(env.mdp, env.target, uniform_distribution(4), 1, 0, CounterRng(8));
    const std::size_t ns = 4, na = env.mdp.n_actions();
    std::vector<double> visits(ns * na, 0.0), moves(ns * na * ns, 0.0);
    for (int t = 0; t < 100000; ++t) {
      const Transition tr = chain.advance();
      visits[tr.state * na + tr.action] += 1.0;
      moves[(tr.state * na + tr.action) * ns + tr.next_state] += 1.0;
    }
    for (std::size_t sa = 0; sa < ns * na; ++sa) {
      if (visits[sa] < 100.0) continue;
      for (std::size_t s2 = 0; s2 < ns; ++s2) {
        const double p = env.mdp.transition(sa / na, sa % na, s2);
        const double se = std::sqrt(p * (1.0 - p) / visits[sa]);
        CHECK(std::abs(moves[sa * ns + s2] / visits[sa] - p) <= 3.0 * se + 1e-12);
      }
    }
  }

  TEST_CASE("invalid initial distributions are rejected") {
    const Mdp mdp = testing::uniform_mdp(3, 1, 0.9, 0.0);
    const Policy pi = Policy::uniform(3, 1);
    const std::vector<double> short_xi{0.5, 0.5};
    const std::vector<double> negative{1.5, -0.5, 0.0};
    const std::vector<double> unnormalized{0.5, 0.4, 0.0};
    CHECK_THROWS_AS(AgentChain(mdp, pi, short_xi, 1, 0, CounterRng(1)), DistributionError);
    CHECK_THROWS_AS(AgentChain(mdp, pi, negative, 1, 0, CounterRng(1)), DistributionError);
    CHECK_THROWS_AS(AgentChain(mdp, pi, unnormalized, 1, 0, CounterRng(1)), DistributionError);
  }

  TEST_CASE("mixing diagnostics examples") {
    Matrix equal_rows(3, 3);
    equal_rows << 0.2, 0.3, 0.5, 0.2, 0.3, 0.5, 0.2, 0.3, 0.5;
    CHECK(mixing_diagnostics(equal_rows).rho <= 1e-12);

    Matrix two(2, 2);
    two << 0.7, 0.3, 0.3, 0.7;
    const MixingEstimate est = mixing_diagnostics(two);
    CHECK(std::abs(est.rho - 0.4) < 1e-12);

    MixingEstimate half;
    half.rho = 0.5;
    CHECK(half.tau_alpha(0.01) == 14);
    MixingEstimate zero;
    CHECK(zero.tau_alpha(0.01) == 1);

    Matrix perm(2, 2);
    perm << 0, 1, 1, 0;
    CHECK_THROWS_AS(mixing_diagnostics(perm), NearPeriodicError);
  }

  TEST_CASE("measured distance respects the geometric envelope") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Environment env = testing::small_environment(8, seed, false);
      const Matrix p = policy_transition_matrix(env.mdp, env.target);
      const MixingEstimate est = mixing_diagnostics(p);
      const Vector mu = stationary_distribution(p);
      const std::size_t tau = est.tau_alpha(0.01);
      Matrix pt = p;
      // 1e-13 absorbs the rounding floor of the distance once the chain has mixed.
      for (std::size_t t = 1; t <= 5 * tau && t <= est.horizon; ++t) {
        CHECK(max_tv_distance(pt, mu) <= est.m_bar * std::pow(est.rho, double(t)) * 1.05 + 1e-13);
        pt = pt * p;
      }
    }
  }

  TEST_CASE("two agents' states are independent") {
    const Mdp mdp = testing::uniform_mdp(2, 1, 0.9, 0.0);
    const Policy pi = Policy::uniform(2, 1);
    AgentChain a(mdp, pi, uniform_distribution(2), 1, 0, CounterRng(derive_key(3, {0})));
    AgentChain b(mdp, pi, uniform_distribution(2), 1, 1, CounterRng(derive_key(3, {1})));
    std::array<double, 4> joint{};
    const int n = 100000;
    for (int t = 0; t < n; ++t) {
      const int sa = a.advance().next_state, sb = b.advance().next_state;
      joint[static_cast<std::size_t>(2 * sa + sb)] += 1.0;
    }
    const double row0 = (joint[0] + joint[1]) / n, col0 = (joint[0] + joint[2]) / n;
    double chi2 = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double e = n * (i == 0 ? row0 : 1 - row0) * (j == 0 ? col0 : 1 - col0);
        chi2 += std::pow(joint[static_cast<std::size_t>(2 * i + j)] - e, 2) / e;
      }
    // One degree of freedom; 3 sigma on the normal scale is chi2 = 9.
    CHECK(chi2 <= 9.0);
  }
}
