#include <cmath>
#include <vector>

#include "doctest.h"
#include "fedsam/algorithms.hpp"
#include "fedsam/error.hpp"
#include "fedsam/generator.hpp"
#include "support.hpp"

using namespace fedsam;

namespace {

const AlgorithmKind kAllKinds[] = {AlgorithmKind::on_policy_td_lfa, AlgorithmKind::off_policy_td_tabular,
                                   AlgorithmKind::q_learning};

GeneratorParams small_params(std::size_t n_states, std::size_t n) {
  GeneratorParams p;
  p.n_states = n_states;
  p.d = std::min<std::size_t>(3, n_states);
  p.n = n;
  return p;
}

/// Raw update direction (x' - x) / step at x.
Vector raw_direction(const LocalRule& rule, std::size_t agent, const Vector& x, const NoiseView& y) {
  Vector next = x;
  rule(agent, next, y, 1.0);
  return next - x;
}

Vector random_vector(std::size_t dim, CounterRng& rng, double scale) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * standard_normal(rng);
  return v;
}

}  // namespace

TEST_SUITE("algorithms") {
  TEST_CASE("on-policy LFA update examples") {
    const Environment env = testing::small_environment(5, 2);
    const Mdp zero = env.mdp.with_rewards(RowMatrix::Zero(5, 3));
    const std::vector<int> states{0, 3, 1};
    const std::vector<int> actions{2, 1};
    const Vector v0 = Vector::Zero(static_cast<Eigen::Index>(env.features->dim()));
    CHECK(onpolicy_td_update(v0, states, actions, *env.features, zero, 2, 0.3).cwiseAbs().maxCoeff() == 0.0);

    // Tabular features, n = 1: classic TD(0).
    const FeatureMatrix tab = FeatureMatrix::tabular(5);
    const Vector v = Vector::LinSpaced(5, 0.5, 2.5);
    const std::vector<int> s2{1, 4};
    const std::vector<int> a2{2};
    const Vector next = onpolicy_td_update(v, s2, a2, tab, env.mdp, 1, 0.1);
    Vector expected = v;
    expected(1) += 0.1 * (env.mdp.reward(1, 2) + env.mdp.gamma() * v(4) - v(1));
    CHECK((next - expected).cwiseAbs().maxCoeff() <= 1e-15);

    // d = 1, phi = 1, n = 2, gamma = 0.5, unit rewards.
    const Mdp one = testing::uniform_mdp(1, 1, 0.5, 1.0);
    const FeatureMatrix ones(Matrix::Ones(1, 1));
    const std::vector<int> s3{0, 0, 0};
    const std::vector<int> a3{0, 0};
    CHECK(std::abs(onpolicy_td_update(Vector::Zero(1), s3, a3, ones, one, 2, 0.1)(0) - 0.15) <= 1e-15);
  }

  TEST_CASE("off-policy TD update examples") {
    const Environment env = testing::small_environment(5, 3, false);
    const Vector v = Vector::LinSpaced(5, 1.0, 3.0);
    const std::vector<int> states{2, 0, 4};
    const std::vector<int> actions{1, 0};
    const Vector same = offpolicy_td_update(v, states, actions, env.target, env.target, env.mdp, 2, 0.1);
    Vector expected = v;
    const double g = env.mdp.gamma();
    expected(2) += 0.1 * ((env.mdp.reward(2, 1) + g * v(0) - v(2)) + g * (env.mdp.reward(0, 0) + g * v(4) - v(0)));
    CHECK((same - expected).cwiseAbs().maxCoeff() <= 1e-14);

    RowMatrix t(1, 2), b(1, 2), r(1, 2);
    t << 0.6, 0.4;
    b << 0.3, 0.7;
    r << 1.0, 0.0;
    const Mdp single = testing::uniform_mdp(1, 2, 0.5, 0.0).with_rewards(r);
    const std::vector<int> s1{0, 0};
    const std::vector<int> a1{0};
    const Vector out = offpolicy_td_update(Vector::Zero(1), s1, a1, Policy(t), Policy(b), single, 1, 0.1);
    CHECK(std::abs(out(0) - 0.2) <= 1e-15);

    RowMatrix bz(1, 2);
    bz << 1.0, 0.0;
    const std::vector<int> a_miss{1};
    CHECK_THROWS_AS(offpolicy_td_update(Vector::Zero(1), s1, a_miss, Policy(t), Policy(bz), single, 1, 0.1),
                    CoverageError);
  }

  TEST_CASE("Q-learning update examples") {
    const Environment env = testing::small_environment(4, 5, false);
    RowMatrix r = RowMatrix::Zero(4, 3);
    r(1, 2) = 1.0;
    const Mdp mdp = env.mdp.with_rewards(r);
    const RowMatrix q0 = RowMatrix::Zero(4, 3);
    const RowMatrix q1 = q_learning_update(q0, Transition{1, 2, 3}, mdp, 0.1);
    CHECK(std::abs(q1(1, 2) - 0.1) <= 1e-15);
    CHECK((q1 - q0).cwiseAbs().sum() == doctest::Approx(0.1));
    CHECK(q_learning_update(q1, Transition{0, 0, 1}, mdp, 0.0) == q1);
  }

  TEST_CASE("expected raw Q-learning update vanishes at the oracle") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Environment env = testing::small_environment(6, seed, false);
      const RowMatrix q = q_star_oracle(env.mdp);
      for (std::size_t s = 0; s < 6; ++s)
        for (std::size_t a = 0; a < 3; ++a) {
          double mean = 0.0;
          for (std::size_t s1 = 0; s1 < 6; ++s1) {
            const RowMatrix next =
                q_learning_update(q, Transition{int(s), int(a), int(s1)}, env.mdp, 1.0);
            mean += env.mdp.transition(s, a, s1) * (next(s, a) - q(s, a));
          }
          CHECK(std::abs(mean) <= 1e-12);
        }
    }
  }

  TEST_CASE("expected raw TD updates vanish at the oracle by window enumeration") {
    for (AlgorithmKind kind : {AlgorithmKind::on_policy_td_lfa, AlgorithmKind::off_policy_td_tabular}) {
      for (std::size_t n : {1ul, 2ul}) {
        GeneratorParams params = small_params(5, n);
        params.n_behaviors = 2;
        params.heterogeneity = 0.5;
        const InstancePtr inst = generate_instance(kind, params, 3 + n);
        const LocalRule rule = raw_rule(inst);
        const Vector x = kind == AlgorithmKind::on_policy_td_lfa ? inst->fixed_point : inst->v_pi;
        for (std::size_t b = 0; b < inst->behaviors.size(); ++b) {
          Vector mean = Vector::Zero(x.size());
          for_each_window(inst->mdp, inst->behaviors[b], inst->mu_behavior[b], n,
                          [&](std::span<const int> st, std::span<const int> ac, double prob) {
                            mean += prob * raw_direction(rule, b, x, NoiseView{st, ac, 0.0});
                          });
          CHECK(mean.cwiseAbs().maxCoeff() <= 1e-12);
        }
      }
    }
  }

  TEST_CASE("window enumeration matches nested loops") {
    const Environment env = testing::small_environment(3, 9, false);
    const Policy& pi = env.behaviors.front();
    const Vector start = Vector::Constant(3, 1.0 / 3.0);
    // f(window) is an arbitrary injective weight of the window's contents.
    auto f = [](int s0, int a0, int s1, int a1, int s2) { return s0 + 3 * a0 + 9 * s1 + 27 * a1 + 81 * s2; };
    double brute = 0.0, mass = 0.0;
    for (int s0 = 0; s0 < 3; ++s0)
      for (int a0 = 0; a0 < 3; ++a0)
        for (int s1 = 0; s1 < 3; ++s1)
          for (int a1 = 0; a1 < 3; ++a1)
            for (int s2 = 0; s2 < 3; ++s2) {
              const double p = start(s0) * pi.prob(s0, a0) * env.mdp.transition(s0, a0, s1) * pi.prob(s1, a1) *
                               env.mdp.transition(s1, a1, s2);
              brute += p * f(s0, a0, s1, a1, s2);
              mass += p;
            }
    double enumerated = 0.0, enumerated_mass = 0.0;
    const bool ok = for_each_window(env.mdp, pi, start, 2, [&](std::span<const int> st, std::span<const int> ac, double p) {
      REQUIRE(st.size() == 3);
      REQUIRE(ac.size() == 2);
      CHECK(p > 0.0);
      enumerated += p * f(st[0], ac[0], st[1], ac[1], st[2]);
      enumerated_mass += p;
    });
    CHECK(ok);
    CHECK(std::abs(enumerated - brute) <= 1e-12 * std::abs(brute));
    CHECK(std::abs(enumerated_mass - mass) <= 1e-14);
    CHECK_FALSE(for_each_window(env.mdp, pi, start, 2, [](std::span<const int>, std::span<const int>, double) {}, 10));
  }

  TEST_CASE("off-policy expected operator has the closed matrix form") {
    for (std::size_t n : {1ul, 2ul, 3ul}) {
      GeneratorParams params = small_params(2, n);
      params.n_actions = 2;
      params.branching = 2;
      const InstancePtr inst = generate_instance(AlgorithmKind::off_policy_td_tabular, params, 20 + n);
      Matrix pn = Matrix::Identity(2, 2);
      for (std::size_t k = 0; k < n; ++k) pn = pn * inst->p_target;
      const Matrix d = inst->mu_behavior[0].asDiagonal();
      const Matrix closed = Matrix::Identity(2, 2) + d * (std::pow(inst->mdp.gamma(), double(n)) * pn - Matrix::Identity(2, 2));
      CHECK((expected_operator_matrix(*inst, 0) - closed).cwiseAbs().maxCoeff() <= 1e-12);

      // Exhaustive windows of the shifted G, independent of the matrix.
      const FedSamProblem problem = build_problem(inst);
      CounterRng rng(n);
      const Vector theta = random_vector(2, rng, 1.0);
      Vector mean = Vector::Zero(2);
      for_each_window(inst->mdp, inst->behaviors[0], inst->mu_behavior[0], n,
                      [&](std::span<const int> st, std::span<const int> ac, double p) {
                        mean += p * problem.apply_G(0, theta, NoiseView{st, ac, 0.0});
                      });
      CHECK((mean - closed * theta).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((expected_operator(*inst, 0, theta) - closed * theta).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }

  TEST_CASE("expected operator vanishes at zero") {
    for (AlgorithmKind kind : kAllKinds) {
      const InstancePtr inst = generate_instance(kind, small_params(6, 1), 4);
      CHECK(expected_operator(*inst, 0, Vector::Zero(static_cast<Eigen::Index>(inst->dim()))).cwiseAbs().maxCoeff() <=
            1e-12);
    }
  }

  TEST_CASE("Monte-Carlo mean of G approaches the expected operator") {
    const InstancePtr inst = generate_instance(AlgorithmKind::off_policy_td_tabular, small_params(4, 1), 6);
    const FedSamProblem problem = build_problem(inst);
    CounterRng rng(3);
    const Vector theta = random_vector(4, rng, 2.0);
    const Vector exact = expected_operator(*inst, 0, theta);
    const int samples = 100000;
    Vector sum = Vector::Zero(4), sum2 = Vector::Zero(4);
    for (int k = 0; k < samples; ++k) {
      const AgentChain chain(inst->mdp, inst->behaviors[0], std::span<const double>(inst->mu_behavior[0].data(), 4), 1,
                             0, CounterRng(derive_key(8, {static_cast<std::uint64_t>(k)})));
      const Vector g = problem.apply_G(0, theta, NoiseView{chain.states(), chain.actions(), 0.0});
      sum += g;
      sum2 += g.cwiseProduct(g);
    }
    const Vector mean = sum / samples;
    for (Eigen::Index i = 0; i < 4; ++i) {
      const double se = std::sqrt((sum2(i) / samples - mean(i) * mean(i)) / (samples - 1));
      CHECK(std::abs(mean(i) - exact(i)) <= 3.0 * se + 1e-12);
    }
  }

  TEST_CASE("shifted and raw runs differ by the fixed point") {
    for (AlgorithmKind kind : kAllKinds) {
      GeneratorParams params = small_params(5, kind == AlgorithmKind::q_learning ? 1 : 2);
      params.n_behaviors = 2;
      const InstancePtr inst = generate_instance(kind, params, 12);
      const FedSamProblem problem = build_problem(inst);
      CHECK(problem.registered);
      FedRunConfig cfg;
      cfg.n_agents = 3;
      cfg.sync_period = 4;
      cfg.step_size = 0.05;
      cfg.horizon = 10000;
      cfg.master_seed = 5;
      cfg.checkpoint_every = 1000;
      const RunTrace shifted = run_fedsam(problem, cfg);
      FedRunConfig raw_cfg = cfg;
      raw_cfg.step_size = cfg.step_size;
      const RunTrace raw = run_local_rule(raw_rule(inst), chain_noise_factory(inst),
                                          Vector::Zero(static_cast<Eigen::Index>(inst->dim())), inst->norm_kind(), raw_cfg);
      REQUIRE(raw.theta_bar_series.size() == shifted.theta_bar_series.size());
      for (std::size_t k = 0; k < raw.theta_bar_series.size(); ++k)
        CHECK((raw.theta_bar_series[k] - inst->fixed_point - shifted.theta_bar_series[k]).cwiseAbs().maxCoeff() <=
              1e-12);
      CHECK(raw.output_index == shifted.output_index);
    }
  }

  TEST_CASE("shifted G vanishes at zero and b respects B") {
    for (AlgorithmKind kind : kAllKinds) {
      const InstancePtr inst = generate_instance(kind, small_params(6, 1), 31);
      const FedSamProblem problem = build_problem(inst);
      const TheoryConstants tc = theory_constants(*inst);
      auto noise = problem.make_noise(0, CounterRng(4));
      const Vector zero = Vector::Zero(static_cast<Eigen::Index>(problem.dim));
      for (int k = 0; k < 10000; ++k) {
        const NoiseView y = noise->current();
        CHECK(problem.apply_G(0, zero, y).cwiseAbs().maxCoeff() == 0.0);
        if (kind != AlgorithmKind::on_policy_td_lfa) CHECK(norm(problem.norm_kind, problem.apply_b(0, y)) <= tc.B);
        noise->advance();
      }
    }
  }

  TEST_CASE("theory constant calculators") {
    CHECK(std::abs(q_learning_gamma_c(0.1, 0.9) - 0.99) <= 1e-15);
    CHECK(std::abs(off_policy_td_gamma_c(0.1, 0.9, 1) - 0.981) <= 1e-15);
    CHECK(ratio_geometric_sum(0.5, 2.0, 3) == 3.0);
    CHECK(std::abs(ratio_geometric_sum(0.5, 1.0, 3) - 1.75) <= 1e-15);
    double previous = 1.0;
    for (double x : {1e-2, 1e-4, 1e-6, 1e-8}) {
      const double phi = rate_constant_from_contraction(1.0 - x);
      CHECK(phi > 0.0);
      CHECK(phi < previous);
      previous = phi;
    }
    CHECK(previous < 1e-6);
  }

  TEST_CASE("A1 uses the unit-ratio branch") {
    const Mdp mdp = testing::uniform_mdp(2, 2, 0.5, 0.5);
    const std::vector<std::size_t> first{0, 0};
    const InstancePtr inst = make_instance(AlgorithmKind::off_policy_td_tabular, mdp, Policy::deterministic(first, 2),
                                           {Policy::uniform(2, 2)}, std::nullopt, 3);
    const TheoryConstants tc = theory_constants(*inst);
    CHECK(tc.imax == 2.0);
    CHECK(std::abs(tc.A1 - (1.0 + 1.5 * 3.0)) <= 1e-12);
  }

  TEST_CASE("LFA scaling keeps the spectral radius inside the unit disk") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const InstancePtr inst = generate_instance(AlgorithmKind::on_policy_td_lfa, small_params(8, 2), seed);
      CHECK(lfa_spectral_radius(*inst, inst->beta) <= 0.99 + 1e-12);
      CHECK(select_beta(*inst) == inst->beta);
    }
  }

  TEST_CASE("coverage gaps are reported") {
    const Mdp mdp = testing::uniform_mdp(2, 2, 0.5, 0.5);
    const std::vector<std::size_t> first{0, 0}, second{1, 1};
    CHECK_THROWS_AS(make_instance(AlgorithmKind::off_policy_td_tabular, mdp, Policy::deterministic(first, 2),
                                  {Policy::deterministic(second, 2)}, std::nullopt, 1),
                    CoverageError);
  }
}
