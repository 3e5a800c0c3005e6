#include <cmath>
#include <vector>

#include "doctest.h"
#include "fedsam/engine.hpp"
#include "fedsam/error.hpp"
#include "fedsam/harness.hpp"
#include "fedsam/rng.hpp"

using namespace fedsam;

namespace {

/// G(theta, y) = g theta, b(y) = scale * y with i.i.d. standard normal y.
FedSamProblem linear_scalar(double g, double noise_scale, double x0) {
  FedSamProblem p;
  p.dim = 1;
  p.norm_kind = NormKind::sup;
  p.theta0 = Vector::Constant(1, x0);
  p.apply_G = [g](std::size_t, const Vector& theta, const NoiseView&) { return Vector(g * theta); };
  p.apply_b = [noise_scale](std::size_t, const NoiseView& y) {
    return Vector(Vector::Constant(1, noise_scale * y.value));
  };
  p.make_noise = [](std::size_t, CounterRng rng) -> std::unique_ptr<NoiseProcess> {
    return std::make_unique<IidNormalNoise>(1.0, rng);
  };
  register_problem(p);
  return p;
}

}  // namespace

TEST_SUITE("engine") {
  TEST_CASE("q distribution examples") {
    CHECK(q_distribution(0.7, 1) == std::vector<double>{1.0});
    const auto q = q_distribution(2.0, 3);
    CHECK(std::abs(q[0] - 4.0 / 7.0) < 1e-15);
    CHECK(std::abs(q[1] - 2.0 / 7.0) < 1e-15);
    CHECK(std::abs(q[2] - 1.0 / 7.0) < 1e-15);
    const auto inc = q_distribution(1.0 - 0.01 * 0.3 / 2.0, 500);
    for (std::size_t t = 1; t < inc.size(); ++t) CHECK(inc[t] > inc[t - 1]);
    CHECK_THROWS_AS(q_distribution(0.0, 3), ParameterError);
    CHECK_THROWS_AS(q_distribution(1.0, 0), ParameterError);
  }

  TEST_CASE("q distribution sums to one in extreme regimes") {
    for (double c : {0.5, 1.0 - 1e-6, 1.0, 2.0})
      for (std::size_t t : {1ul, 10ul, 100000ul}) {
        long double sum = 0.0L;
        for (double v : q_distribution(c, t)) sum += v;
        CHECK(static_cast<double>(std::abs(sum - 1.0L)) <= 1e-12);
      }
  }

  TEST_CASE("output sampler agrees with categorical draws") {
    const auto q = q_distribution(0.9, 40);
    const OutputSampler sampler(q);
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      CounterRng a(seed), b(seed);
      CHECK(sampler(a) == sample_categorical(q, b));
    }
  }

  TEST_CASE("local step examples") {
    const FedSamProblem identity = linear_scalar(1.0, 0.0, 0.0);
    const NoiseView y{{}, {}, 0.3};
    const Vector theta = Vector::Constant(1, 1.7);
    CHECK(fedsam_local_step(identity, 0, theta, y, 0.2)(0) == 1.7);
    const FedSamProblem half = linear_scalar(0.5, 1.0, 0.0);
    CHECK(fedsam_local_step(half, 0, theta, y, 0.0)(0) == 1.7);
    const NoiseView one{{}, {}, 1.0};
    CHECK(std::abs(fedsam_local_step(half, 0, Vector::Constant(1, 2.0), one, 0.1)(0) - 2.0) < 1e-15);
  }

  TEST_CASE("non-finite steps raise divergence errors") {
    const FedSamProblem p = linear_scalar(0.5, 1.0, 0.0);
    const NoiseView y{{}, {}, std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(fedsam_local_step(p, 3, Vector::Zero(1), y, 0.1, 7), DivergenceError);
  }

  TEST_CASE("sync average and sync error") {
    std::vector<Vector> same(3, Vector::Constant(2, 1.25));
    sync_average(same);
    for (const Vector& v : same) CHECK(v == Vector::Constant(2, 1.25));
    const SyncError zero = sync_error(same, NormKind::sup);
    CHECK(zero.delta == 0.0);
    CHECK(zero.omega == 0.0);

    std::vector<Vector> two{Vector::Constant(1, 0.0), Vector::Constant(1, 2.0)};
    const SyncError e = sync_error(two, NormKind::sup);
    CHECK(e.delta == 1.0);
    CHECK(e.omega == 1.0);

    std::vector<Vector> pair{Vector::Constant(1, 1.0), Vector::Constant(1, 3.0)};
    sync_average(pair);
    CHECK(pair[0](0) == 2.0);
    CHECK(pair[1](0) == 2.0);
    const std::vector<Vector> once = pair;
    sync_average(pair);
    CHECK(pair == once);
  }

  TEST_CASE("delta squared never exceeds omega") {
    CounterRng rng(12);
    for (int k = 0; k < 200; ++k) {
      std::vector<Vector> thetas(5, Vector(3));
      for (Vector& v : thetas)
        for (Eigen::Index i = 0; i < 3; ++i) v(i) = standard_normal(rng) * std::exp(3.0 * standard_normal(rng));
      for (NormKind kind : {NormKind::sup, NormKind::euclidean}) {
        const SyncError e = sync_error(thetas, kind);
        CHECK(e.delta * e.delta <= e.omega * (1.0 + 1e-12));
      }
    }
  }

  TEST_CASE("deterministic linear recursion has the closed form") {
    const double gc = 0.8, alpha = 0.05;
    const FedSamProblem p = linear_scalar(gc, 0.0, 1.0);
    FedRunConfig cfg;
    cfg.step_size = alpha;
    cfg.horizon = 200;
    cfg.checkpoint_every = 1;
    const RunTrace trace = run_fedsam(p, cfg);
    REQUIRE(trace.checkpoint_t.size() == 201);
    for (std::size_t k = 0; k < trace.checkpoint_t.size(); ++k) {
      const double exact = std::pow(1.0 - alpha * (1.0 - gc), double(trace.checkpoint_t[k]));
      CHECK(std::abs(trace.theta_bar_series[k](0) - exact) <= 1e-12 * exact + 1e-15);
    }
  }

  TEST_CASE("omega vanishes at every sync instant") {
    const FedSamProblem p = linear_scalar(0.5, 1.0, 0.3);
    for (std::size_t k : {1ul, 3ul, 7ul, 50ul}) {
      FedRunConfig cfg;
      cfg.n_agents = 6;
      cfg.sync_period = k;
      cfg.step_size = 0.1;
      cfg.horizon = 700;
      cfg.checkpoint_every = 1;
      const RunTrace trace = run_fedsam(p, cfg);
      CHECK(trace.max_sync_omega == 0.0);
      CHECK(trace.sync_count == 700 / k);
      for (std::size_t i = 0; i < trace.checkpoint_t.size(); ++i)
        if (trace.checkpoint_t[i] % k == 0) CHECK(trace.omega_series[i] == 0.0);
    }
  }

  TEST_CASE("zero step size leaves the parameter at its start") {
    const FedSamProblem p = linear_scalar(0.5, 1.0, 0.75);
    FedRunConfig cfg;
    cfg.n_agents = 3;
    cfg.step_size = 0.0;
    cfg.horizon = 100;
    const RunTrace trace = run_fedsam(p, cfg);
    CHECK(trace.output_theta(0) == 0.75);
    CHECK(trace.final_theta(0) == 0.75);
  }

  TEST_CASE("agent-parallel runs equal serial runs bit for bit") {
    const FedSamProblem p = linear_scalar(0.7, 1.0, 2.0);
    FedRunConfig cfg;
    cfg.n_agents = 8;
    cfg.sync_period = 5;
    cfg.step_size = 0.05;
    cfg.horizon = 2000;
    cfg.master_seed = 77;
    cfg.output_c = 0.999;
    const RunTrace serial = run_fedsam(p, cfg);
    cfg.parallel = true;
    const RunTrace parallel = run_fedsam(p, cfg);
    CHECK(serial.output_index == parallel.output_index);
    CHECK(serial.output_theta == parallel.output_theta);
    CHECK(serial.theta_bar_series == parallel.theta_bar_series);
    CHECK(serial.omega_series == parallel.omega_series);
  }

  TEST_CASE("early stop at the output index keeps the output") {
    const FedSamProblem p = linear_scalar(0.7, 1.0, 2.0);
    FedRunConfig cfg;
    cfg.n_agents = 4;
    cfg.sync_period = 3;
    cfg.horizon = 5000;
    cfg.output_c = 0.9995;
    const RunTrace full = run_fedsam(p, cfg);
    cfg.record_series = false;
    cfg.stop_at_output = true;
    const RunTrace early = run_fedsam(p, cfg);
    CHECK(early.output_index == full.output_index);
    CHECK(early.output_theta == full.output_theta);
    CHECK(early.steps_run == early.output_index);
  }

  TEST_CASE("unregistered problems and bad configs are rejected") {
    FedSamProblem p;
    CHECK_THROWS_AS(run_fedsam(p, FedRunConfig{}), PreconditionError);
    FedSamProblem broken = linear_scalar(0.5, 1.0, 0.0);
    broken.apply_G = [](std::size_t, const Vector& theta, const NoiseView&) {
      return Vector(theta.array() + 1.0);
    };
    CHECK_THROWS_AS(register_problem(broken), ValidationError);
    FedRunConfig cfg;
    cfg.sync_period = 0;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
  }

  TEST_CASE("noise average diagnostic") {
    const FedSamProblem silent = linear_scalar(0.5, 0.0, 0.0);
    CHECK(noise_average_diagnostic(silent, 4, 3, 100, 1) == 0.0);
    const FedSamProblem p = iid_scalar_problem(1.0, 0.0);
    const double e1 = noise_average_diagnostic(p, 1, 0, 10000, 2);
    const double e4 = noise_average_diagnostic(p, 4, 0, 10000, 2);
    const double e16 = noise_average_diagnostic(p, 16, 0, 10000, 2);
    CHECK(std::abs(e4 / e1 * 2.0 - 1.0) <= 0.2);
    CHECK(std::abs(e16 / e1 * 4.0 - 1.0) <= 0.2);
    CHECK(e16 < e4);
    CHECK(e4 < e1);
  }
}
