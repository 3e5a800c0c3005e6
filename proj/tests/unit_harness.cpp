#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "fedsam/error.hpp"
#include "fedsam/harness.hpp"
#include "support.hpp"

using namespace fedsam;

namespace {

ExperimentSpec small_spec() {
  ExperimentSpec spec;
  spec.generator.n_states = 5;
  spec.n_agents = {1, 2, 4};
  spec.sync_period = {"1", "T/N"};
  spec.alpha = {0.05};
  spec.horizon = {400};
  spec.replications = 3;
  spec.master_seed = 9;
  return spec;
}

std::string error_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config schema names the offending key") {
    Json j = default_experiment_json();
    j["grid"]["bogus"] = 1;
    CHECK(error_message([&] { experiment_from_json(j); }).find("grid.bogus") != std::string::npos);

    Json k = default_experiment_json();
    k["instance"]["generator"]["n_states"] = "x";
    CHECK(error_message([&] { experiment_from_json(k); }).find("instance.generator.n_states") != std::string::npos);

    Json e = default_experiment_json();
    e["grid"]["alpha"] = Json::array();
    CHECK_THROWS_AS(experiment_from_json(e), ValidationError);

    Json partial = {{"replications", 7}, {"grid", {{"sync_period", {1, "T/N"}}}}};
    const ExperimentSpec spec = experiment_from_json(partial);
    CHECK(spec.replications == 7);
    CHECK(spec.sync_period == std::vector<std::string>{"1", "T/N"});
    CHECK(spec.n_agents == std::vector<std::size_t>{1});
  }

  TEST_CASE("spec json round trip") {
    const ExperimentSpec spec = small_spec();
    const ExperimentSpec back = experiment_from_json(to_json(spec));
    CHECK(to_json(back) == to_json(spec));
  }

  TEST_CASE("sync period rules") {
    CHECK(resolve_sync_period("T/N", 1000, 8) == 125);
    CHECK(resolve_sync_period("T/N", 5, 8) == 1);
    CHECK(resolve_sync_period("16", 1000, 8) == 16);
    CHECK_THROWS_AS(resolve_sync_period("0", 10, 1), ValidationError);
    CHECK_THROWS_AS(resolve_sync_period("abc", 10, 1), ValidationError);
  }

  TEST_CASE("grid expansion order") {
    const auto cells = expand_grid(small_spec());
    REQUIRE(cells.size() == 6);
    CHECK(cells[0].n_agents == 1);
    CHECK(cells[1].n_agents == 1);
    CHECK(cells[1].sync_period == 400);
    CHECK(cells[3].k_rule == "T/N");
    CHECK(cells[3].sync_period == 200);
    CHECK(cells[5].n_agents == 4);
  }

  TEST_CASE("trial ids are distinct per cell and replication") {
    CHECK(trial_id(0, 1) != trial_id(1, 0));
    CHECK(trial_id(2, 3) == trial_id(2, 3));
  }

  TEST_CASE("zero step size leaves the initial error") {
    SweepContext ctx = prepare_experiment(small_spec());
    Cell cell;
    cell.n_agents = 2;
    cell.alpha = 0.0;
    cell.horizon = 50;
    const TrialResult r = run_trial(ctx.problem, ctx.constants, cell, 0, 0, TrialOptions{});
    const double initial = std::pow(norm(ctx.problem.norm_kind, ctx.problem.theta0), 2);
    CHECK(r.mse == initial);
    CHECK(r.final_sq_error == initial);
  }

  TEST_CASE("same cell and seed give identical trials") {
    SweepContext ctx = prepare_experiment(small_spec());
    Cell cell;
    cell.n_agents = 3;
    cell.sync_period = 4;
    cell.alpha = 0.05;
    cell.horizon = 300;
    TrialOptions options;
    options.master_seed = 4;
    const TrialResult a = run_trial(ctx.problem, ctx.constants, cell, 2, 1, options);
    options.parallel_agents = true;
    const TrialResult b = run_trial(ctx.problem, ctx.constants, cell, 2, 1, options);
    CHECK(results_csv({a}) == results_csv({b}));
  }

  TEST_CASE("single replication has zero standard error") {
    ExperimentSpec spec = small_spec();
    spec.n_agents = {2};
    spec.sync_period = {"1"};
    spec.replications = 1;
    const SweepResult result = run_sweep(spec, prepare_experiment(spec), 1);
    REQUIRE(result.cells.size() == 1);
    CHECK(result.cells[0].mse.mean == result.trials[0].mse);
    CHECK(result.cells[0].mse.se == 0.0);
    CHECK(result.cells[0].final_sq_error.se == 0.0);
  }

  TEST_CASE("speedup fit is exact on inverse-N data") {
    const std::vector<double> n{1, 2, 4, 8, 16};
    std::vector<MeanSe> mse;
    for (double x : n) mse.push_back(MeanSe{3.7 / x, 0.1 / x, 100});
    const SpeedupFit fit = fit_speedup(n, mse);
    CHECK(std::abs(fit.fit.slope + 1.0) <= 1e-10);
    CHECK(std::abs(fit.ratio - 1.0 / 16.0) <= 1e-12);
    std::vector<MeanSe> unweighted;
    for (double x : n) unweighted.push_back(MeanSe{3.7 / x, 0.0, 1});
    CHECK(std::abs(fit_speedup(n, unweighted).fit.slope + 1.0) <= 1e-10);
  }

  TEST_CASE("K-curve trend classification") {
    const std::vector<double> k{1, 4, 16, 64};
    std::vector<MeanSe> rising, flat, falling;
    for (double x : k) {
      rising.push_back(MeanSe{1.0 + 0.1 * std::log2(x), 0.01, 100});
      flat.push_back(MeanSe{1.0, 0.01, 100});
      falling.push_back(MeanSe{1.0 - 0.1 * std::log2(x), 0.01, 100});
    }
    const KCurve up = fit_k_curve(k, rising);
    CHECK(up.increasing);
    CHECK(up.non_decreasing);
    CHECK(up.spearman == doctest::Approx(1.0));
    CHECK(fit_k_curve(k, flat).non_decreasing);
    CHECK_FALSE(fit_k_curve(k, flat).increasing);
    CHECK_FALSE(fit_k_curve(k, falling).non_decreasing);
  }

  TEST_CASE("parallel and sequential sweeps agree; csv round trips") {
    const ExperimentSpec spec = small_spec();
    const SweepContext ctx = prepare_experiment(spec);
    const SweepResult seq = run_sweep(spec, ctx, 1);
    const SweepResult par = run_sweep(spec, ctx, 4);
    CHECK(results_csv(seq.trials) == results_csv(par.trials));
    CHECK(summary_json(seq).dump() == summary_json(par).dump());
    CHECK(seq.trials.size() == expand_grid(spec).size() * spec.replications);

    const std::string csv = results_csv(seq.trials);
    const std::vector<TrialResult> back = parse_results_csv(csv);
    CHECK(results_csv(back) == csv);
    REQUIRE(back.size() == seq.trials.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].mse == seq.trials[i].mse);
      CHECK(back[i].t_hat == seq.trials[i].t_hat);
    }

    const auto dir = std::filesystem::temp_directory_path() / "fedsam-unit-persist";
    std::filesystem::remove_all(dir);
    persist(dir, spec, ctx, seq);
    const LoadedResults loaded = load_results(dir);
    CHECK(results_csv(loaded.trials) == csv);
    CHECK(loaded.metadata.at("master_seed") == spec.master_seed);
    CHECK(loaded.metadata.contains("theory_constants"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("format_double round trips") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678, -2.5}) CHECK(std::stod(format_double(v)) == v);
    CHECK(format_double(std::nan("")) == "nan");
  }

  TEST_CASE("closed-form second moment") {
    CHECK(iid_second_moment(0.1, 1.0, 1.0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(iid_second_moment(0.1, 1.0, 1.0, 100000) - 0.1 / 1.9) <= 1e-15);
    const double ss = 0.1 / 1.9;
    CHECK(std::abs(iid_second_moment(0.1, 1.0, 1.0, 50) - ((1.0 - ss) * std::pow(0.9, 100) + ss)) <= 1e-15);
  }

  TEST_CASE("scalar recursion matches the closed form at t = 50") {
    const IidReport report = iid_scalar_validation(0.1, 1.0, 1.0, {0, 50}, 100000, 3);
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].empirical == 1.0);
    CHECK(report.rows[0].se == 0.0);
    CHECK(std::abs(report.rows[1].z) <= 3.0);
  }

  TEST_CASE("divergent cells are recorded, not thrown") {
    ExperimentSpec spec = small_spec();
    spec.n_agents = {1};
    spec.sync_period = {"1"};
    spec.alpha = {1e200};
    spec.output_c = 0.5;
    spec.horizon = {200};
    spec.replications = 2;
    const SweepResult result = run_sweep(spec, prepare_experiment(spec), 1);
    CHECK(result.trials[0].status == "diverged");
    CHECK(std::isnan(result.trials[0].mse));
    CHECK_FALSE(result.cells[0].valid);
  }
}

TEST_SUITE("generator") {
  TEST_CASE("generated chains are ergodic and features have full rank") {
    GeneratorParams params;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      const Environment env = generate_environment(params, seed, true);
      CHECK_NOTHROW(stationary_distribution(policy_transition_matrix(env.mdp, env.target)));
      for (const Policy& b : env.behaviors) CHECK_NOTHROW(stationary_distribution(policy_transition_matrix(env.mdp, b)));
      Eigen::FullPivHouseholderQR<Matrix> qr(env.features->matrix());
      CHECK(qr.rank() == static_cast<Eigen::Index>(params.d));
    }
  }

  TEST_CASE("coverage floor bounds the importance ratios") {
    GeneratorParams params;
    params.n_actions = 4;
    params.eps_cov = 0.05;
    params.n_behaviors = 3;
    params.heterogeneity = 0.7;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const Environment env = generate_environment(params, seed, false);
      for (const Policy& b : env.behaviors) CHECK(b.table().minCoeff() >= 0.05 - 1e-15);
      CHECK(max_importance_ratio(env.target, env.behaviors) <= 20.0 + 1e-9);
    }
  }

  TEST_CASE("fixed seed gives identical environments") {
    const GeneratorParams params;
    CHECK(to_json(generate_environment(params, 3, true)).dump() == to_json(generate_environment(params, 3, true)).dump());
    CHECK(to_json(generate_environment(params, 3, true)).dump() != to_json(generate_environment(params, 4, true)).dump());
    const Environment env = generate_environment(params, 5, true);
    CHECK(to_json(environment_from_json(Json::parse(to_json(env).dump()))).dump() == to_json(env).dump());
  }

  TEST_CASE("invalid parameters are rejected") {
    GeneratorParams params;
    params.d = 20;
    CHECK_THROWS_AS(params.validate(), ValidationError);
    GeneratorParams wide;
    wide.n_actions = 30;
    CHECK_THROWS_AS(wide.validate(), ValidationError);
  }
}
