#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedsam/algorithms.hpp"
#include "fedsam/engine.hpp"
#include "fedsam/generator.hpp"
#include "fedsam/mdp_io.hpp"
#include "fedsam/stats.hpp"

namespace fedsam {

/// Experiment description. The JSON form is the CLI config schema; see
/// default_experiment_json() for every key and its type.
struct ExperimentSpec {
  AlgorithmKind kind = AlgorithmKind::off_policy_td_tabular;
  GeneratorParams generator;
  std::uint64_t instance_seed = 1;
  /// Environment file written by gen-mdp; overrides the generator when set.
  std::string instance_file;
  std::vector<std::size_t> n_agents{1};
  /// Integers as decimal strings, or "T/N" for K = max(1, T / N).
  std::vector<std::string> sync_period{"1"};
  std::vector<double> alpha{0.01};
  std::vector<std::size_t> horizon{10000};
  std::size_t replications = 10;
  /// Output-time constant; 0 selects 1 - alpha phi / 2.
  double output_c = 0.0;
  std::uint64_t master_seed = 0;
  bool record_series = false;
  std::size_t checkpoint_every = 0;
  bool timing = false;

  void validate() const;
};

Json default_experiment_json();

/// Rejects keys absent from `schema` and values whose JSON type differs from
/// the schema's (integers are accepted where numbers are expected). Errors
/// name the offending dotted key.
void check_against_schema(const Json& value, const Json& schema, const std::string& path = "");
Json to_json(const ExperimentSpec& spec);
ExperimentSpec experiment_from_json(const Json& j);

/// Resolves a sync-period rule ("T/N" or an integer) for a cell.
std::size_t resolve_sync_period(const std::string& rule, std::size_t horizon, std::size_t n_agents);

struct Cell {
  std::size_t n_agents = 1;
  std::string k_rule = "1";
  std::size_t sync_period = 1;
  double alpha = 0.01;
  std::size_t horizon = 1;
};

/// Cartesian product of the grid in (N, K, alpha, T) order, N varying slowest.
std::vector<Cell> expand_grid(const ExperimentSpec& spec);

struct TrialResult {
  std::size_t cell_index = 0;
  Cell cell;
  std::size_t replication = 0;
  /// Squared error of the output-time average in the instance norm.
  double mse = 0.0;
  double final_sq_error = 0.0;
  std::size_t t_hat = 0;
  double wall_ms = 0.0;
  std::string status = "ok";
  std::string message;
  double max_sync_omega = 0.0;
  bool late_blowup = false;
  std::vector<std::size_t> series_t;
  std::vector<double> series_error;
  std::vector<double> series_omega;
};

struct TrialOptions {
  std::uint64_t master_seed = 0;
  /// Output constant; <= 0 selects the theory value for the cell's alpha.
  double output_c = 0.0;
  bool record_series = false;
  std::size_t checkpoint_every = 0;
  bool parallel_agents = false;
  bool timing = false;
};

/// Per-trial stream id derived from (cell, replication).
std::uint64_t trial_id(std::size_t cell_index, std::size_t replication);

/// Runs one federated trial; divergence is recorded in status, not thrown.
TrialResult run_trial(const FedSamProblem& problem, const TheoryConstants& constants, const Cell& cell,
                      std::size_t cell_index, std::size_t replication, const TrialOptions& options);

struct CellSummary {
  Cell cell;
  MeanSe mse;
  MeanSe final_sq_error;
  std::size_t ok = 0;
  std::size_t diverged = 0;
  std::size_t late_blowups = 0;
  bool valid = true;
  double max_sync_omega = 0.0;
};

struct SpeedupFit {
  std::string k_rule;
  double alpha = 0.0;
  std::size_t horizon = 0;
  std::vector<double> n_agents;
  std::vector<double> mse;
  LineFit fit;
  /// MSE at the largest N over MSE at the smallest N.
  double ratio = 0.0;
};

struct KCurve {
  std::size_t n_agents = 0;
  double alpha = 0.0;
  std::size_t horizon = 0;
  std::vector<double> sync_period;
  std::vector<double> mse;
  std::vector<double> se;
  /// Weighted fit of MSE on log2 K.
  LineFit fit;
  double spearman = 0.0;
  /// slope >= -2 SE: no significant decrease.
  bool non_decreasing = true;
  /// slope > 2 SE.
  bool increasing = false;
};

/// Slope of log MSE against log N, weighted by (mean / se)^2 when every se > 0.
SpeedupFit fit_speedup(const std::vector<double>& n_agents, const std::vector<MeanSe>& mse);
KCurve fit_k_curve(const std::vector<double>& sync_period, const std::vector<MeanSe>& mse);

struct SweepResult {
  std::vector<TrialResult> trials;
  std::vector<CellSummary> cells;
  std::vector<SpeedupFit> speedups;
  std::vector<KCurve> k_curves;
};

/// Aggregates trials (grouped by cell_index, in order) into summaries and fits.
SweepResult aggregate(std::vector<TrialResult> trials, const std::vector<Cell>& cells);

struct SweepContext {
  InstancePtr instance;
  FedSamProblem problem;
  TheoryConstants constants;
};

SweepContext prepare_experiment(const ExperimentSpec& spec);

/// Cells whose horizon does not exceed max(K + tau_alpha, 2 tau_alpha), with
/// tau_alpha taken over every behavior chain.
std::vector<std::string> horizon_warnings(const ExperimentSpec& spec, const SweepContext& context);

/// Runs every (cell, replication) on at most `parallelism` workers.
SweepResult run_sweep(const ExperimentSpec& spec, const SweepContext& context, std::size_t parallelism);

// Scalar i.i.d. recursion x_{t+1} = x_t + alpha (X_t - x_t), X_t ~ N(0, sigma^2).

/// (x0^2 - alpha sigma^2 / (2 - alpha)) (1 - alpha)^{2t} + alpha sigma^2 / (2 - alpha).
double iid_second_moment(double alpha, double sigma, double x0, std::size_t t);

/// Registered one-dimensional problem with G = 0 and b(y) = y, y ~ N(0, sigma^2) i.i.d.
FedSamProblem iid_scalar_problem(double sigma, double x0);

struct IidRow {
  std::size_t t = 0;
  double empirical = 0.0;
  double se = 0.0;
  double exact = 0.0;
  double z = 0.0;
};

struct IidReport {
  std::vector<IidRow> rows;
  double max_abs_z = 0.0;
};

IidReport iid_scalar_validation(double alpha, double sigma, double x0, const std::vector<std::size_t>& t_grid,
                                std::size_t replications, std::uint64_t seed, std::size_t parallelism = 1);

// Persistence.

Json to_json(const TheoryConstants& c);
Json summary_json(const SweepResult& result);
Json instance_summary(const AlgorithmInstance& instance);

/// results.csv, metadata.json, summary.json, plus series.jsonl when series
/// were recorded. wall_ms is 0 unless timing is enabled.
void persist(const std::filesystem::path& dir, const ExperimentSpec& spec, const SweepContext& context,
             const SweepResult& result);

std::string results_csv(const std::vector<TrialResult>& trials);
std::vector<TrialResult> parse_results_csv(const std::string& text);

struct LoadedResults {
  Json metadata;
  std::vector<TrialResult> trials;
};
LoadedResults load_results(const std::filesystem::path& dir);

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

inline constexpr const char* kCodeVersion = "fedsam 1.0.0";

}  // namespace fedsam
