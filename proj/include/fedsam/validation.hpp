#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedsam/mdp_io.hpp"

namespace fedsam {

struct ValidationOptions {
  std::uint64_t seed = 1;
  std::size_t parallelism = 1;
  /// Multiplies the declared contraction factors; values below 1 inject a fault.
  double gamma_c_scale = 1.0;
  /// Scratch space for the determinism check.
  std::filesystem::path work_dir = std::filesystem::temp_directory_path() / "fedsam-validate";
};

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  /// One line with the observed values behind the verdict.
  std::string detail;
  double seconds = 0.0;
  double time_limit = 0.0;
  Json observed;
};

inline constexpr int kCheckCount = 10;

/// Runs acceptance check `id` (1..10). Exceptions inside a check become a failure.
CheckResult run_check(int id, const ValidationOptions& options);

std::vector<CheckResult> run_validation(const std::vector<int>& ids, const ValidationOptions& options);

Json validation_report(const std::vector<CheckResult>& results, const ValidationOptions& options);

/// "criterion <id> PASS|FAIL <name>: <detail> (<seconds> s)".
std::string format_check_line(const CheckResult& result);

// Individual checks.
CheckResult check_iid_closed_form(const ValidationOptions& options);
CheckResult check_oracles(const ValidationOptions& options);
CheckResult check_contraction(const ValidationOptions& options);
CheckResult check_fixed_points(const ValidationOptions& options);
CheckResult check_assumptions(const ValidationOptions& options);
CheckResult check_single_node(const ValidationOptions& options);
CheckResult check_linear_speedup(const ValidationOptions& options);
CheckResult check_sync_period(const ValidationOptions& options);
CheckResult check_determinism(const ValidationOptions& options);
CheckResult check_output_distribution(const ValidationOptions& options);

}  // namespace fedsam
