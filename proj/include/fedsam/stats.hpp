#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fedsam {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t count = 0;
};

/// Sample mean and standard error with the R - 1 denominator (se = 0 for R = 1).
MeanSe mean_and_se(std::span<const double> values);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  /// 2 * slope_se.
  double half_width = 0.0;
};

/// Weighted least squares y = a + b x. Empty weights means unweighted; with
/// weights the slope SE is (sum w (x - xbar)^2)^{-1/2}, otherwise the residual
/// estimate is used (0 when there are only two points).
LineFit weighted_line_fit(std::span<const double> x, std::span<const double> y,
                          std::span<const double> weights = {});

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace fedsam
