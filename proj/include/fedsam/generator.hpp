#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "fedsam/algorithms.hpp"
#include "fedsam/mdp.hpp"
#include "fedsam/mdp_io.hpp"

namespace fedsam {

struct GeneratorParams {
  std::size_t n_states = 10;
  std::size_t n_actions = 3;
  std::size_t branching = 3;
  double gamma = 0.9;
  std::size_t d = 4;
  std::size_t n = 1;
  double eps_cov = 0.05;
  double eps_erg = 0.01;
  /// Number of distinct behavior policies; agent i uses i mod n_behaviors.
  std::size_t n_behaviors = 1;
  /// 0 mixes each behavior from the target; h > 0 first blends the target
  /// with an independent random policy at weight h.
  double heterogeneity = 0.0;

  void validate() const;
};

Json to_json(const GeneratorParams& p);
GeneratorParams generator_params_from_json(const Json& j);

struct Environment {
  Mdp mdp;
  Policy target;
  std::vector<Policy> behaviors;
  std::optional<FeatureMatrix> features;
};

/// Garnet-style MDP: each (s, a) spreads mass over `branching` distinct
/// random successors, then mixes eps_erg uniform mass. Rewards are uniform in
/// [0, 1], the target policy is random, every behavior entry is >= eps_cov and
/// the features are orthonormalized Gaussian columns (up to 5 redraws, then
/// GenerationError).
Environment generate_environment(const GeneratorParams& params, std::uint64_t seed, bool with_features);

InstancePtr generate_instance(AlgorithmKind kind, const GeneratorParams& params, std::uint64_t seed);

InstancePtr instance_from_environment(AlgorithmKind kind, const Environment& env, std::size_t n);

Json to_json(const Environment& env);
Environment environment_from_json(const Json& j);

}  // namespace fedsam
