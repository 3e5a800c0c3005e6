#include "fedsam/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsam/error.hpp"
#include "fedsam/rng.hpp"

namespace fedsam {
namespace {

constexpr std::uint64_t kGeneratorStream = 0x67656e6572617465ull;

RowMatrix random_policy(std::size_t ns, std::size_t na, CounterRng& rng) {
  RowMatrix p(ns, na);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < na; ++a) p(s, a) = -std::log(rng.uniform_open_low());
    p.row(s) /= p.row(s).sum();
  }
  return p;
}

// Mixes with uniform mass lambda = min(1, eps |A|), so every entry is >= eps.
RowMatrix with_coverage(const RowMatrix& base, double eps) {
  const double na = static_cast<double>(base.cols());
  const double lambda = std::min(1.0, eps * na);
  RowMatrix out = (1.0 - lambda) * base;
  out.array() += lambda / na;
  for (Eigen::Index s = 0; s < out.rows(); ++s) out.row(s) /= out.row(s).sum();
  return out;
}

}  // namespace

void GeneratorParams::validate() const {
  if (n_states < 1 || n_actions < 1) throw ValidationError("n_states and n_actions must be >= 1");
  if (branching < 1 || branching > n_states) throw ValidationError("branching must lie in [1, n_states]");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in (0, 1)");
  if (d < 1 || d > n_states) throw ValidationError("feature dimension d must lie in [1, n_states]");
  if (n < 1) throw ValidationError("n must be >= 1");
  if (!(eps_cov > 0.0 && eps_cov * static_cast<double>(n_actions) <= 1.0))
    throw ValidationError("eps_cov must lie in (0, 1/|A|]");
  if (!(eps_erg > 0.0 && eps_erg <= 1.0)) throw ValidationError("eps_erg must lie in (0, 1]");
  if (n_behaviors < 1) throw ValidationError("n_behaviors must be >= 1");
  if (!(heterogeneity >= 0.0 && heterogeneity <= 1.0)) throw ValidationError("heterogeneity must lie in [0, 1]");
}

Json to_json(const GeneratorParams& p) {
  return Json{{"n_states", p.n_states}, {"n_actions", p.n_actions}, {"branching", p.branching},
              {"gamma", p.gamma},       {"d", p.d},                 {"n", p.n},
              {"eps_cov", p.eps_cov},   {"eps_erg", p.eps_erg},     {"n_behaviors", p.n_behaviors},
              {"heterogeneity", p.heterogeneity}};
}

GeneratorParams generator_params_from_json(const Json& j) {
  GeneratorParams p;
  p.n_states = j.value("n_states", p.n_states);
  p.n_actions = j.value("n_actions", p.n_actions);
  p.branching = j.value("branching", p.branching);
  p.gamma = j.value("gamma", p.gamma);
  p.d = j.value("d", p.d);
  p.n = j.value("n", p.n);
  p.eps_cov = j.value("eps_cov", p.eps_cov);
  p.eps_erg = j.value("eps_erg", p.eps_erg);
  p.n_behaviors = j.value("n_behaviors", p.n_behaviors);
  p.heterogeneity = j.value("heterogeneity", p.heterogeneity);
  return p;
}

Environment generate_environment(const GeneratorParams& params, std::uint64_t seed, bool with_features) {
  params.validate();
  const std::size_t ns = params.n_states;
  const std::size_t na = params.n_actions;
  CounterRng rng(derive_key(seed, {kGeneratorStream}));

  std::vector<double> transition(ns * na * ns, 0.0);
  std::vector<std::size_t> order(ns);
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t a = 0; a < na; ++a) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      // Partial Fisher-Yates picks `branching` distinct successors.
      for (std::size_t k = 0; k < params.branching; ++k) {
        const std::size_t j = k + static_cast<std::size_t>(rng.uniform() * static_cast<double>(ns - k));
        std::swap(order[k], order[std::min(j, ns - 1)]);
      }
      std::vector<double> cuts(params.branching - 1);
      for (double& c : cuts) c = rng.uniform();
      std::sort(cuts.begin(), cuts.end());
      double* row = transition.data() + (s * na + a) * ns;
      double prev = 0.0;
      for (std::size_t k = 0; k < params.branching; ++k) {
        const double next = k + 1 < params.branching ? cuts[k] : 1.0;
        row[order[k]] += (1.0 - params.eps_erg) * (next - prev);
        prev = next;
      }
      double sum = 0.0;
      for (std::size_t s1 = 0; s1 < ns; ++s1) sum += (row[s1] += params.eps_erg / static_cast<double>(ns));
      for (std::size_t s1 = 0; s1 < ns; ++s1) row[s1] /= sum;
    }

  RowMatrix reward(ns, na);
  for (Eigen::Index k = 0; k < reward.size(); ++k) reward.data()[k] = rng.uniform();

  const RowMatrix target = random_policy(ns, na, rng);
  std::vector<Policy> behaviors;
  for (std::size_t b = 0; b < params.n_behaviors; ++b) {
    RowMatrix base = target;
    if (params.heterogeneity > 0.0)
      base = (1.0 - params.heterogeneity) * target + params.heterogeneity * random_policy(ns, na, rng);
    behaviors.emplace_back(with_coverage(base, params.eps_cov));
  }

  Environment env{Mdp(ns, na, std::move(transition), std::move(reward), params.gamma), Policy(target),
                  std::move(behaviors), std::nullopt};
  if (!with_features) return env;
  for (int attempt = 0; attempt < 5; ++attempt) {
    Matrix g(ns, params.d);
    for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = standard_normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(ns, params.d);
    try {
      env.features.emplace(std::move(q));
      return env;
    } catch (const ValidationError&) {
    }
  }
  throw GenerationError("feature matrix is rank deficient after 5 draws");
}

InstancePtr instance_from_environment(AlgorithmKind kind, const Environment& env, std::size_t n) {
  std::vector<Policy> behaviors = kind == AlgorithmKind::on_policy_td_lfa ? std::vector<Policy>{} : env.behaviors;
  std::optional<FeatureMatrix> features;
  if (kind == AlgorithmKind::on_policy_td_lfa) {
    if (!env.features) throw ValidationError("environment has no features for LFA");
    features = env.features;
  }
  return make_instance(kind, env.mdp, env.target, std::move(behaviors), std::move(features),
                       kind == AlgorithmKind::q_learning ? 1 : n);
}

InstancePtr generate_instance(AlgorithmKind kind, const GeneratorParams& params, std::uint64_t seed) {
  const Environment env = generate_environment(params, seed, kind == AlgorithmKind::on_policy_td_lfa);
  return instance_from_environment(kind, env, params.n);
}

Json to_json(const Environment& env) {
  Json behaviors = Json::array();
  for (const Policy& b : env.behaviors) behaviors.push_back(to_json(b));
  Json j{{"mdp", to_json(env.mdp)}, {"target", to_json(env.target)}, {"behaviors", std::move(behaviors)}};
  if (env.features) j["features"] = to_json(*env.features);
  return j;
}

Environment environment_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("mdp") || !j.contains("target"))
    throw ValidationError("environment file needs 'mdp' and 'target'");
  Environment env{mdp_from_json(j.at("mdp")), policy_from_json(j.at("target")), {}, std::nullopt};
  if (j.contains("behaviors"))
    for (const Json& b : j.at("behaviors")) env.behaviors.push_back(policy_from_json(b));
  if (j.contains("features")) env.features.emplace(features_from_json(j.at("features")));
  return env;
}

}  // namespace fedsam
