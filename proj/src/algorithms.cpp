#include "fedsam/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "fedsam/error.hpp"

namespace fedsam {
namespace {

Matrix matrix_power(const Matrix& p, std::size_t n) {
  Matrix out = Matrix::Identity(p.rows(), p.cols());
  for (std::size_t k = 0; k < n; ++k) out = out * p;
  return out;
}

double max_entry(const RowMatrix& q, int s) { return q.row(s).maxCoeff(); }

// max_a (x + q)(s, a) over the flattened table x.
double shifted_max(const Eigen::Ref<const Vector>& x, const RowMatrix& q, int s) {
  const Eigen::Index na = q.cols();
  double best = x(s * na) + q(s, 0);
  for (Eigen::Index a = 1; a < na; ++a) best = std::max(best, x(s * na + a) + q(s, a));
  return best;
}

class ChainNoise final : public NoiseProcess {
 public:
  ChainNoise(InstancePtr instance, std::size_t agent, CounterRng rng)
      : instance_(std::move(instance)),
        chain_(instance_->mdp, instance_->behavior_for(agent), instance_->xi, instance_->n, agent, rng) {}

  NoiseView current() const override { return {chain_.states(), chain_.actions(), 0.0}; }
  void advance() override { chain_.advance(); }

 private:
  InstancePtr instance_;
  AgentChain chain_;
};

// sum_l gamma^l prod_{j<=l} ratio(S_j, A_j) (R_l + gamma x(S_{l+1}) - x(S_l)) with
// x(s) = base(s) + shift(s).
template <class Base, class Shift>
double weighted_td_sum(const Mdp& mdp, const RowMatrix& ratio, const NoiseView& y, std::size_t n,
                       const Base& base, const Shift& shift, bool with_reward) {
  const double gamma = mdp.gamma();
  double acc = 0.0;
  double discount = 1.0;
  double weight = 1.0;
  for (std::size_t l = 0; l < n; ++l) {
    const int s = y.states[l];
    const int a = y.actions[l];
    const int s1 = y.states[l + 1];
    weight *= ratio(s, a);
    const double r = with_reward ? mdp.reward(s, a) : 0.0;
    acc += discount * weight * (r + gamma * (base(s1) + shift(s1)) - (base(s) + shift(s)));
    discount *= gamma;
  }
  return acc;
}

// sum_l gamma^l (R_l + gamma phi(S_{l+1})'x - phi(S_l)'x) given fx(s) = phi(s)'x.
template <class Fx>
double lfa_td_sum(const Mdp& mdp, const NoiseView& y, std::size_t n, const Fx& fx, bool with_reward) {
  const double gamma = mdp.gamma();
  double acc = 0.0;
  double discount = 1.0;
  for (std::size_t l = 0; l < n; ++l) {
    const int s = y.states[l];
    const int s1 = y.states[l + 1];
    const double r = with_reward ? mdp.reward(s, y.actions[l]) : 0.0;
    acc += discount * (r + gamma * fx(s1) - fx(s));
    discount *= gamma;
  }
  return acc;
}

void require_window(std::span<const int> states, std::span<const int> actions, std::size_t n) {
  if (states.size() < n + 1 || actions.size() < n) throw ShapeError("window shorter than n transitions");
}

}  // namespace

const char* to_string(AlgorithmKind kind) {
  switch (kind) {
    case AlgorithmKind::on_policy_td_lfa: return "on_policy_td_lfa";
    case AlgorithmKind::off_policy_td_tabular: return "off_policy_td_tabular";
    case AlgorithmKind::q_learning: return "q_learning";
  }
  return "unknown";
}

AlgorithmKind algorithm_kind_from_string(const std::string& name) {
  if (name == "on_policy_td_lfa") return AlgorithmKind::on_policy_td_lfa;
  if (name == "off_policy_td_tabular") return AlgorithmKind::off_policy_td_tabular;
  if (name == "q_learning") return AlgorithmKind::q_learning;
  throw ValidationError("unknown algorithm kind '" + name +
                        "' (expected on_policy_td_lfa, off_policy_td_tabular or q_learning)");
}

std::size_t AlgorithmInstance::dim() const {
  switch (kind) {
    case AlgorithmKind::on_policy_td_lfa: return features ? features->dim() : 0;
    case AlgorithmKind::off_policy_td_tabular: return mdp.n_states();
    case AlgorithmKind::q_learning: return mdp.n_states() * mdp.n_actions();
  }
  return 0;
}

InstancePtr make_instance(AlgorithmKind kind, Mdp mdp, Policy target, std::vector<Policy> behaviors,
                          std::optional<FeatureMatrix> features, std::size_t n, std::vector<double> xi) {
  auto inst = std::make_shared<AlgorithmInstance>(kind, std::move(mdp), std::move(target));
  const Mdp& m = inst->mdp;
  check_compatible(m, inst->target);
  if (n == 0) throw ParameterError("step count n must be >= 1");
  if (kind == AlgorithmKind::q_learning && n != 1) throw ParameterError("Q-learning uses n = 1");
  inst->n = n;

  if (kind == AlgorithmKind::on_policy_td_lfa) {
    for (const Policy& b : behaviors)
      if (b.table() != inst->target.table())
        throw ValidationError("on-policy TD samples with the target policy; behavior policies must equal it");
    behaviors = {inst->target};
    if (!features) throw ValidationError("linear function approximation needs a feature matrix");
    if (features->n_states() != m.n_states()) throw ShapeError("feature rows must equal |S|");
  } else if (behaviors.empty()) {
    behaviors = {inst->target};
  }
  for (const Policy& b : behaviors) check_compatible(m, b);
  inst->behaviors = std::move(behaviors);
  inst->features = std::move(features);

  if (xi.empty()) xi = uniform_distribution(m.n_states());
  check_distribution(xi, m.n_states());
  inst->xi = std::move(xi);

  for (const Policy& b : inst->behaviors) {
    inst->p_behavior.push_back(policy_transition_matrix(m, b));
    inst->mu_behavior.push_back(stationary_distribution(inst->p_behavior.back()));
  }

  if (kind == AlgorithmKind::q_learning) {
    inst->q_star = q_star_oracle(m);
    inst->fixed_point = flatten(inst->q_star);
    return inst;
  }

  inst->p_target = policy_transition_matrix(m, inst->target);
  inst->v_pi = value_function_oracle(m, inst->target);
  for (const Policy& b : inst->behaviors) {
    RowMatrix ratio(m.n_states(), m.n_actions());
    for (std::size_t s = 0; s < m.n_states(); ++s)
      for (std::size_t a = 0; a < m.n_actions(); ++a) ratio(s, a) = importance_ratio(inst->target, b, s, a);
    inst->ratio.push_back(std::move(ratio));
  }

  const Matrix pn = matrix_power(inst->p_target, n);
  const double gn = std::pow(m.gamma(), static_cast<double>(n));
  const Eigen::Index ns = static_cast<Eigen::Index>(m.n_states());
  const Matrix drift = gn * pn - Matrix::Identity(ns, ns);

  if (kind == AlgorithmKind::off_policy_td_tabular) {
    inst->fixed_point = inst->v_pi;
    for (const Vector& mu : inst->mu_behavior)
      inst->gbar.push_back(Matrix::Identity(ns, ns) + mu.asDiagonal() * drift);
    return inst;
  }

  inst->mu_target = inst->mu_behavior.front();
  inst->fixed_point = projected_fixed_point_oracle(m, inst->target, *inst->features, n);
  inst->beta = select_beta(*inst);
  const Matrix& phi = inst->features->matrix();
  const Eigen::Index d = phi.cols();
  inst->gbar.push_back(Matrix::Identity(d, d) +
                       (phi.transpose() * inst->mu_target.asDiagonal() * drift * phi) / inst->beta);
  return inst;
}

Vector onpolicy_td_update(const Vector& v, std::span<const int> states, std::span<const int> actions,
                          const FeatureMatrix& features, const Mdp& mdp, std::size_t n, double alpha) {
  require_window(states, actions, n);
  if (static_cast<std::size_t>(v.size()) != features.dim()) throw ShapeError("parameter length must equal d");
  if (features.n_states() != mdp.n_states()) throw ShapeError("feature rows must equal |S|");
  const NoiseView y{states, actions, 0.0};
  const double sum = lfa_td_sum(mdp, y, n, [&](int s) { return features.row(s).dot(v); }, true);
  return v + alpha * sum * features.row(states[0]).transpose();
}

Vector offpolicy_td_update(const Vector& v, std::span<const int> states, std::span<const int> actions,
                           const Policy& target, const Policy& behavior, const Mdp& mdp, std::size_t n,
                           double alpha) {
  require_window(states, actions, n);
  if (static_cast<std::size_t>(v.size()) != mdp.n_states()) throw ShapeError("value table must have |S| entries");
  RowMatrix ratio(mdp.n_states(), mdp.n_actions());
  ratio.setZero();
  for (std::size_t l = 0; l < n; ++l)
    ratio(states[l], actions[l]) = importance_ratio(target, behavior, states[l], actions[l]);
  const NoiseView y{states, actions, 0.0};
  Vector out = v;
  out(states[0]) += alpha * weighted_td_sum(mdp, ratio, y, n, [&](int s) { return v(s); },
                                            [](int) { return 0.0; }, true);
  return out;
}

RowMatrix q_learning_update(const RowMatrix& q, const Transition& tr, const Mdp& mdp, double alpha) {
  if (static_cast<std::size_t>(q.rows()) != mdp.n_states() || static_cast<std::size_t>(q.cols()) != mdp.n_actions())
    throw ShapeError("Q table must be |S| x |A|");
  RowMatrix out = q;
  out(tr.state, tr.action) +=
      alpha * (mdp.reward(tr.state, tr.action) + mdp.gamma() * max_entry(q, tr.next_state) - q(tr.state, tr.action));
  return out;
}

LocalRule raw_rule(const InstancePtr& instance) {
  const InstancePtr inst = instance;
  switch (inst->kind) {
    case AlgorithmKind::on_policy_td_lfa:
      return [inst](std::size_t, Eigen::Ref<Vector> x, const NoiseView& y, double step) {
        const Matrix& phi = inst->features->matrix();
        const double sum = lfa_td_sum(inst->mdp, y, inst->n, [&](int s) { return phi.row(s).dot(x); }, true);
        x += (step * sum) * phi.row(y.states[0]).transpose();
      };
    case AlgorithmKind::off_policy_td_tabular:
      return [inst](std::size_t agent, Eigen::Ref<Vector> x, const NoiseView& y, double step) {
        const RowMatrix& ratio = inst->ratio[inst->behavior_index(agent)];
        x(y.states[0]) += step * weighted_td_sum(inst->mdp, ratio, y, inst->n, [&](int s) { return x(s); },
                                                 [](int) { return 0.0; }, true);
      };
    case AlgorithmKind::q_learning:
      return [inst](std::size_t, Eigen::Ref<Vector> x, const NoiseView& y, double step) {
        const Mdp& m = inst->mdp;
        const Eigen::Index na = static_cast<Eigen::Index>(m.n_actions());
        const int s = y.states[0], a = y.actions[0], s1 = y.states[1];
        double best = x(s1 * na);
        for (Eigen::Index b = 1; b < na; ++b) best = std::max(best, x(s1 * na + b));
        x(s * na + a) += step * (m.reward(s, a) + m.gamma() * best - x(s * na + a));
      };
  }
  throw ValidationError("unknown algorithm kind");
}

NoiseFactory chain_noise_factory(const InstancePtr& instance) {
  const InstancePtr inst = instance;
  return [inst](std::size_t agent, CounterRng rng) -> std::unique_ptr<NoiseProcess> {
    return std::make_unique<ChainNoise>(inst, agent, rng);
  };
}

FedSamProblem build_problem(const InstancePtr& instance) {
  const InstancePtr inst = instance;
  const std::size_t dim = inst->dim();
  if (dim == 0 || static_cast<std::size_t>(inst->fixed_point.size()) != dim)
    throw PreconditionError("instance has no oracle fixed point");

  FedSamProblem p;
  p.dim = dim;
  p.norm_kind = inst->norm_kind();
  p.theta0 = -inst->fixed_point;
  p.make_noise = chain_noise_factory(inst);
  p.expected_G = [inst](std::size_t agent, const Vector& theta) { return expected_operator(*inst, agent, theta); };

  switch (inst->kind) {
    case AlgorithmKind::on_policy_td_lfa: {
      const Vector fv = inst->features->matrix() * inst->fixed_point;
      const double inv_beta = 1.0 / inst->beta;
      p.step_scale = inst->beta;
      p.apply_G = [inst, inv_beta](std::size_t, const Vector& theta, const NoiseView& y) {
        const Matrix& phi = inst->features->matrix();
        const double w = lfa_td_sum(inst->mdp, y, inst->n, [&](int s) { return phi.row(s).dot(theta); }, false);
        return Vector(theta + (inv_beta * w) * phi.row(y.states[0]).transpose());
      };
      p.apply_b = [inst, inv_beta, fv](std::size_t, const NoiseView& y) {
        const Matrix& phi = inst->features->matrix();
        const double w = lfa_td_sum(inst->mdp, y, inst->n, [&](int s) { return fv(s); }, true);
        return Vector((inv_beta * w) * phi.row(y.states[0]).transpose());
      };
      p.fast_step = [inst, inv_beta, fv](std::size_t, Eigen::Ref<Vector> x, const NoiseView& y, double step) {
        const Matrix& phi = inst->features->matrix();
        const double w =
            lfa_td_sum(inst->mdp, y, inst->n, [&](int s) { return phi.row(s).dot(x) + fv(s); }, true);
        x += (step * inv_beta * w) * phi.row(y.states[0]).transpose();
      };
      break;
    }
    case AlgorithmKind::off_policy_td_tabular: {
      p.apply_G = [inst](std::size_t agent, const Vector& theta, const NoiseView& y) {
        const RowMatrix& ratio = inst->ratio[inst->behavior_index(agent)];
        Vector out = theta;
        out(y.states[0]) += weighted_td_sum(inst->mdp, ratio, y, inst->n, [&](int s) { return theta(s); },
                                            [](int) { return 0.0; }, false);
        return out;
      };
      p.apply_b = [inst](std::size_t agent, const NoiseView& y) {
        const RowMatrix& ratio = inst->ratio[inst->behavior_index(agent)];
        const Vector& v = inst->fixed_point;
        Vector out = Vector::Zero(static_cast<Eigen::Index>(inst->dim()));
        out(y.states[0]) = weighted_td_sum(inst->mdp, ratio, y, inst->n, [&](int s) { return v(s); },
                                           [](int) { return 0.0; }, true);
        return out;
      };
      p.fast_step = [inst](std::size_t agent, Eigen::Ref<Vector> x, const NoiseView& y, double step) {
        const RowMatrix& ratio = inst->ratio[inst->behavior_index(agent)];
        const Vector& v = inst->fixed_point;
        x(y.states[0]) += step * weighted_td_sum(inst->mdp, ratio, y, inst->n, [&](int s) { return x(s); },
                                                 [&](int s) { return v(s); }, true);
      };
      break;
    }
    case AlgorithmKind::q_learning: {
      p.apply_G = [inst](std::size_t, const Vector& theta, const NoiseView& y) {
        const Mdp& m = inst->mdp;
        const Eigen::Index na = static_cast<Eigen::Index>(m.n_actions());
        const int s = y.states[0], a = y.actions[0], s1 = y.states[1];
        const Eigen::Index idx = s * na + a;
        Vector out = theta;
        out(idx) = theta(idx) + (m.gamma() * shifted_max(theta, inst->q_star, s1) - theta(idx) -
                                 m.gamma() * max_entry(inst->q_star, s1));
        return out;
      };
      p.apply_b = [inst](std::size_t, const NoiseView& y) {
        const Mdp& m = inst->mdp;
        const Eigen::Index na = static_cast<Eigen::Index>(m.n_actions());
        const int s = y.states[0], a = y.actions[0], s1 = y.states[1];
        Vector out = Vector::Zero(static_cast<Eigen::Index>(inst->dim()));
        out(s * na + a) = m.reward(s, a) + m.gamma() * max_entry(inst->q_star, s1) - inst->q_star(s, a);
        return out;
      };
      p.fast_step = [inst](std::size_t, Eigen::Ref<Vector> x, const NoiseView& y, double step) {
        const Mdp& m = inst->mdp;
        const Eigen::Index na = static_cast<Eigen::Index>(m.n_actions());
        const int s = y.states[0], a = y.actions[0], s1 = y.states[1];
        const Eigen::Index idx = s * na + a;
        x(idx) += step * (m.reward(s, a) + m.gamma() * shifted_max(x, inst->q_star, s1) -
                          (x(idx) + inst->q_star(s, a)));
      };
      break;
    }
  }
  register_problem(p, 0, std::min<std::size_t>(inst->behaviors.size(), 8));
  return p;
}

Matrix expected_operator_matrix(const AlgorithmInstance& instance, std::size_t agent) {
  if (instance.kind == AlgorithmKind::q_learning) throw ValidationError("Q-learning expected operator is not linear");
  if (instance.gbar.empty()) throw PreconditionError("instance has no expected-operator cache");
  return instance.gbar[instance.kind == AlgorithmKind::on_policy_td_lfa ? 0 : instance.behavior_index(agent)];
}

Vector expected_operator(const AlgorithmInstance& instance, std::size_t agent, const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != instance.dim()) throw ShapeError("theta has the wrong length");
  if (instance.kind != AlgorithmKind::q_learning) {
    const std::size_t k = instance.kind == AlgorithmKind::on_policy_td_lfa ? 0 : instance.behavior_index(agent);
    return instance.gbar[k] * theta;
  }
  const Mdp& m = instance.mdp;
  const std::size_t b = instance.behavior_index(agent);
  const Policy& pi = instance.behaviors[b];
  const Vector& mu = instance.mu_behavior[b];
  const std::size_t na = m.n_actions();
  Vector next_term(static_cast<Eigen::Index>(m.n_states()));
  for (std::size_t s1 = 0; s1 < m.n_states(); ++s1)
    next_term(s1) = m.gamma() * shifted_max(theta, instance.q_star, static_cast<int>(s1)) -
                    m.gamma() * max_entry(instance.q_star, static_cast<int>(s1));
  Vector out = theta;
  for (std::size_t s = 0; s < m.n_states(); ++s)
    for (std::size_t a = 0; a < na; ++a) {
      const double weight = mu(s) * pi.prob(s, a);
      if (weight == 0.0) continue;
      const auto row = m.next_state_distribution(s, a);
      double expected = 0.0;
      for (std::size_t s1 = 0; s1 < m.n_states(); ++s1) expected += row[s1] * next_term(s1);
      out(s * na + a) += weight * (expected - theta(s * na + a));
    }
  return out;
}

double rate_constant_from_contraction(double gamma_c) {
  if (!(gamma_c > 0.0 && gamma_c < 1.0)) throw ParameterError("contraction factor must lie in (0, 1)");
  const double ratio = (1.0 + gamma_c) / (2.0 * gamma_c);
  return 1.0 - 0.5 * (1.0 + gamma_c) * std::exp(0.25) / std::sqrt(std::sqrt(std::numbers::e) - 1.0 + ratio * ratio);
}

double off_policy_td_gamma_c(double mu_min, double gamma, std::size_t n) {
  return 1.0 - mu_min * (1.0 - std::pow(gamma, static_cast<double>(n + 1)));
}

double q_learning_gamma_c(double mu_min, double gamma) { return 1.0 - (1.0 - gamma) * mu_min; }

double ratio_geometric_sum(double gamma, double imax, std::size_t n) {
  const double g = gamma * imax;
  if (g == 1.0) return static_cast<double>(n);
  return (1.0 - std::pow(g, static_cast<double>(n))) / (1.0 - g);
}

double lfa_spectral_radius(const AlgorithmInstance& instance, double beta) {
  if (!instance.features) throw PreconditionError("spectral radius needs features");
  const Matrix& phi = instance.features->matrix();
  const Eigen::Index ns = phi.rows();
  const Matrix pn = matrix_power(instance.p_target, instance.n);
  const double gn = std::pow(instance.mdp.gamma(), static_cast<double>(instance.n));
  const Matrix drift = phi.transpose() * instance.mu_target.asDiagonal() * (gn * pn - Matrix::Identity(ns, ns)) * phi;
  const Matrix m = Matrix::Identity(drift.rows(), drift.cols()) + drift / beta;
  Eigen::EigenSolver<Matrix> solver(m, false);
  if (solver.info() != Eigen::Success) throw NumericError("eigenvalue computation failed");
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

double select_beta(const AlgorithmInstance& instance, double margin) {
  for (int k = -30; k <= 30; ++k) {
    const double beta = std::ldexp(1.0, k);
    if (lfa_spectral_radius(instance, beta) <= 1.0 - margin) return beta;
  }
  throw PreconditionError("no beta = 2^k with k in [-30, 30] gives spectral radius <= 1 - margin");
}

bool for_each_window(const Mdp& mdp, const Policy& behavior, const Vector& start, std::size_t n,
                     const std::function<void(std::span<const int>, std::span<const int>, double)>& fn,
                     std::size_t max_windows) {
  std::vector<int> states(n + 1);
  std::vector<int> actions(n);
  std::size_t count = 0;
  bool overflow = false;

  std::function<void(std::size_t, double, bool)> walk = [&](std::size_t depth, double prob, bool emit) {
    if (overflow) return;
    if (depth == n) {
      if (emit)
        fn(states, actions, prob);
      else if (++count > max_windows)
        overflow = true;
      return;
    }
    const int s = states[depth];
    for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
      const double pa = behavior.prob(s, a);
      if (pa == 0.0) continue;
      const auto row = mdp.next_state_distribution(s, a);
      for (std::size_t s1 = 0; s1 < mdp.n_states(); ++s1) {
        if (row[s1] == 0.0) continue;
        actions[depth] = static_cast<int>(a);
        states[depth + 1] = static_cast<int>(s1);
        walk(depth + 1, prob * pa * row[s1], emit);
      }
    }
  };

  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index s0 = 0; s0 < start.size(); ++s0) {
      if (start(s0) == 0.0) continue;
      states[0] = static_cast<int>(s0);
      walk(0, start(s0), pass == 1);
      if (overflow) return false;
    }
  }
  return true;
}

TheoryConstants theory_constants(const AlgorithmInstance& instance) {
  const Mdp& m = instance.mdp;
  const double gamma = m.gamma();
  TheoryConstants c;
  c.beta = instance.beta;

  switch (instance.kind) {
    case AlgorithmKind::off_policy_td_tabular: {
      c.mu_min = 1.0;
      for (const Vector& mu : instance.mu_behavior) c.mu_min = std::min(c.mu_min, mu.minCoeff());
      if (!(c.mu_min > 0.0)) throw ErgodicityError("minimum stationary mass is not positive");
      c.gamma_c = off_policy_td_gamma_c(c.mu_min, gamma, instance.n);
      c.imax = 0.0;
      for (const RowMatrix& r : instance.ratio) c.imax = std::max(c.imax, r.maxCoeff());
      const double sum = ratio_geometric_sum(gamma, c.imax, instance.n);
      c.A1 = c.A2 = 1.0 + (1.0 + gamma) * sum;
      c.B = 2.0 * c.imax / (1.0 - gamma) * sum;
      c.phi = rate_constant_from_contraction(c.gamma_c);
      // gbar entries are non-negative, so the sup-norm operator norm is the max row sum.
      for (const Matrix& g : instance.gbar) c.gamma_c_operator = std::max(c.gamma_c_operator, g.rowwise().sum().maxCoeff());
      break;
    }
    case AlgorithmKind::q_learning: {
      c.mu_min = 1.0;
      for (std::size_t b = 0; b < instance.behaviors.size(); ++b)
        for (std::size_t s = 0; s < m.n_states(); ++s)
          for (std::size_t a = 0; a < m.n_actions(); ++a)
            c.mu_min = std::min(c.mu_min, instance.mu_behavior[b](s) * instance.behaviors[b].prob(s, a));
      if (!(c.mu_min > 0.0)) throw ErgodicityError("minimum state-action stationary mass is not positive");
      c.gamma_c = q_learning_gamma_c(c.mu_min, gamma);
      c.A1 = c.A2 = 2.0;
      c.B = 2.0 / (1.0 - gamma);
      c.phi = rate_constant_from_contraction(c.gamma_c);
      c.gamma_c_operator = c.gamma_c;
      break;
    }
    case AlgorithmKind::on_policy_td_lfa: {
      c.mu_min = instance.mu_target.minCoeff();
      if (!(c.mu_min > 0.0)) throw ErgodicityError("minimum stationary mass is not positive");
      c.gamma_c = lfa_spectral_radius(instance, instance.beta);
      c.gamma_c_operator = c.gamma_c;
      c.phi = 1.0 - c.gamma_c;
      c.imax = 1.0;
      const Matrix& phi = instance.features->matrix();
      const Vector fv = phi * instance.fixed_point;
      const Eigen::Index d = phi.cols();
      const double inv_beta = 1.0 / instance.beta;
      const Vector ones = Vector::Constant(static_cast<Eigen::Index>(m.n_states()), 1.0);
      auto visit = [&](std::span<const int> states, std::span<const int> actions, double) {
        const NoiseView y{states, actions, 0.0};
        Vector w = Vector::Zero(d);
        double discount = 1.0;
        for (std::size_t l = 0; l < instance.n; ++l) {
          w += discount * (gamma * phi.row(states[l + 1]) - phi.row(states[l])).transpose();
          discount *= gamma;
        }
        const Matrix lin = Matrix::Identity(d, d) + inv_beta * phi.row(states[0]).transpose() * w.transpose();
        c.A1 = std::max(c.A1, Eigen::JacobiSVD<Matrix>(lin).singularValues()(0));
        const double bw = lfa_td_sum(m, y, instance.n, [&](int s) { return fv(s); }, true);
        c.B = std::max(c.B, std::abs(inv_beta * bw) * phi.row(states[0]).norm());
      };
      if (!for_each_window(m, instance.target, ones, instance.n, visit)) {
        // Too many windows to enumerate: fall back to sampling the chain.
        AgentChain chain(m, instance.target, instance.xi, instance.n, 0, CounterRng(derive_key(0, {0x1fa})));
        for (int k = 0; k < 200'000; ++k, chain.advance()) visit(chain.states(), chain.actions(), 0.0);
      }
      c.A2 = c.A1;
      break;
    }
  }
  return c;
}

}  // namespace fedsam
