#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedrep/mdp.hpp"
#include "fedrep/representation.hpp"
#include "fedrep/rng.hpp"

namespace fedrep {

// delta = r + gamma phi(s') theta - phi(s) theta, the bootstrapped residual
// driving both update maps.
inline double td_error(const Matrix& phi, const Vector& theta,
                       const Observation& obs, double gamma) {
  return obs.reward + gamma * phi.row(obs.next_state).dot(theta) -
         phi.row(obs.state).dot(theta);
}

// Fast map: g = delta * phi(s). Equals the negative gradient of the
// half-squared TD loss in theta when the bootstrapped target is treated as a
// constant.
inline Vector grad_g(const Matrix& phi, const Vector& theta,
                     const Observation& obs, double gamma) {
  return td_error(phi, theta, obs, gamma) * phi.row(obs.state).transpose();
}

// Slow map: the only nonzero row of the feature gradient. Row obs.state
// receives delta * theta; every other row's gradient vanishes because the
// target (which holds phi(s')) is frozen.
struct RowGradient {
  int state = 0;
  Vector values;
};

inline RowGradient grad_h(const Matrix& phi, const Vector& theta,
                          const Observation& obs, double gamma) {
  return {obs.state, td_error(phi, theta, obs, gamma) * theta};
}

struct LocalHyperparams {
  int K = 1;
  double alpha = 0.0;
  double beta = 0.0;
  double epsilon_greedy = 0.1;  // Q sampling only
};

struct TdRoundResult {
  Vector theta;
  std::vector<Observation> observations;
  std::vector<double> td_errors;  // fast-loop residuals, one per step
  int chain_state = 0;
};

// K semi-gradient steps along one Markovian trajectory, then a single norm
// clip. The chain state persists across rounds: the k=K state returned here
// is the k=0 state of the next round.
inline TdRoundResult weight_update(const Matrix& phi, Vector theta,
                                   const Mdp& mdp, const Policy& pi,
                                   int chain_state,
                                   const LocalHyperparams& hyper, double B,
                                   RandomStream& rng) {
  if (hyper.K < 1) throw std::invalid_argument("weight_update: K must be >= 1");
  TdRoundResult out;
  out.observations.reserve(hyper.K);
  out.td_errors.reserve(hyper.K);
  for (int k = 0; k < hyper.K; ++k) {
    const Observation obs = sample_step(mdp, pi, chain_state, rng);
    const double delta = td_error(phi, theta, obs, mdp.gamma);
    theta += hyper.alpha * delta * phi.row(obs.state).transpose();
    chain_state = obs.next_state;
    out.observations.push_back(obs);
    out.td_errors.push_back(delta);
  }
  out.theta = clip_weights(std::move(theta), B);
  out.chain_state = chain_state;
  return out;
}

// Whether the K per-sample slow-map terms are summed (default; the update is
// beta * sum_k h) or averaged (beta * mean_k h).
enum class SlowAggregation { Sum, Mean };

// One slow step on the features: replay the round's observations, recompute
// every TD error with the post-round weights against the unchanged phi, add
// the row updates, then renormalize.
inline Matrix feature_update(const Matrix& phi, const Vector& theta_new,
                             std::span<const Observation> observations,
                             double beta, double gamma,
                             SlowAggregation agg = SlowAggregation::Sum,
                             FeatureProjection proj = FeatureProjection::RowUnitBall) {
  if (observations.empty())
    throw std::invalid_argument("feature_update: no observations");
  Matrix out = phi;
  const double scale =
      agg == SlowAggregation::Mean
          ? beta / static_cast<double>(observations.size())
          : beta;
  for (const Observation& obs : observations) {
    const double delta = td_error(phi, theta_new, obs, gamma);
    out.row(obs.state) += scale * delta * theta_new.transpose();
  }
  project_rows_in_place(out, proj);
  return out;
}

// ---- Q-learning variant (state-action features, row index s*|A| + a) ----

inline int sa_row(int state, int action, int n_actions) {
  return state * n_actions + action;
}

// Greedy action under Q(s,a) = phi_sa(s,a) . theta; ties break to the lowest
// action index.
inline int greedy_action(const Matrix& phi_sa, const Vector& theta, int state,
                         int n_actions) {
  int best = 0;
  double best_q = phi_sa.row(sa_row(state, 0, n_actions)).dot(theta);
  for (int a = 1; a < n_actions; ++a) {
    const double q = phi_sa.row(sa_row(state, a, n_actions)).dot(theta);
    if (q > best_q) {
      best_q = q;
      best = a;
    }
  }
  return best;
}

// Residual with the max-bootstrap target.
inline double q_td_error(const Matrix& phi_sa, const Vector& theta,
                         const Observation& obs, double gamma, int n_actions) {
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < n_actions; ++a)
    best = std::max(best,
                    phi_sa.row(sa_row(obs.next_state, a, n_actions)).dot(theta));
  return obs.reward + gamma * best -
         phi_sa.row(sa_row(obs.state, obs.action, n_actions)).dot(theta);
}

// K Q-learning steps along an epsilon-greedy trajectory. One uniform draw
// decides exploration and, by rescaling the same draw, which exploratory
// action is taken; this keeps the per-step draw count at exactly two, the
// same as the TD sampler, so a single-action MDP reproduces the TD iterate
// trajectory bit for bit.
inline TdRoundResult q_weight_update(const Matrix& phi_sa, Vector theta,
                                     const Mdp& mdp, int chain_state,
                                     const LocalHyperparams& hyper, double B,
                                     RandomStream& rng) {
  if (hyper.K < 1)
    throw std::invalid_argument("q_weight_update: K must be >= 1");
  const int n_a = mdp.n_actions();
  const int n_s = mdp.n_states();
  TdRoundResult out;
  out.observations.reserve(hyper.K);
  out.td_errors.reserve(hyper.K);
  for (int k = 0; k < hyper.K; ++k) {
    const double u = rng.uniform();
    int a;
    if (u < hyper.epsilon_greedy) {
      a = std::min(n_a - 1,
                   static_cast<int>(u / hyper.epsilon_greedy * n_a));
    } else {
      a = greedy_action(phi_sa, theta, chain_state, n_a);
    }
    double v = rng.uniform();
    int s2 = n_s - 1;
    double c = 0.0;
    const auto row = mdp.kernel[a].row(chain_state);
    for (int i = 0; i + 1 < n_s; ++i) {
      c += row(i);
      if (v < c) { s2 = i; break; }
    }
    const Observation obs{chain_state, a, mdp.reward(chain_state, a), s2};
    const double delta = q_td_error(phi_sa, theta, obs, mdp.gamma, n_a);
    theta += hyper.alpha * delta *
             phi_sa.row(sa_row(obs.state, obs.action, n_a)).transpose();
    chain_state = s2;
    out.observations.push_back(obs);
    out.td_errors.push_back(delta);
  }
  out.theta = clip_weights(std::move(theta), B);
  out.chain_state = chain_state;
  return out;
}

// Slow step for the Q variant: only rows actually visited during the round
// are updated, everything else is carried over unchanged.
inline Matrix q_feature_update(const Matrix& phi_sa, const Vector& theta_new,
                               std::span<const Observation> observations,
                               double beta, double gamma, int n_actions,
                               SlowAggregation agg = SlowAggregation::Sum,
                               FeatureProjection proj = FeatureProjection::RowUnitBall) {
  if (observations.empty())
    throw std::invalid_argument("q_feature_update: no observations");
  Matrix out = phi_sa;
  const double scale =
      agg == SlowAggregation::Mean
          ? beta / static_cast<double>(observations.size())
          : beta;
  for (const Observation& obs : observations) {
    const double delta = q_td_error(phi_sa, theta_new, obs, gamma, n_actions);
    out.row(sa_row(obs.state, obs.action, n_actions)) +=
        scale * delta * theta_new.transpose();
  }
  project_rows_in_place(out, proj);
  return out;
}

}  // namespace fedrep
