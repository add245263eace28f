#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrep/rng.hpp"

namespace fedrep {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Tabular MDP. kernel[a](s, s') is the transition probability, reward(s, a)
// the expected immediate reward. Immutable in practice: build once, share
// read-only across agent workers.
struct Mdp {
  std::vector<Matrix> kernel;
  Matrix reward;  // (s, a)
  double gamma = 0.0;

  int n_states() const { return static_cast<int>(reward.rows()); }
  int n_actions() const { return static_cast<int>(reward.cols()); }

  void validate() const {
    if (kernel.empty() || reward.rows() == 0)
      throw std::invalid_argument("mdp: empty kernel or reward table");
    if (static_cast<int>(kernel.size()) != n_actions())
      throw std::invalid_argument("mdp: kernel/action count mismatch");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("mdp: gamma must lie strictly inside (0,1)");
    for (int a = 0; a < n_actions(); ++a) {
      const Matrix& P = kernel[a];
      if (P.rows() != n_states() || P.cols() != n_states())
        throw std::invalid_argument("mdp: kernel slice has wrong shape");
      if ((P.array() < 0.0).any())
        throw std::invalid_argument("mdp: negative transition probability");
      for (int s = 0; s < n_states(); ++s) {
        if (std::abs(P.row(s).sum() - 1.0) > 1e-12)
          throw std::invalid_argument("mdp: kernel row does not sum to 1");
      }
    }
  }
};

// probs(s, a) = pi(a | s), rows sum to 1.
using Policy = Matrix;

inline void validate_policy(const Policy& pi, const Mdp& mdp) {
  if (pi.rows() != mdp.n_states() || pi.cols() != mdp.n_actions())
    throw std::invalid_argument("policy: shape does not match MDP");
  if ((pi.array() < 0.0).any())
    throw std::invalid_argument("policy: negative probability");
  for (int s = 0; s < pi.rows(); ++s)
    if (std::abs(pi.row(s).sum() - 1.0) > 1e-12)
      throw std::invalid_argument("policy: row does not sum to 1");
}

// One Markovian sample (s, a, r, s'). The action is recorded for the
// Q-learning variant; TD ignores it.
struct Observation {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
};

// P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a).
inline Matrix transition_under_policy(const Mdp& mdp, const Policy& pi) {
  validate_policy(pi, mdp);
  const int n = mdp.n_states();
  Matrix P = Matrix::Zero(n, n);
  for (int a = 0; a < mdp.n_actions(); ++a)
    P += pi.col(a).asDiagonal() * mdp.kernel[a];
  return P;
}

// r_pi(s) = sum_a pi(a|s) R(s,a).
inline Vector expected_reward(const Mdp& mdp, const Policy& pi) {
  return (pi.array() * mdp.reward.array()).rowwise().sum();
}

// Draw a ~ pi(.|s), s' ~ P(.|s,a), r = R(s,a). Advances only the given
// stream; per-agent streams are never shared.
inline Observation sample_step(const Mdp& mdp, const Policy& pi, int state,
                               RandomStream& rng) {
  const int n_a = mdp.n_actions();
  const int n_s = mdp.n_states();
  double u = rng.uniform();
  int a = n_a - 1;
  double c = 0.0;
  for (int i = 0; i + 1 < n_a; ++i) {
    c += pi(state, i);
    if (u < c) { a = i; break; }
  }
  u = rng.uniform();
  int s2 = n_s - 1;
  c = 0.0;
  const auto row = mdp.kernel[a].row(state);
  for (int i = 0; i + 1 < n_s; ++i) {
    c += row(i);
    if (u < c) { s2 = i; break; }
  }
  return Observation{state, a, mdp.reward(state, a), s2};
}

struct NonUniqueStationary : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stationary distribution of a row-stochastic matrix by direct linear solve
// of (P^T - I) mu = 0 with the normalization row. Uniqueness is checked via
// the rank of (P^T - I): anything below n-1 means more than one recurrent
// class and the caller gets an explicit failure instead of an arbitrary
// vector. (Periodic chains have a unique stationary distribution and are
// accepted here; they are caught later by the mixing profile.)
inline Vector stationary_distribution(const Matrix& P_pi) {
  const int n = static_cast<int>(P_pi.rows());
  if (P_pi.cols() != n) throw std::invalid_argument("stationary: not square");
  Matrix M = P_pi.transpose() - Matrix::Identity(n, n);

  Eigen::FullPivLU<Matrix> lu(M);
  lu.setThreshold(1e-9);
  if (lu.rank() != n - 1)
    throw NonUniqueStationary(
        "stationary distribution is not unique (chain is reducible)");

  M.row(n - 1).setOnes();
  Vector e = Vector::Zero(n);
  e(n - 1) = 1.0;
  Vector mu = M.fullPivLu().solve(e);

  for (int i = 0; i < n; ++i) {
    if (mu(i) < -1e-10)
      throw NonUniqueStationary("stationary solve produced negative mass");
    if (mu(i) < 0.0) mu(i) = 0.0;
  }
  mu /= mu.sum();
  return mu;
}

// Ground-truth value oracle: V solving (I - gamma P_pi) V = r_pi.
inline Vector exact_value(const Mdp& mdp, const Policy& pi) {
  const int n = mdp.n_states();
  const Matrix P = transition_under_policy(mdp, pi);
  const Vector r = expected_reward(mdp, pi);
  return (Matrix::Identity(n, n) - mdp.gamma * P).partialPivLu().solve(r);
}

// Q(s,a) = R(s,a) + gamma sum_s' P(s'|s,a) V(s').
inline Matrix exact_q_value(const Mdp& mdp, const Policy& pi) {
  const Vector V = exact_value(mdp, pi);
  Matrix Q(mdp.n_states(), mdp.n_actions());
  for (int a = 0; a < mdp.n_actions(); ++a)
    Q.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.kernel[a] * V);
  return Q;
}

// Optimal action values by value iteration (used as the control oracle).
inline Matrix optimal_q_value(const Mdp& mdp, double tol = 1e-13,
                              int max_iters = 1000000) {
  const int n = mdp.n_states();
  Vector V = Vector::Zero(n);
  Matrix Q(n, mdp.n_actions());
  for (int it = 0; it < max_iters; ++it) {
    for (int a = 0; a < mdp.n_actions(); ++a)
      Q.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.kernel[a] * V);
    Vector V_new = Q.rowwise().maxCoeff();
    const double diff = (V_new - V).cwiseAbs().maxCoeff();
    V = V_new;
    if (diff * mdp.gamma / (1.0 - mdp.gamma) < tol) break;
  }
  for (int a = 0; a < mdp.n_actions(); ++a)
    Q.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.kernel[a] * V);
  return Q;
}

// Unichain conversion for episodic tasks: every listed terminal state routes
// to the start state with probability 1 and reward 0, under every action.
// Episode boundaries are counted by the harness when the chain takes one of
// these reset transitions.
inline Mdp make_unichain(Mdp mdp, const std::vector<int>& terminals,
                         int start_state) {
  for (int t : terminals) {
    if (t < 0 || t >= mdp.n_states())
      throw std::invalid_argument("make_unichain: terminal out of range");
    for (int a = 0; a < mdp.n_actions(); ++a) {
      mdp.kernel[a].row(t).setZero();
      mdp.kernel[a](t, start_state) = 1.0;
      mdp.reward(t, a) = 0.0;
    }
  }
  return mdp;
}

}  // namespace fedrep
