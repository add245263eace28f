#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fedrep/mdp.hpp"
#include "fedrep/rng.hpp"

namespace fedrep {

// The 4x12 cliff grid. State = row * cols + col with row 0 at the top; the
// bottom row holds start (left corner), the cliff strip, and the goal (right
// corner). Actions: 0 = up, 1 = right, 2 = down, 3 = left. Stepping into the
// cliff teleports to start with cliff_reward; the goal routes to start with
// reward 0 so the chain is unichain and episode boundaries stay observable.
// With slip_prob > 0 the intended action is replaced by a uniformly random
// one with that probability.
struct CliffWalkingSpec {
  int rows = 4;
  int cols = 12;
  double step_reward = -1.0;
  double cliff_reward = -100.0;
  double slip_prob = 0.0;
  double gamma = 0.9;
};

struct CliffWalking {
  Mdp mdp;
  int start = 0;
  int goal = 0;
  std::vector<int> cliff;  // the strip between start and goal
};

namespace detail {

// Destination and reward of the deterministic move `a` from state s,
// before any slip mixing.
inline std::pair<int, double> cliff_move(const CliffWalkingSpec& spec, int s,
                                         int a) {
  const int cols = spec.cols;
  const int start = (spec.rows - 1) * cols;
  const int goal = spec.rows * cols - 1;
  const int row = s / cols, col = s % cols;

  if (s == goal || (row == spec.rows - 1 && col > 0 && col < cols - 1)) {
    // Terminal (goal) and cliff cells route to start; cliff cells are never
    // actually occupied but still need stochastic rows.
    return {start, 0.0};
  }
  int r2 = row, c2 = col;
  switch (a) {
    case 0: r2 = std::max(0, row - 1); break;
    case 1: c2 = std::min(cols - 1, col + 1); break;
    case 2: r2 = std::min(spec.rows - 1, row + 1); break;
    case 3: c2 = std::max(0, col - 1); break;
    default: throw std::invalid_argument("cliff_move: bad action");
  }
  const int dest = r2 * cols + c2;
  if (r2 == spec.rows - 1 && c2 > 0 && c2 < cols - 1)
    return {start, spec.cliff_reward};  // stepped into the cliff
  return {dest, spec.step_reward};
}

}  // namespace detail

inline CliffWalking build_cliffwalking(const CliffWalkingSpec& spec = {}) {
  if (spec.rows < 2 || spec.cols < 3)
    throw std::invalid_argument("cliffwalking: grid too small");
  if (!(spec.slip_prob >= 0.0 && spec.slip_prob < 1.0))
    throw std::invalid_argument("cliffwalking: slip_prob must be in [0,1)");
  const int n = spec.rows * spec.cols;
  const int n_a = 4;

  CliffWalking env;
  env.start = (spec.rows - 1) * spec.cols;
  env.goal = n - 1;
  for (int c = 1; c < spec.cols - 1; ++c)
    env.cliff.push_back((spec.rows - 1) * spec.cols + c);

  env.mdp.gamma = spec.gamma;
  env.mdp.reward = Matrix::Zero(n, n_a);
  env.mdp.kernel.assign(n_a, Matrix::Zero(n, n));

  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < n_a; ++a) {
      double expected_r = 0.0;
      for (int actual = 0; actual < n_a; ++actual) {
        double p = (actual == a) ? 1.0 - spec.slip_prob + spec.slip_prob / n_a
                                 : spec.slip_prob / n_a;
        if (p == 0.0) continue;
        auto [dest, r] = detail::cliff_move(spec, s, actual);
        env.mdp.kernel[a](s, dest) += p;
        expected_r += p * r;
      }
      env.mdp.reward(s, a) = expected_r;
    }
  }
  env.mdp.validate();
  return env;
}

// Shortest-path policy softened with exploration mass eps spread uniformly
// over all four actions. The greedy route climbs off the bottom row, runs
// right along the row above the cliff, and drops into the goal from the last
// column.
inline Policy cliff_eps_soft_policy(const CliffWalkingSpec& spec, double eps) {
  if (!(eps >= 0.0 && eps <= 1.0))
    throw std::invalid_argument("cliff policy: eps must be in [0,1]");
  const int n = spec.rows * spec.cols;
  Policy pi = Matrix::Constant(n, 4, eps / 4.0);
  for (int s = 0; s < n; ++s) {
    const int row = s / spec.cols, col = s % spec.cols;
    int greedy;
    if (row == spec.rows - 1) greedy = 0;           // climb off the bottom row
    else if (col == spec.cols - 1) greedy = 2;      // drop toward the goal
    else greedy = 1;                                // run right
    pi(s, greedy) += 1.0 - eps;
  }
  return pi;
}

// Randomized benchmark MDP: each (s,a) gets `branching` distinct successors
// chosen uniformly, probabilities drawn uniformly from the simplex, rewards
// uniform in [-reward_scale, reward_scale]. Redraws (deterministically, from
// the same stream) until the uniform-policy chain has a unique stationary
// distribution.
struct GarnetSpec {
  int n_states = 10;
  int n_actions = 3;
  int branching = 3;
  double reward_scale = 1.0;
  double gamma = 0.9;
};

inline Policy uniform_policy(int n_states, int n_actions) {
  return Matrix::Constant(n_states, n_actions, 1.0 / n_actions);
}

inline Mdp build_garnet(const GarnetSpec& spec, RandomStream& rng) {
  if (spec.branching < 1 || spec.branching > spec.n_states)
    throw std::invalid_argument("garnet: branching must be in [1, n_states]");
  const int n = spec.n_states;

  for (int attempt = 0; attempt < 100; ++attempt) {
    Mdp mdp;
    mdp.gamma = spec.gamma;
    mdp.reward = Matrix::Zero(n, spec.n_actions);
    mdp.kernel.assign(spec.n_actions, Matrix::Zero(n, n));

    std::vector<int> idx(n);
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < spec.n_actions; ++a) {
        std::iota(idx.begin(), idx.end(), 0);
        // partial Fisher-Yates: first `branching` entries are the successors
        for (int j = 0; j < spec.branching; ++j) {
          const int pick = j + rng.uniform_int(n - j);
          std::swap(idx[j], idx[pick]);
        }
        double total = 0.0;
        std::vector<double> w(spec.branching);
        for (int j = 0; j < spec.branching; ++j) {
          w[j] = -std::log(1.0 - rng.uniform());  // Exp(1): Dirichlet(1,..,1) after normalizing
          total += w[j];
        }
        for (int j = 0; j < spec.branching; ++j)
          mdp.kernel[a](s, idx[j]) = w[j] / total;
        mdp.reward(s, a) = spec.reward_scale * (2.0 * rng.uniform() - 1.0);
      }
    }
    try {
      stationary_distribution(
          transition_under_policy(mdp, uniform_policy(n, spec.n_actions)));
    } catch (const NonUniqueStationary&) {
      continue;
    }
    return mdp;
  }
  throw std::runtime_error("garnet: no irreducible draw in 100 attempts");
}

// Convex mixing of each kernel row with an independent random stochastic
// row: (1 - magnitude) P + magnitude * noise. Rows stay stochastic exactly;
// the TV distance moved is at most `magnitude`.
inline Mdp perturb_kernel(Mdp mdp, double magnitude, RandomStream& rng) {
  if (magnitude < 0.0 || magnitude > 1.0)
    throw std::invalid_argument("perturb_kernel: magnitude must be in [0,1]");
  if (magnitude == 0.0) return mdp;
  const int n = mdp.n_states();
  std::vector<double> w(n);
  for (auto& P : mdp.kernel) {
    for (int s = 0; s < n; ++s) {
      double total = 0.0;
      for (int j = 0; j < n; ++j) {
        w[j] = -std::log(1.0 - rng.uniform());
        total += w[j];
      }
      for (int j = 0; j < n; ++j)
        P(s, j) = (1.0 - magnitude) * P(s, j) + magnitude * w[j] / total;
      P.row(s) /= P.row(s).sum();
    }
  }
  return mdp;
}

}  // namespace fedrep
