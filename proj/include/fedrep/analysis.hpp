#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "fedrep/federation.hpp"
#include "fedrep/learners.hpp"
#include "fedrep/mdp.hpp"
#include "fedrep/representation.hpp"
#include "fedrep/rng.hpp"

namespace fedrep {

// ---- projected fixed point ----

struct FixedPointSolution {
  Vector theta_star;
  double residual_norm = 0.0;  // norm of the expected fast update at theta_star
};

struct RankDeficientFeatures : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exact expected update maps under the stationary distribution: no sampling,
// closed-form marginalization over actions and successors.
//   g_bar = Phi^T D e,  h_bar = D e theta^T,  e = r_pi + gamma P_pi Phi theta - Phi theta
struct ExpectedUpdates {
  Vector g_bar;
  Matrix h_bar;
};

inline ExpectedUpdates expected_updates(const Mdp& mdp, const Policy& pi,
                                        const Matrix& phi, const Vector& theta) {
  const Matrix P = transition_under_policy(mdp, pi);
  const Vector mu = stationary_distribution(P);
  const Vector r = expected_reward(mdp, pi);
  const Vector vhat = phi * theta;
  const Vector e = r + mdp.gamma * (P * vhat) - vhat;
  const Vector de = mu.cwiseProduct(e);
  return {phi.transpose() * de, de * theta.transpose()};
}

// The TD(0) fixed point for a fixed representation: solves
//   (Phi^T D (I - gamma P_pi) Phi) theta = Phi^T D r_pi.
// Rank deficiency of the system matrix is an explicit failure, not a
// least-squares fallback.
inline FixedPointSolution td_fixed_point(const Mdp& mdp, const Policy& pi,
                                         const Matrix& phi) {
  const int n = mdp.n_states();
  const Matrix P = transition_under_policy(mdp, pi);
  const Vector mu = stationary_distribution(P);
  const Vector r = expected_reward(mdp, pi);
  const Matrix DI = mu.asDiagonal() * (Matrix::Identity(n, n) - mdp.gamma * P);
  const Matrix A = phi.transpose() * DI * phi;
  const Vector b = phi.transpose() * (mu.asDiagonal() * r);

  Eigen::FullPivLU<Matrix> lu(A);
  lu.setThreshold(1e-10);
  if (lu.rank() < A.rows())
    throw RankDeficientFeatures(
        "td_fixed_point: feature matrix is rank-deficient under the "
        "stationary weighting");
  FixedPointSolution sol;
  sol.theta_star = lu.solve(b);
  sol.residual_norm =
      expected_updates(mdp, pi, phi, sol.theta_star).g_bar.norm();
  return sol;
}

// ---- Lyapunov diagnostic ----

struct LyapunovValue {
  double total = 0.0;
  double phi_residual = 0.0;  // ||Phi_t - Phi*||_F^2
  double tracking = 0.0;      // (1/N) sum_i ||theta_i - y_i||^2
};

inline LyapunovValue lyapunov(const Matrix& phi_t,
                              const std::vector<Vector>& thetas,
                              const Matrix& phi_star,
                              const std::vector<Vector>& y_of_phi,
                              double beta_prev, double alpha_t) {
  if (thetas.size() != y_of_phi.size())
    throw std::invalid_argument("lyapunov: theta/fixed-point count mismatch");
  LyapunovValue out;
  out.phi_residual = (phi_t - phi_star).squaredNorm();
  for (std::size_t i = 0; i < thetas.size(); ++i)
    out.tracking += (thetas[i] - y_of_phi[i]).squaredNorm();
  out.tracking /= static_cast<double>(thetas.size());
  out.total = out.phi_residual + (beta_prev / alpha_t) * out.tracking;
  return out;
}

// Stationary-weighted value error against the exact value oracle.
inline double value_mse(const Matrix& phi, const Vector& theta,
                        const Vector& v_exact, const Vector& mu) {
  const Vector err = phi * theta - v_exact;
  return mu.dot(err.cwiseProduct(err));
}

// ---- long-run reference in place of the unobservable optimum ----

struct ReferenceOptimum {
  Matrix phi_star;
  std::vector<Vector> thetas;
  bool converged = false;     // final per-round feature step within tolerance
  double final_phi_step = 0.0;
};

// The equilibrium representation near a given initialization is not
// computable in closed form; the stand-in is the terminal state of a much
// longer run of the same algorithm from the same phi0 and seed. Flagged
// non-converged when the last round still moves the features by more than
// step_tolerance in Frobenius norm.
inline ReferenceOptimum reference_optimum(const Matrix& phi0,
                                          const std::vector<Mdp>& mdps,
                                          const std::vector<Policy>& policies,
                                          const Schedule& schedule, long long_T,
                                          const RoundOptions& opt,
                                          std::uint64_t seed,
                                          int start_state = 0,
                                          double step_tolerance = 1e-6) {
  FederationState st =
      init_federation(phi0, static_cast<int>(mdps.size()), start_state, seed,
                      Variant::PFedTdRep);
  Matrix prev = st.phi;
  double last_step = 0.0;
  FederationState fin = run_training(
      std::move(st), mdps, policies, schedule, long_T, Variant::PFedTdRep, opt,
      [&](const FederationState& s, long, double, double) {
        last_step = (s.phi - prev).norm();
        prev = s.phi;
      });
  ReferenceOptimum ref;
  ref.phi_star = fin.phi;
  ref.thetas = fin.thetas;
  ref.final_phi_step = last_step;
  ref.converged = last_step <= step_tolerance;
  return ref;
}

// ---- mixing ----

struct MixingFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MixingProfile {
  std::vector<double> tv_by_step;  // d_k for k = 1, 2, ...
  double fitted_C = 0.0;
  double fitted_rho = 0.0;
  int tau_delta = 0;  // min k with d_k <= delta
  double delta = 0.0;
};

// Exact total-variation mixing profile from matrix powers:
// d_k = max_s TV(P^k(s,.), mu). Geometric parameters (C, rho) come from a
// least-squares fit of log d_k over the decaying region. A chain whose
// profile never reaches delta within k_max (a periodic chain in particular)
// is rejected outright.
inline MixingProfile tv_mixing_profile(const Matrix& P_pi, const Vector& mu,
                                       int k_max = 1000, double delta = 0.01) {
  const int n = static_cast<int>(P_pi.rows());
  MixingProfile prof;
  prof.delta = delta;

  Matrix Pk = P_pi;
  int tau = 0;
  for (int k = 1; k <= k_max; ++k) {
    double dk = 0.0;
    for (int s = 0; s < n; ++s)
      dk = std::max(dk, 0.5 * (Pk.row(s).transpose() - mu).lpNorm<1>());
    prof.tv_by_step.push_back(dk);
    if (tau == 0 && dk <= delta) tau = k;
    if (dk <= 1e-14) break;
    if (k < k_max) Pk *= P_pi;
  }
  if (tau == 0)
    throw MixingFailure(
        "tv_mixing_profile: no decay to delta within k_max (chain may be "
        "periodic)");
  prof.tau_delta = tau;

  // Fit log d_k = log C + k log rho over strictly positive entries.
  double sk = 0.0, sk2 = 0.0, sl = 0.0, skl = 0.0;
  int m = 0;
  for (std::size_t i = 0; i < prof.tv_by_step.size(); ++i) {
    const double dk = prof.tv_by_step[i];
    if (dk <= 1e-13) break;
    const double k = static_cast<double>(i + 1);
    const double l = std::log(dk);
    sk += k; sk2 += k * k; sl += l; skl += k * l;
    ++m;
  }
  if (m >= 2) {
    const double denom = m * sk2 - sk * sk;
    const double slope = (m * skl - sk * sl) / denom;
    const double icept = (sl - slope * sk) / m;
    prof.fitted_rho = std::exp(slope);
    prof.fitted_C = std::exp(icept);
  } else if (m == 1) {
    prof.fitted_rho = prof.tv_by_step[0];
    prof.fitted_C = 1.0;
  }  // m == 0: the chain mixed in one step; (C, rho) stay 0
  return prof;
}

// ---- Lipschitz audit of the update maps ----

struct LipschitzReport {
  long samples_tested = 0;
  double max_ratio_g = 0.0;
  double max_ratio_h = 0.0;
  double bound_g = 0.0;
  double bound_h = 0.0;
  long violations = 0;
};

inline double lipschitz_bound_g(double gamma, double B) {
  return std::max(1.0 + gamma, (2.0 + 2.0 * gamma) * B);
}

inline double lipschitz_bound_h(double gamma, double B) {
  return std::max((1.0 + gamma) * B * B, (2.0 + 2.0 * gamma) * B);
}

namespace detail {

// Uniform draw from the d-ball of the given radius.
inline Vector ball_point(int d, double radius, RandomStream& rng) {
  Vector v(d);
  double norm = 0.0;
  do {
    for (int j = 0; j < d; ++j) v(j) = rng.normal();
    norm = v.norm();
  } while (norm == 0.0);
  return v * (radius * std::pow(rng.uniform(), 1.0 / d) / norm);
}

inline Matrix ball_rows(int n, int d, RandomStream& rng) {
  Matrix phi(n, d);
  for (int s = 0; s < n; ++s) phi.row(s) = ball_point(d, 1.0, rng).transpose();
  return phi;
}

}  // namespace detail

// Samples random pairs (theta1, Phi1), (theta2, Phi2) in the feasible set
// (weights in the B-ball, feature rows in the unit ball, rewards in [-1, 1])
// sharing one observation, and audits the claimed global Lipschitz bounds of
// the two update maps.
inline LipschitzReport lipschitz_check(double gamma, double B, long n_samples,
                                       RandomStream& rng, int n_states = 8,
                                       int d = 4) {
  LipschitzReport rep;
  rep.bound_g = lipschitz_bound_g(gamma, B);
  rep.bound_h = lipschitz_bound_h(gamma, B);
  for (long i = 0; i < n_samples; ++i) {
    const Matrix phi1 = detail::ball_rows(n_states, d, rng);
    const Matrix phi2 = detail::ball_rows(n_states, d, rng);
    const Vector th1 = detail::ball_point(d, B, rng);
    const Vector th2 = detail::ball_point(d, B, rng);
    Observation obs;
    obs.state = rng.uniform_int(n_states);
    obs.next_state = rng.uniform_int(n_states);
    obs.reward = 2.0 * rng.uniform() - 1.0;

    const double denom = (th1 - th2).norm() + (phi1 - phi2).norm();
    if (denom < 1e-12) continue;
    const double lhs_g =
        (grad_g(phi1, th1, obs, gamma) - grad_g(phi2, th2, obs, gamma)).norm();
    const double lhs_h = (td_error(phi1, th1, obs, gamma) * th1 -
                          td_error(phi2, th2, obs, gamma) * th2)
                             .norm();
    rep.max_ratio_g = std::max(rep.max_ratio_g, lhs_g / denom);
    rep.max_ratio_h = std::max(rep.max_ratio_h, lhs_h / denom);
    if (lhs_g > rep.bound_g * denom + 1e-9) ++rep.violations;
    if (lhs_h > rep.bound_h * denom + 1e-9) ++rep.violations;
    ++rep.samples_tested;
  }
  return rep;
}

// ---- finite-difference gradient audit ----

struct GradientCheckReport {
  long samples_tested = 0;
  double max_rel_error_g = 0.0;
  double max_rel_error_h = 0.0;
  long failures = 0;
};

namespace detail {

// Half squared error against a frozen bootstrap target.
inline double frozen_target_loss(const Matrix& phi, const Vector& theta,
                                 const Observation& obs, double target) {
  const double diff = target - phi.row(obs.state).dot(theta);
  return 0.5 * diff * diff;
}

}  // namespace detail

// Checks that the fast map equals minus the finite-difference gradient of the
// frozen-target loss in theta, and the slow map the analogue in the visited
// feature row. Central differences with per-coordinate step scaling.
inline GradientCheckReport gradient_check(long n_samples, RandomStream& rng,
                                          double tol = 1e-6, int n_states = 6,
                                          int d = 4) {
  GradientCheckReport rep;
  const double fd_step = 6e-6;
  for (long i = 0; i < n_samples; ++i) {
    Matrix phi = detail::ball_rows(n_states, d, rng);
    Vector theta = detail::ball_point(d, 10.0, rng);
    Observation obs;
    obs.state = rng.uniform_int(n_states);
    obs.next_state = rng.uniform_int(n_states);
    obs.reward = 4.0 * rng.uniform() - 2.0;
    const double gamma = 0.05 + 0.9 * rng.uniform();

    // The target freezes both the reward and the successor features at the
    // evaluation point.
    const double target =
        obs.reward + gamma * phi.row(obs.next_state).dot(theta);

    const Vector g = grad_g(phi, theta, obs, gamma);
    Vector fd_g(d);
    for (int j = 0; j < d; ++j) {
      const double h = fd_step * std::max(1.0, std::abs(theta(j)));
      Vector tp = theta, tm = theta;
      tp(j) += h;
      tm(j) -= h;
      fd_g(j) = (detail::frozen_target_loss(phi, tp, obs, target) -
                 detail::frozen_target_loss(phi, tm, obs, target)) /
                (2.0 * h);
    }
    const double rel_g =
        (g + fd_g).norm() / std::max({g.norm(), fd_g.norm(), 1e-10});

    const RowGradient hrow = grad_h(phi, theta, obs, gamma);
    Vector fd_h(d);
    for (int j = 0; j < d; ++j) {
      const double h = fd_step * std::max(1.0, std::abs(phi(obs.state, j)));
      Matrix pp = phi, pm = phi;
      pp(obs.state, j) += h;
      pm(obs.state, j) -= h;
      // The target stays frozen while the visited row moves; even when
      // s' == s the bootstrap term does not feel the perturbation, which is
      // exactly the semi-gradient convention.
      fd_h(j) = (detail::frozen_target_loss(pp, theta, obs, target) -
                 detail::frozen_target_loss(pm, theta, obs, target)) /
                (2.0 * h);
    }
    const double rel_h = (hrow.values + fd_h).norm() /
                         std::max({hrow.values.norm(), fd_h.norm(), 1e-10});

    rep.max_rel_error_g = std::max(rep.max_rel_error_g, rel_g);
    rep.max_rel_error_h = std::max(rep.max_rel_error_h, rel_h);
    if (rel_g > tol || rel_h > tol) ++rep.failures;
    ++rep.samples_tested;
  }
  return rep;
}

// Empirical sensitivity of the fixed point to the representation. No closed
// form is available for the Lipschitz constant of y(.), so this reports the
// largest observed ratio instead of checking a bound.
inline double y_map_max_ratio(const Mdp& mdp, const Policy& pi, int d,
                              int n_pairs, RandomStream& rng,
                              double condition_limit = 1e6) {
  double max_ratio = 0.0;
  for (int i = 0; i < n_pairs; ++i) {
    const Matrix phi1 = detail::ball_rows(mdp.n_states(), d, rng);
    Matrix phi2 = phi1;
    // small perturbation keeps both matrices well-conditioned together
    for (int s = 0; s < phi2.rows(); ++s)
      phi2.row(s) += 0.05 * detail::ball_point(d, 1.0, rng).transpose();
    project_rows_in_place(phi2);
    try {
      const FixedPointSolution y1 = td_fixed_point(mdp, pi, phi1);
      const FixedPointSolution y2 = td_fixed_point(mdp, pi, phi2);
      if (y1.theta_star.norm() > condition_limit ||
          y2.theta_star.norm() > condition_limit)
        continue;
      const double dphi = (phi1 - phi2).norm();
      if (dphi < 1e-12) continue;
      max_ratio =
          std::max(max_ratio, (y1.theta_star - y2.theta_star).norm() / dphi);
    } catch (const RankDeficientFeatures&) {
      continue;
    }
  }
  return max_ratio;
}

}  // namespace fedrep
