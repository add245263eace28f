#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "fedrep/rng.hpp"

namespace fedrep {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// How the feature matrix is renormalized after a slow update. RowUnitBall
// radially projects each row with norm > 1 back onto the unit ball and is the
// default: the Lipschitz constants used by the property suite assume
// ||phi(s)|| <= 1 per state. WholeMatrixFrobenius divides the entire matrix
// by its Frobenius norm unconditionally, and is kept behind a flag.
enum class FeatureProjection { RowUnitBall, WholeMatrixFrobenius };

// Random feature matrix: isotropic rows scaled to exact unit norm.
inline Matrix init_features(int n_rows, int d, RandomStream& rng) {
  if (d < 1) throw std::invalid_argument("init_features: d must be >= 1");
  if (n_rows < 1) throw std::invalid_argument("init_features: n_rows must be >= 1");
  Matrix phi(n_rows, d);
  for (int s = 0; s < n_rows; ++s) {
    double norm = 0.0;
    do {
      for (int j = 0; j < d; ++j) phi(s, j) = rng.normal();
      norm = phi.row(s).norm();
    } while (norm == 0.0);
    phi.row(s) /= norm;
  }
  return phi;
}

inline double linear_value(const Matrix& phi, const Vector& theta, int s) {
  if (s < 0 || s >= phi.rows())
    throw std::out_of_range("linear_value: state index out of range");
  return phi.row(s).dot(theta);
}

// Radial projection of theta onto the ball of radius B. Direction preserved,
// idempotent.
inline Vector clip_weights(Vector theta, double B) {
  const double norm = theta.norm();
  if (norm > B) theta *= B / norm;
  return theta;
}

inline void project_rows_in_place(Matrix& phi,
                                  FeatureProjection mode = FeatureProjection::RowUnitBall) {
  if (mode == FeatureProjection::WholeMatrixFrobenius) {
    const double norm = phi.norm();
    if (norm > 0.0) phi /= norm;
    return;
  }
  for (int s = 0; s < phi.rows(); ++s) {
    const double norm = phi.row(s).norm();
    if (norm > 1.0) phi.row(s) /= norm;
  }
}

inline Matrix project_rows(Matrix phi,
                           FeatureProjection mode = FeatureProjection::RowUnitBall) {
  project_rows_in_place(phi, mode);
  return phi;
}

}  // namespace fedrep
