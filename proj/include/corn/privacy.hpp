//
// Copyright 2025 The corn-dsgd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace corn {

// Agent-level (epsilon, delta)-DP target for a T-iteration run with
// per-agent gradient clipping at `clip`. log(1/delta) is the natural
// logarithm throughout, consistent with Renyi-DP composition.
struct PrivacyBudget {
  double epsilon;
  double delta;
  int64_t iterations;   // T
  double clip;          // C

  void validate() const {
    if (!(epsilon > 0)) throw std::invalid_argument("budget: epsilon must be > 0");
    if (!(delta > 0 && delta < 1))
      throw std::invalid_argument("budget: delta must be in (0, 1)");
    if (iterations < 1) throw std::invalid_argument("budget: T must be >= 1");
    if (!(clip > 0)) throw std::invalid_argument("budget: C must be > 0");
  }
};

// Maximum allowed diagonal of R^{-1} (inverse-variance units).
struct ConstraintLevel {
  double kappa;
};

// kappa = eps^2 / (16 C^2 T ln(1/delta)).
inline ConstraintLevel kappa_from_budget(const PrivacyBudget& b) {
  b.validate();
  const double log_inv_delta = std::log(1.0 / b.delta);
  return ConstraintLevel{b.epsilon * b.epsilon /
                         (16.0 * b.clip * b.clip *
                          static_cast<double>(b.iterations) * log_inv_delta)};
}

// diag(R^{-1}) with an explicit conditioning gate: a numerically singular R
// must not produce a silently meaningless bound.
inline Eigen::VectorXd inverse_diagonal(const Eigen::MatrixXd& r,
                                        double max_condition = 1e12) {
  if (r.rows() != r.cols())
    throw std::invalid_argument("inverse_diagonal: not square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("inverse_diagonal: eigensolver did not converge");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (lo <= 0.0 || hi / lo > max_condition)
    throw std::runtime_error(
        "covariance is numerically singular: no finite privacy guarantee");
  const Eigen::MatrixXd& v = es.eigenvectors();
  Eigen::VectorXd diag(r.rows());
  for (Eigen::Index i = 0; i < r.rows(); ++i)
    diag(i) = (v.row(i).array().square() / ev.transpose().array()).sum();
  return diag;
}

inline double max_inverse_diagonal(const Eigen::MatrixXd& r) {
  return inverse_diagonal(r).maxCoeff();
}

// Per-iteration RDP level: eps_step = 2 C^2 max_i [R^{-1}]_ii.
inline double per_step_rdp(const Eigen::MatrixXd& r, double clip) {
  if (!(clip > 0)) throw std::invalid_argument("per_step_rdp: C must be > 0");
  return 2.0 * clip * clip * max_inverse_diagonal(r);
}

// (epsilon, delta)-LDP bound after composing T iterations:
//   2 C^2 T m + 2 C sqrt(2 T ln(1/delta) m),   m = max_i [R^{-1}]_ii.
inline double epsilon_bound(const Eigen::MatrixXd& r, const PrivacyBudget& b) {
  const double m = max_inverse_diagonal(r);
  const double t = static_cast<double>(b.iterations);
  const double log_inv_delta = std::log(1.0 / b.delta);
  return 2.0 * b.clip * b.clip * t * m +
         2.0 * b.clip * std::sqrt(2.0 * t * log_inv_delta * m);
}

struct BudgetReport {
  bool pass;
  double kappa;
  double max_inverse_diag;
  double epsilon_bound;
  Eigen::VectorXd inverse_diag;  // per-agent [R^{-1}]_ii
  Eigen::VectorXd slack;         // per-agent kappa - [R^{-1}]_ii
};

// Passes iff max_i [R^{-1}]_ii <= kappa. The comparison allows only a few
// ulps so a boundary-exact covariance (diagonal 1/kappa) passes with zero
// slack while anything materially above kappa fails.
inline BudgetReport verify_budget(const Eigen::MatrixXd& r,
                                  const PrivacyBudget& b) {
  const double kappa = kappa_from_budget(b).kappa;
  BudgetReport report;
  report.kappa = kappa;
  report.inverse_diag = inverse_diagonal(r);
  report.max_inverse_diag = report.inverse_diag.maxCoeff();
  report.epsilon_bound = epsilon_bound(r, b);
  report.slack = kappa - report.inverse_diag.array();
  report.pass = report.max_inverse_diag <= kappa * (1.0 + 64 * 2.220446049250313e-16);
  return report;
}

}  // namespace corn
