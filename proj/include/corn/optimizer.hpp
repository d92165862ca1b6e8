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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "corn/covariance.hpp"
#include "corn/privacy.hpp"

namespace corn {

// Noise-covariance design:
//   minimize Tr(W R W^T)  s.t.  [R^{-1}]_ii <= kappa,  R > 0,  [R]_ii <= cap.
//
// The diagonal cap keeps the infimum attained when W is rank deficient
// (complete-graph mixing): without it, noise mass escapes into the null
// space of W and the problem has no minimizer.
struct CovDesignProblem {
  Eigen::MatrixXd w;
  double kappa;
  double cap;

  void validate() const {
    if (w.rows() != w.cols())
      throw std::invalid_argument("cov design: W must be square");
    if (!(kappa > 0)) throw std::invalid_argument("cov design: kappa must be > 0");
    if (!(cap > 1.0 / kappa))
      throw std::invalid_argument(
          "cov design: infeasible cap; [R]_ii >= 1/[R^{-1}]_ii forces the "
          "diagonal above 1/kappa");
  }
};

struct SolverOptions {
  double sigma_floor_scale = 1e-6;  // sigma_floor = scale / kappa
  double cap_scale = 100.0;         // default cap = scale / kappa
  double mu_initial_scale = 0.1;    // mu0 = scale * max(1, f0(x0))
  double mu_reduction = 0.2;
  double mu_stop_scale = 1e-9;      // stop once mu < scale * f0(x0)
  double newton_tolerance = 1e-10;  // on the Newton decrement, relative
  int max_outer_iterations = 60;
  int max_newton_iterations = 80;
  double armijo_slope = 0.25;
  int64_t max_coalition_enumeration = 100000;

  double default_cap(double kappa) const { return cap_scale / kappa; }
};

// Residuals of the design problem's optimality system at a candidate R.
// stationarity/complementarity are relative to max(1, objective scale);
// primal quantities are in problem units.
struct KktReport {
  double max_inverse_diag = 0;
  double kappa_violation = 0;  // max_i [R^{-1}]_ii - kappa (signed)
  double min_eigenvalue = 0;
  double cap_slack = 0;        // min_i (cap - [R]_ii)
  bool cap_active = false;
  double stationarity = 0;
  double complementarity = 0;
  double dual_violation = 0;   // most negative multiplier before clamping

  double max_residual() const {
    return std::max({kappa_violation, stationarity, complementarity,
                     dual_violation, 0.0});
  }
};

struct CovSolution {
  Eigen::MatrixXd r_star;
  double objective = 0;
  double kappa = 0;
  double cap = 0;
  bool cap_active = false;
  int newton_iterations = 0;
  int outer_iterations = 0;
  double mu_final = 0;
  KktReport kkt;
  // Populated by the HBC solve: the independent component and per-seed-group
  // correlated blocks (dense over each group's support).
  double sigma_mix2 = 0;
  std::vector<Eigen::MatrixXd> cor_blocks;
};

// sigma_ldp^2 = 1/kappa: the unique minimal LDP variance meeting the budget
// with equality.
inline double solve_ldp(double kappa) {
  if (!(kappa > 0)) throw std::invalid_argument("solve_ldp: kappa must be > 0");
  return 1.0 / kappa;
}

namespace detail_opt {

struct Entry {
  int row;
  int col;
  double value;
};
using Atom = std::vector<Entry>;  // full symmetric pattern, mirrors included

inline void add_atom(Eigen::MatrixXd& m, const Atom& atom, double coeff) {
  for (const auto& e : atom) m(e.row, e.col) += coeff * e.value;
}

inline double quad_form(const Eigen::VectorXd& u, const Atom& atom) {
  double s = 0;
  for (const auto& e : atom) s += e.value * u(e.row) * u(e.col);
  return s;
}

inline double inner(const Eigen::MatrixXd& q, const Atom& atom) {
  double s = 0;
  for (const auto& e : atom) s += e.value * q(e.row, e.col);
  return s;
}

// Tr(E_k X E_l Y) for sparse symmetric atoms.
inline double trace_exey(const Atom& ek, const Atom& el,
                         const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  double s = 0;
  for (const auto& a : ek)
    for (const auto& b : el)
      s += a.value * b.value * x(a.col, b.row) * y(b.col, a.row);
  return s;
}

// Constraint group [R_v(x)^{-1}]_ii <= kappa for i in rows, where R_v is the
// part of R built from `vars` (per-coalition unknown covariance in the HBC
// problem; the whole of R otherwise).
struct KappaView {
  std::vector<int> vars;
  std::vector<int> rows;
};

// -mu logdet(M(x) - shift I) over a principal submatrix; keeps PSD blocks in
// the cone and enforces the sigma_floor on the full matrix.
struct LogDetBlock {
  std::vector<int> index_map;      // global row indices of the block
  std::vector<int> vars;
  std::vector<Atom> local_atoms;   // aligned with `vars`
  double shift = 0;
};

struct BarrierProblem {
  int n = 0;
  std::vector<Atom> atoms;               // one per variable
  std::vector<char> fixed;               // pinned variables (zero atoms)
  Eigen::MatrixXd obj_grad;              // Q = W^T W
  double kappa = 1.0;
  std::vector<KappaView> views;
  std::vector<LogDetBlock> blocks;
  double cap = 0;
  std::vector<std::pair<int, double>> lower_bounds;  // (var, bound)
  Eigen::VectorXd x0;
};

struct Evaluation {
  bool feasible = false;
  double f0 = std::numeric_limits<double>::infinity();
  double barrier = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd r_full;
  std::vector<Eigen::MatrixXd> view_inv;
  std::vector<Eigen::VectorXd> view_slack;
  std::vector<Eigen::MatrixXd> block_inv;
  Eigen::VectorXd cap_slack;
  std::vector<double> bound_slack;

  double merit(double mu) const { return f0 + mu * barrier; }
};

inline Eigen::MatrixXd build_view(const BarrierProblem& p,
                                  const Eigen::VectorXd& x,
                                  const std::vector<int>& vars) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p.n, p.n);
  for (int k : vars) add_atom(m, p.atoms[static_cast<size_t>(k)], x(k));
  return m;
}

inline Evaluation evaluate(const BarrierProblem& p, const Eigen::VectorXd& x) {
  Evaluation ev;
  ev.r_full = Eigen::MatrixXd::Zero(p.n, p.n);
  for (int k = 0; k < x.size(); ++k)
    add_atom(ev.r_full, p.atoms[static_cast<size_t>(k)], x(k));
  ev.f0 = (p.obj_grad.array() * ev.r_full.array()).sum();

  double barrier = 0;

  ev.view_inv.reserve(p.views.size());
  ev.view_slack.reserve(p.views.size());
  for (const auto& view : p.views) {
    Eigen::MatrixXd rv = build_view(p, x, view.vars);
    Eigen::LLT<Eigen::MatrixXd> llt(rv);
    if (llt.info() != Eigen::Success) return ev;
    Eigen::MatrixXd inv =
        llt.solve(Eigen::MatrixXd::Identity(p.n, p.n));
    Eigen::VectorXd slack(static_cast<Eigen::Index>(view.rows.size()));
    for (size_t idx = 0; idx < view.rows.size(); ++idx) {
      const int i = view.rows[idx];
      slack(static_cast<Eigen::Index>(idx)) = p.kappa - inv(i, i);
      if (!(slack(static_cast<Eigen::Index>(idx)) > 0)) return ev;
      barrier -= std::log(slack(static_cast<Eigen::Index>(idx)));
    }
    ev.view_inv.push_back(std::move(inv));
    ev.view_slack.push_back(std::move(slack));
  }

  ev.block_inv.reserve(p.blocks.size());
  for (const auto& block : p.blocks) {
    const int bn = static_cast<int>(block.index_map.size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(bn, bn);
    for (size_t idx = 0; idx < block.vars.size(); ++idx)
      add_atom(m, block.local_atoms[idx], x(block.vars[idx]));
    m -= block.shift * Eigen::MatrixXd::Identity(bn, bn);
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) return ev;
    const Eigen::MatrixXd& l = llt.matrixLLT();
    for (int i = 0; i < bn; ++i) {
      if (!(l(i, i) > 0)) return ev;
      barrier -= 2.0 * std::log(l(i, i));
    }
    ev.block_inv.push_back(llt.solve(Eigen::MatrixXd::Identity(bn, bn)));
  }

  ev.cap_slack.resize(p.n);
  for (int i = 0; i < p.n; ++i) {
    ev.cap_slack(i) = p.cap - ev.r_full(i, i);
    if (!(ev.cap_slack(i) > 0)) return ev;
    barrier -= std::log(ev.cap_slack(i));
  }

  ev.bound_slack.reserve(p.lower_bounds.size());
  for (const auto& [var, bound] : p.lower_bounds) {
    const double s = x(var) - bound;
    if (!(s > 0)) return ev;
    barrier -= std::log(s);
    ev.bound_slack.push_back(s);
  }

  ev.barrier = barrier;
  ev.feasible = true;
  return ev;
}

// Gradient and Hessian of f0 + mu * barrier over the free variables.
inline void derivatives(const BarrierProblem& p, const Eigen::VectorXd& x,
                        const Evaluation& ev, double mu,
                        const std::vector<int>& free_vars,
                        Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
  const int m = static_cast<int>(free_vars.size());
  std::vector<int> compact(p.atoms.size(), -1);
  for (int k = 0; k < m; ++k) compact[static_cast<size_t>(free_vars[k])] = k;

  grad.setZero(m);
  hess.setZero(m, m);
  for (int k = 0; k < m; ++k)
    grad(k) = inner(p.obj_grad, p.atoms[static_cast<size_t>(free_vars[k])]);

  // Inverse-diagonal constraints.
  for (size_t v = 0; v < p.views.size(); ++v) {
    const auto& view = p.views[v];
    const Eigen::MatrixXd& s = ev.view_inv[v];
    std::vector<int> vk;  // free vars active in this view
    for (int k : view.vars)
      if (compact[static_cast<size_t>(k)] >= 0) vk.push_back(k);
    if (vk.empty()) continue;

    Eigen::MatrixXd weighted = Eigen::MatrixXd::Zero(p.n, p.n);  // sum u u^T / r
    Eigen::MatrixXd wmat(static_cast<Eigen::Index>(view.rows.size()),
                         static_cast<Eigen::Index>(vk.size()));
    Eigen::VectorXd inv_slack(static_cast<Eigen::Index>(view.rows.size()));
    for (size_t idx = 0; idx < view.rows.size(); ++idx) {
      const int i = view.rows[idx];
      const double r = ev.view_slack[v](static_cast<Eigen::Index>(idx));
      const Eigen::VectorXd u = s.col(i);
      inv_slack(static_cast<Eigen::Index>(idx)) = 1.0 / r;
      weighted.noalias() += (1.0 / r) * (u * u.transpose());
      for (size_t j = 0; j < vk.size(); ++j)
        wmat(static_cast<Eigen::Index>(idx), static_cast<Eigen::Index>(j)) =
            quad_form(u, p.atoms[static_cast<size_t>(vk[j])]);
    }
    // grad: -(1/r) u^T E_k u per active row.
    for (size_t j = 0; j < vk.size(); ++j) {
      double g = 0;
      for (Eigen::Index idx = 0; idx < wmat.rows(); ++idx)
        g -= inv_slack(idx) * wmat(idx, static_cast<Eigen::Index>(j));
      grad(compact[static_cast<size_t>(vk[j])]) += mu * g;
    }
    // Hessian: (1/r^2) outer products of the S_ii gradients plus the
    // curvature term Tr(E_k S E_l A) + Tr(E_l S E_k A), A = sum u u^T / r.
    for (size_t a = 0; a < vk.size(); ++a) {
      const int ka = compact[static_cast<size_t>(vk[a])];
      const Atom& ea = p.atoms[static_cast<size_t>(vk[a])];
      for (size_t b = a; b < vk.size(); ++b) {
        const int kb = compact[static_cast<size_t>(vk[b])];
        const Atom& eb = p.atoms[static_cast<size_t>(vk[b])];
        double h = 0;
        for (Eigen::Index idx = 0; idx < wmat.rows(); ++idx)
          h += inv_slack(idx) * inv_slack(idx) *
               wmat(idx, static_cast<Eigen::Index>(a)) *
               wmat(idx, static_cast<Eigen::Index>(b));
        h += trace_exey(ea, eb, s, weighted) + trace_exey(eb, ea, s, weighted);
        hess(ka, kb) += mu * h;
        if (ka != kb) hess(kb, ka) += mu * h;
      }
    }
  }

  // PSD blocks / sigma floor.
  for (size_t bidx = 0; bidx < p.blocks.size(); ++bidx) {
    const auto& block = p.blocks[bidx];
    const Eigen::MatrixXd& nb = ev.block_inv[bidx];
    for (size_t a = 0; a < block.vars.size(); ++a) {
      const int ka = compact[static_cast<size_t>(block.vars[a])];
      if (ka < 0) continue;
      grad(ka) -= mu * inner(nb, block.local_atoms[a]);
      for (size_t b = a; b < block.vars.size(); ++b) {
        const int kb = compact[static_cast<size_t>(block.vars[b])];
        if (kb < 0) continue;
        const double h =
            mu * trace_exey(block.local_atoms[a], block.local_atoms[b], nb, nb);
        hess(ka, kb) += h;
        if (ka != kb) hess(kb, ka) += h;
      }
    }
  }

  // Diagonal cap.
  std::vector<std::vector<std::pair<int, double>>> diag_pattern(
      static_cast<size_t>(m));
  for (int k = 0; k < m; ++k) {
    for (const auto& e : p.atoms[static_cast<size_t>(free_vars[k])])
      if (e.row == e.col)
        diag_pattern[static_cast<size_t>(k)].emplace_back(e.row, e.value);
  }
  for (int k = 0; k < m; ++k) {
    for (const auto& [i, d] : diag_pattern[static_cast<size_t>(k)])
      grad(k) += mu * d / ev.cap_slack(i);
  }
  for (int a = 0; a < m; ++a)
    for (const auto& [i, da] : diag_pattern[static_cast<size_t>(a)])
      for (int b = a; b < m; ++b) {
        double h = 0;
        for (const auto& [j, db] : diag_pattern[static_cast<size_t>(b)])
          if (i == j) h += da * db / (ev.cap_slack(i) * ev.cap_slack(i));
        if (h != 0) {
          hess(a, b) += mu * h;
          if (a != b) hess(b, a) += mu * h;
        }
      }

  // Coordinate lower bounds.
  size_t bound_idx = 0;
  for (const auto& [var, bound] : p.lower_bounds) {
    const double sl = ev.bound_slack[bound_idx++];
    const int k = compact[static_cast<size_t>(var)];
    if (k < 0) continue;
    grad(k) -= mu / sl;
    hess(k, k) += mu / (sl * sl);
  }
}

struct BarrierResult {
  Eigen::VectorXd x;
  int newton_iterations = 0;
  int outer_iterations = 0;
  double mu_final = 0;
  double grad_residual = 0;
};

inline BarrierResult solve_barrier(const BarrierProblem& p,
                                   const SolverOptions& opts) {
  std::vector<int> free_vars;
  for (size_t k = 0; k < p.atoms.size(); ++k)
    if (!p.fixed[k]) free_vars.push_back(static_cast<int>(k));

  Eigen::VectorXd x = p.x0;
  Evaluation ev = evaluate(p, x);
  if (!ev.feasible)
    throw std::runtime_error(
        "barrier solver: initial point is infeasible (problem has no "
        "strict interior under the given kappa/cap)");

  const double f_init = std::abs(ev.f0);
  const double mu_stop = opts.mu_stop_scale * std::max(f_init, 1e-300);
  double mu = opts.mu_initial_scale * std::max(1.0, f_init);

  BarrierResult result;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;

  for (int outer = 0; outer < opts.max_outer_iterations; ++outer) {
    ++result.outer_iterations;
    for (int it = 0; it < opts.max_newton_iterations; ++it) {
      derivatives(p, x, ev, mu, free_vars, grad, hess);

      Eigen::VectorXd step;
      double reg = 0;
      for (;;) {
        Eigen::MatrixXd h = hess;
        if (reg > 0)
          h += reg * Eigen::MatrixXd::Identity(hess.rows(), hess.cols());
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
        step = ldlt.solve(-grad);
        const bool descent =
            ldlt.info() == Eigen::Success && grad.dot(step) < 0;
        if (descent && step.allFinite()) break;
        reg = reg == 0 ? 1e-10 * std::max(1.0, hess.diagonal().maxCoeff())
                       : reg * 100;
        if (reg > 1e20)
          throw std::runtime_error(
              "barrier solver: Newton system is numerically singular");
      }

      const double decrement2 = -grad.dot(step);
      if (0.5 * decrement2 <=
          opts.newton_tolerance * std::max(1.0, std::abs(ev.merit(mu)))) {
        result.grad_residual = grad.cwiseAbs().maxCoeff();
        break;
      }

      double alpha = 1.0;
      bool accepted = false;
      const double slope = grad.dot(step);
      while (alpha >= 1e-14) {
        Eigen::VectorXd trial_x = x;
        for (size_t j = 0; j < free_vars.size(); ++j)
          trial_x(free_vars[j]) += alpha * step(static_cast<Eigen::Index>(j));
        Evaluation trial = evaluate(p, trial_x);
        if (trial.feasible &&
            trial.merit(mu) <= ev.merit(mu) + opts.armijo_slope * alpha * slope) {
          x = std::move(trial_x);
          ev = std::move(trial);
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      ++result.newton_iterations;
      result.grad_residual = grad.cwiseAbs().maxCoeff();
      if (!accepted) break;  // stalled at numerical precision
    }
    if (mu < mu_stop) break;
    mu *= opts.mu_reduction;
  }

  result.x = x;
  result.mu_final = mu;
  return result;
}

// Full symmetric basis of n x n matrices; returns atoms plus the (i, j) ->
// variable index map (i <= j).
inline std::pair<std::vector<Atom>, std::map<std::pair<int, int>, int>>
symmetric_basis(int n) {
  std::vector<Atom> atoms;
  std::map<std::pair<int, int>, int> index;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      Atom a;
      if (i == j) {
        a.push_back({i, i, 1.0});
      } else {
        a.push_back({i, j, 1.0});
        a.push_back({j, i, 1.0});
      }
      index[{i, j}] = static_cast<int>(atoms.size());
      atoms.push_back(std::move(a));
    }
  }
  return {std::move(atoms), std::move(index)};
}

inline Atom atom_from_matrix(const Eigen::MatrixXd& m, double tol = 0.0) {
  Atom a;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (std::abs(m(i, j)) > tol)
        a.push_back({static_cast<int>(i), static_cast<int>(j), m(i, j)});
  return a;
}

}  // namespace detail_opt

// Nonnegative least-squares fit of active-constraint multipliers; used to
// report a stationarity residual for arbitrary candidate matrices.
inline KktReport kkt_report(const Eigen::MatrixXd& r,
                            const CovDesignProblem& problem) {
  problem.validate();
  const int n = static_cast<int>(r.rows());
  const Eigen::MatrixXd q = problem.w.transpose() * problem.w;

  KktReport report;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  report.min_eigenvalue = es.eigenvalues().minCoeff();
  report.cap_slack = (problem.cap - r.diagonal().array()).minCoeff();
  report.cap_active = report.cap_slack < 1e-4 * problem.cap;

  if (report.min_eigenvalue <= 0) {
    report.kappa_violation = std::numeric_limits<double>::infinity();
    report.stationarity = std::numeric_limits<double>::infinity();
    return report;
  }

  const Eigen::MatrixXd s = r.inverse();
  report.max_inverse_diag = s.diagonal().maxCoeff();
  report.kappa_violation = report.max_inverse_diag - problem.kappa;

  const double objective = (q.array() * r.array()).sum();
  const double obj_scale = std::max(1.0, std::abs(objective));

  // Active constraints and their gradients (as matrices).
  const double tol = 1e-5;
  std::vector<Eigen::MatrixXd> grads;
  std::vector<double> slacks;
  for (int i = 0; i < n; ++i) {
    const double slack = problem.kappa - s(i, i);
    if (slack < tol * problem.kappa) {
      grads.push_back(-(s.col(i) * s.col(i).transpose()));
      slacks.push_back(slack);
    }
  }
  for (int i = 0; i < n; ++i) {
    const double slack = problem.cap - r(i, i);
    if (slack < tol * problem.cap) {
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
      g(i, i) = 1.0;
      grads.push_back(std::move(g));
      slacks.push_back(slack);
    }
  }
  if (report.min_eigenvalue < tol / problem.kappa) {
    // PSD-cone multiplier along the near-null eigenvector.
    const Eigen::VectorXd v = es.eigenvectors().col(0);
    grads.push_back(-(v * v.transpose()));
    slacks.push_back(report.min_eigenvalue);
  }

  if (grads.empty()) {
    report.stationarity = q.norm() / std::max(1.0, q.norm());
    return report;
  }

  // min || q + G lambda ||_F over lambda >= 0 (stationarity of
  // f0 + sum lambda_i c_i with c_i <= 0 using the gradients above).
  const Eigen::Index dim = static_cast<Eigen::Index>(n) * n;
  Eigen::MatrixXd g(dim, static_cast<Eigen::Index>(grads.size()));
  for (size_t j = 0; j < grads.size(); ++j)
    g.col(static_cast<Eigen::Index>(j)) =
        Eigen::Map<const Eigen::VectorXd>(grads[j].data(), dim);
  const Eigen::VectorXd target = -Eigen::Map<const Eigen::VectorXd>(q.data(), dim);

  std::vector<int> keep(grads.size());
  for (size_t j = 0; j < grads.size(); ++j) keep[j] = static_cast<int>(j);
  Eigen::VectorXd lambda;
  for (;;) {
    Eigen::MatrixXd gk(dim, static_cast<Eigen::Index>(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j)
      gk.col(static_cast<Eigen::Index>(j)) = g.col(keep[j]);
    lambda = gk.colPivHouseholderQr().solve(target);
    int most_negative = -1;
    double v = -1e-12;
    for (Eigen::Index j = 0; j < lambda.size(); ++j)
      if (lambda(j) < v) {
        v = lambda(j);
        most_negative = static_cast<int>(j);
      }
    if (most_negative < 0) break;
    keep.erase(keep.begin() + most_negative);
    if (keep.empty()) {
      lambda.resize(0);
      break;
    }
  }

  Eigen::VectorXd residual = -target;
  double comp = 0;
  for (size_t j = 0; j < keep.size(); ++j) {
    residual += g.col(keep[j]) * lambda(static_cast<Eigen::Index>(j));
    comp = std::max(comp, std::abs(lambda(static_cast<Eigen::Index>(j)) *
                                   slacks[static_cast<size_t>(keep[j])]));
  }
  report.stationarity = residual.norm() / std::max(1.0, q.norm());
  report.complementarity = comp / obj_scale;
  report.dual_violation = 0;  // negative multipliers were pruned
  return report;
}

inline KktReport kkt_report(const CovSolution& sol,
                            const CovDesignProblem& problem) {
  return kkt_report(sol.r_star, problem);
}

namespace detail_opt {

// Common post-processing: scale the final iterate so every inverse-diagonal
// constraint holds with a 1e-9 safety margin, then recompute the reported
// numbers from the projected matrix.
inline double feasibility_scale(const BarrierProblem& p,
                                const Eigen::VectorXd& x) {
  double gamma = 1.0;
  for (const auto& view : p.views) {
    Eigen::MatrixXd rv = build_view(p, x, view.vars);
    Eigen::MatrixXd inv = rv.inverse();
    for (int i : view.rows)
      gamma = std::max(gamma, inv(i, i) / (p.kappa * (1.0 - 1e-9)));
  }
  return gamma;
}

}  // namespace detail_opt

// Problem (general structure): minimize Tr(W R W^T) over all symmetric
// R with [R^{-1}]_ii <= kappa, R >= sigma_floor I, diag(R) <= cap.
inline CovSolution solve_cov(const CovDesignProblem& problem,
                             const SolverOptions& opts = {}) {
  problem.validate();
  using namespace detail_opt;
  const int n = static_cast<int>(problem.w.rows());
  const double kappa = problem.kappa;

  // Normalized units: R = (1/kappa) R~, so the constraint level is 1.
  BarrierProblem p;
  p.n = n;
  auto [atoms, index] = symmetric_basis(n);
  p.atoms = std::move(atoms);
  p.fixed.assign(p.atoms.size(), 0);
  p.obj_grad = problem.w.transpose() * problem.w;
  p.kappa = 1.0;
  p.cap = kappa * problem.cap;

  KappaView view;
  view.rows.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) view.rows[static_cast<size_t>(i)] = i;
  for (size_t k = 0; k < p.atoms.size(); ++k)
    view.vars.push_back(static_cast<int>(k));
  p.views.push_back(view);

  LogDetBlock block;
  block.index_map.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) block.index_map[static_cast<size_t>(i)] = i;
  block.vars = view.vars;
  block.local_atoms = p.atoms;
  block.shift = opts.sigma_floor_scale;  // sigma_floor in normalized units
  p.blocks.push_back(std::move(block));

  const double init_diag = std::min(2.0, 0.5 * (1.0 + p.cap));
  p.x0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.atoms.size()));
  for (int i = 0; i < n; ++i) p.x0(index[{i, i}]) = init_diag;

  BarrierResult br = solve_barrier(p, opts);
  br.x *= feasibility_scale(p, br.x);

  CovSolution sol;
  Eigen::MatrixXd r_norm = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < br.x.size(); ++k)
    add_atom(r_norm, p.atoms[static_cast<size_t>(k)], br.x(k));
  sol.r_star = r_norm / kappa;
  sol.objective = effective_variance(problem.w, sol.r_star);
  sol.kappa = kappa;
  sol.cap = problem.cap;
  sol.newton_iterations = br.newton_iterations;
  sol.outer_iterations = br.outer_iterations;
  sol.mu_final = br.mu_final;
  sol.kkt = kkt_report(sol.r_star, problem);
  sol.cap_active = sol.kkt.cap_active;
  return sol;
}

struct DecorSolution {
  double sigma_pair2 = 0;
  double sigma_cor2 = 0;
  CovSolution solution;
};

// Pairwise structure: R = sigma_pair^2 I + sigma_cor^2 L.
inline DecorSolution solve_decor(const Eigen::MatrixXd& w,
                                 const Eigen::MatrixXd& laplacian,
                                 double kappa, double cap,
                                 const SolverOptions& opts = {}) {
  CovDesignProblem problem{w, kappa, cap};
  problem.validate();
  using namespace detail_opt;
  const int n = static_cast<int>(w.rows());

  BarrierProblem p;
  p.n = n;
  p.atoms.push_back(atom_from_matrix(Eigen::MatrixXd::Identity(n, n)));
  p.atoms.push_back(atom_from_matrix(laplacian));
  p.fixed.assign(2, 0);
  const bool degenerate_l = p.atoms[1].empty();
  if (degenerate_l) p.fixed[1] = 1;  // empty edge set: reduces to LDP

  p.obj_grad = w.transpose() * w;
  p.kappa = 1.0;
  p.cap = kappa * cap;

  KappaView view;
  for (int i = 0; i < n; ++i) view.rows.push_back(i);
  view.vars = {0};
  if (!degenerate_l) view.vars.push_back(1);
  p.views.push_back(view);

  LogDetBlock block;
  for (int i = 0; i < n; ++i) block.index_map.push_back(i);
  block.vars = view.vars;
  for (int k : block.vars) block.local_atoms.push_back(p.atoms[static_cast<size_t>(k)]);
  block.shift = opts.sigma_floor_scale;
  p.blocks.push_back(std::move(block));

  if (!degenerate_l) p.lower_bounds.emplace_back(1, 0.0);

  p.x0 = Eigen::VectorXd::Zero(2);
  p.x0(0) = std::min(2.0, 0.5 * (1.0 + p.cap));
  if (!degenerate_l) {
    // Keep the cap strictly satisfied at the start.
    const double max_ldiag = laplacian.diagonal().maxCoeff();
    p.x0(1) = std::min(0.25, 0.25 * (p.cap - p.x0(0)) / std::max(1.0, max_ldiag));
  }

  BarrierResult br = solve_barrier(p, opts);
  br.x *= feasibility_scale(p, br.x);

  DecorSolution out;
  out.sigma_pair2 = br.x(0) / kappa;
  out.sigma_cor2 = degenerate_l ? 0.0 : br.x(1) / kappa;
  CovSolution& sol = out.solution;
  sol.r_star = out.sigma_pair2 * Eigen::MatrixXd::Identity(n, n) +
               out.sigma_cor2 * laplacian;
  sol.objective = effective_variance(w, sol.r_star);
  sol.kappa = kappa;
  sol.cap = cap;
  sol.newton_iterations = br.newton_iterations;
  sol.outer_iterations = br.outer_iterations;
  sol.mu_final = br.mu_final;
  sol.kkt = kkt_report(sol.r_star, problem);
  sol.cap_active = sol.kkt.cap_active;
  return out;
}

// Seed-knowledge threat model: seed k (and its covariance block, supported on
// H_k x H_k) is known to the agents in H_k; coalitions of size <= q pool
// their knowledge.
struct HbcThreatModel {
  std::vector<std::vector<int>> groups;
  int max_coalition = 0;  // q

  void validate(int n) const {
    if (max_coalition < 0 || max_coalition > n - 1)
      throw std::invalid_argument("hbc: q must be in [0, n-1]");
    if (groups.empty()) throw std::invalid_argument("hbc: need at least one seed group");
    for (const auto& g : groups) {
      if (g.empty()) throw std::invalid_argument("hbc: empty seed group");
      for (int i : g)
        if (i < 0 || i >= n)
          throw std::invalid_argument("hbc: group member out of range");
    }
  }
};

inline CovSolution solve_cov_hbc(const Eigen::MatrixXd& w, double kappa,
                                 const HbcThreatModel& threat, double cap,
                                 const SolverOptions& opts = {}) {
  CovDesignProblem base{w, kappa, cap};
  base.validate();
  using namespace detail_opt;
  const int n = static_cast<int>(w.rows());
  threat.validate(n);
  const int q = threat.max_coalition;
  const size_t m_groups = threat.groups.size();

  // |C_q| = sum_{j<=q} C(n, j) must stay enumerable.
  {
    double count = 0, c = 1;
    for (int j = 0; j <= q; ++j) {
      count += c;
      c = c * (n - j) / (j + 1);
      if (count > static_cast<double>(opts.max_coalition_enumeration))
        throw std::invalid_argument(
            "hbc: coalition enumeration exceeds the configured limit; "
            "reduce q");
    }
  }

  std::vector<std::vector<char>> membership(
      m_groups, std::vector<char>(static_cast<size_t>(n), 0));
  for (size_t k = 0; k < m_groups; ++k)
    for (int i : threat.groups[k]) membership[k][static_cast<size_t>(i)] = 1;

  // Variables: x0 = sigma_mix^2, then one symmetric block per seed group.
  BarrierProblem p;
  p.n = n;
  p.kappa = 1.0;
  p.cap = kappa * cap;
  p.obj_grad = w.transpose() * w;
  p.atoms.push_back(atom_from_matrix(Eigen::MatrixXd::Identity(n, n)));
  std::vector<std::vector<int>> group_vars(m_groups);
  std::vector<LogDetBlock> blocks(m_groups);
  for (size_t k = 0; k < m_groups; ++k) {
    std::vector<int> members = threat.groups[k];
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    blocks[k].index_map = members;
    const int bn = static_cast<int>(members.size());
    for (int a = 0; a < bn; ++a) {
      for (int b = a; b < bn; ++b) {
        Atom global, local;
        if (a == b) {
          global.push_back({members[static_cast<size_t>(a)],
                            members[static_cast<size_t>(a)], 1.0});
          local.push_back({a, a, 1.0});
        } else {
          global.push_back({members[static_cast<size_t>(a)],
                            members[static_cast<size_t>(b)], 1.0});
          global.push_back({members[static_cast<size_t>(b)],
                            members[static_cast<size_t>(a)], 1.0});
          local.push_back({a, b, 1.0});
          local.push_back({b, a, 1.0});
        }
        const int var = static_cast<int>(p.atoms.size());
        p.atoms.push_back(std::move(global));
        group_vars[k].push_back(var);
        blocks[k].vars.push_back(var);
        blocks[k].local_atoms.push_back(std::move(local));
      }
    }
    blocks[k].shift = 0.0;
  }
  p.fixed.assign(p.atoms.size(), 0);
  for (auto& b : blocks) p.blocks.push_back(std::move(b));
  p.lower_bounds.emplace_back(0, opts.sigma_floor_scale);

  // Enumerate coalitions of size <= q; aggregate by the set of seed groups
  // the coalition does not touch.
  std::map<std::vector<char>, std::vector<char>> view_rows;
  std::vector<int> coalition;
  auto record = [&](const std::vector<int>& members) {
    std::vector<char> unknown(m_groups, 0);
    for (size_t k = 0; k < m_groups; ++k) {
      bool touched = false;
      for (int i : members)
        if (membership[k][static_cast<size_t>(i)]) {
          touched = true;
          break;
        }
      unknown[k] = touched ? 0 : 1;
    }
    auto& rows = view_rows[unknown];
    if (rows.empty()) rows.assign(static_cast<size_t>(n), 0);
    std::vector<char> in_coalition(static_cast<size_t>(n), 0);
    for (int i : members) in_coalition[static_cast<size_t>(i)] = 1;
    for (int i = 0; i < n; ++i)
      if (!in_coalition[static_cast<size_t>(i)]) rows[static_cast<size_t>(i)] = 1;
  };
  auto enumerate = [&](auto&& self, int start, int remaining) -> void {
    record(coalition);
    if (remaining == 0) return;
    for (int i = start; i < n; ++i) {
      coalition.push_back(i);
      self(self, i + 1, remaining - 1);
      coalition.pop_back();
    }
  };
  enumerate(enumerate, 0, q);

  for (const auto& [unknown, rows] : view_rows) {
    KappaView view;
    view.vars.push_back(0);
    for (size_t k = 0; k < m_groups; ++k)
      if (unknown[k])
        view.vars.insert(view.vars.end(), group_vars[k].begin(),
                         group_vars[k].end());
    for (int i = 0; i < n; ++i)
      if (rows[static_cast<size_t>(i)]) view.rows.push_back(i);
    if (!view.rows.empty()) p.views.push_back(std::move(view));
  }

  // Strictly feasible start: sigma^2 in the interior, small PD blocks.
  int max_cover = 0;
  for (int i = 0; i < n; ++i) {
    int c = 0;
    for (size_t k = 0; k < m_groups; ++k) c += membership[k][static_cast<size_t>(i)];
    max_cover = std::max(max_cover, c);
  }
  p.x0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.atoms.size()));
  const double sigma_init = std::min(2.0, 0.5 * (1.0 + p.cap));
  p.x0(0) = sigma_init;
  const double zeta =
      std::min(0.1, 0.25 * (p.cap - sigma_init) / std::max(1, max_cover));
  for (size_t k = 0; k < m_groups; ++k) {
    const auto& members = p.blocks[k].index_map;
    const int bn = static_cast<int>(members.size());
    int var_idx = 0;
    for (int a = 0; a < bn; ++a)
      for (int b = a; b < bn; ++b, ++var_idx)
        if (a == b) p.x0(group_vars[k][static_cast<size_t>(var_idx)]) = zeta;
  }

  BarrierResult br = solve_barrier(p, opts);
  br.x *= feasibility_scale(p, br.x);

  CovSolution sol;
  Eigen::MatrixXd r_norm = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < br.x.size(); ++k)
    add_atom(r_norm, p.atoms[static_cast<size_t>(k)], br.x(k));
  sol.r_star = r_norm / kappa;
  sol.objective = effective_variance(w, sol.r_star);
  sol.kappa = kappa;
  sol.cap = cap;
  sol.newton_iterations = br.newton_iterations;
  sol.outer_iterations = br.outer_iterations;
  sol.mu_final = br.mu_final;
  sol.sigma_mix2 = br.x(0) / kappa;
  for (size_t k = 0; k < m_groups; ++k) {
    const auto& members = p.blocks[k].index_map;
    const int bn = static_cast<int>(members.size());
    Eigen::MatrixXd blockm = Eigen::MatrixXd::Zero(bn, bn);
    int var_idx = 0;
    for (int a = 0; a < bn; ++a)
      for (int b = a; b < bn; ++b, ++var_idx) {
        const double v = br.x(group_vars[k][static_cast<size_t>(var_idx)]) / kappa;
        blockm(a, b) = v;
        blockm(b, a) = v;
      }
    sol.cor_blocks.push_back(std::move(blockm));
  }

  // Primal residual across every coalition view, in problem units.
  sol.kkt = kkt_report(sol.r_star, base);
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& view : p.views) {
    Eigen::MatrixXd rv = build_view(p, br.x, view.vars) / kappa;
    Eigen::MatrixXd inv = rv.inverse();
    for (int i : view.rows) worst = std::max(worst, inv(i, i) - kappa);
  }
  sol.kkt.kappa_violation = worst;
  sol.kkt.max_inverse_diag = worst + kappa;
  sol.cap_active = sol.kkt.cap_active;
  return sol;
}

}  // namespace corn
