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

#include "corn/optimizer.hpp"

#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "corn/graph.hpp"
#include "oracle.hpp"

using Catch::Approx;
using namespace corn;

namespace {

// kappa for the reference budget eps=10, delta=1e-5, C=0.1, T=5000.
const double kKappa = kappa_from_budget({10.0, 1e-5, 5000, 0.1}).kappa;

Eigen::MatrixXd complete_mixing(int n) {
  return Eigen::MatrixXd::Constant(n, n, 1.0 / n);
}

// Closed form for the symmetric n=2 optimum with the cap active:
// R = [[B, -b], [-b, B]] with b = sqrt(B^2 - B/kappa), objective B - b.
double analytic_two_agent_objective(double kappa, double cap) {
  return cap - std::sqrt(cap * cap - cap / kappa);
}

Graph path_graph(int n) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  return Graph(n, edges);
}

Graph complete_graph(int n) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) edges.emplace_back(i, j);
  return Graph(n, edges);
}

}  // namespace

TEST_CASE("solve_ldp is the reciprocal of kappa") {
  CHECK(solve_ldp(kKappa) == Approx(92.103).epsilon(1e-4));
  CHECK(solve_ldp(1.0) == Approx(1.0));
  CHECK(solve_ldp(0.25) == Approx(4.0));
  CHECK_THROWS(solve_ldp(0.0));
}

TEST_CASE("problem validation rejects an infeasible cap") {
  CovDesignProblem bad{Eigen::MatrixXd::Identity(2, 2), kKappa, 0.5 / kKappa};
  CHECK_THROWS_WITH(bad.validate(),
                    Catch::Matchers::ContainsSubstring("infeasible cap"));
}

TEST_CASE("solve_decor with an empty edge set reduces to LDP") {
  const int n = 3;
  const Eigen::MatrixXd w = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  const double cap = 100.0 / kKappa;
  const DecorSolution sol = solve_decor(w, l, kKappa, cap);
  CHECK(sol.sigma_cor2 == 0.0);
  CHECK(sol.sigma_pair2 == Approx(1.0 / kKappa).epsilon(1e-6));
  CHECK(sol.solution.objective == Approx(n / kKappa).epsilon(1e-6));
}

TEST_CASE("solve_decor matches the analytic two-agent solution") {
  const Eigen::MatrixXd w = complete_mixing(2);
  const Eigen::MatrixXd l = laplacian_matrix(Graph(2, {{0, 1}}));
  const double cap = 100.0 / kKappa;
  const DecorSolution sol = solve_decor(w, l, kKappa, cap);
  const double expected = analytic_two_agent_objective(kKappa, cap);
  CHECK(sol.solution.objective == Approx(expected).epsilon(1e-5));
  // Diagonal pinned at the cap, objective = sigma_pair^2 + ... = a - b form.
  CHECK(sol.sigma_pair2 + sol.sigma_cor2 == Approx(cap).epsilon(1e-4));
  CHECK(sol.solution.cap_active);

  // Independent 2-D grid + polish oracle over (sigma_pair^2, sigma_cor^2).
  const auto inst = oracle::pairwise(w, l, kKappa, cap);
  const auto ref = oracle::brute_force_min(inst);
  CHECK(sol.solution.objective == Approx(ref.objective).epsilon(1e-4));
}

TEST_CASE("solve_decor output passes the accountant") {
  const Graph g = erdos_renyi(8, 0.4, 3);
  const Eigen::MatrixXd w = metropolis_weights(g).w;
  const Eigen::MatrixXd l = laplacian_matrix(g);
  const PrivacyBudget budget{10.0, 1e-5, 5000, 0.1};
  const double kappa = kappa_from_budget(budget).kappa;
  const DecorSolution sol = solve_decor(w, l, kappa, 100.0 / kappa);
  CHECK(verify_budget(sol.solution.r_star, budget).pass);
}

TEST_CASE("solve_cov with identity mixing returns the LDP point") {
  for (int n : {2, 3}) {
    CovDesignProblem problem{Eigen::MatrixXd::Identity(n, n), kKappa,
                             100.0 / kKappa};
    const CovSolution sol = solve_cov(problem);
    CHECK(sol.objective == Approx(n / kKappa).epsilon(1e-5));
    for (int i = 0; i < n; ++i)
      CHECK(sol.r_star(i, i) == Approx(1.0 / kKappa).epsilon(1e-4));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) CHECK(std::abs(sol.r_star(i, j)) < 1e-4 / kKappa);
    CHECK_FALSE(sol.cap_active);
  }
}

TEST_CASE("solve_cov matches the analytic two-agent solution and decor") {
  CovDesignProblem problem{complete_mixing(2), kKappa, 100.0 / kKappa};
  const CovSolution sol = solve_cov(problem);
  const double expected = analytic_two_agent_objective(kKappa, problem.cap);
  CHECK(sol.objective == Approx(expected).epsilon(1e-5));
  CHECK(sol.cap_active);

  const Eigen::MatrixXd l = laplacian_matrix(Graph(2, {{0, 1}}));
  const DecorSolution decor = solve_decor(complete_mixing(2), l, kKappa,
                                          problem.cap);
  CHECK(sol.objective == Approx(decor.solution.objective).epsilon(1e-5));
}

TEST_CASE("solve_cov beats LDP on complete graphs") {
  for (int n : {2, 4}) {
    CovDesignProblem problem{complete_mixing(n), kKappa, 100.0 / kKappa};
    const CovSolution sol = solve_cov(problem);
    const double ldp_trace =
        solve_ldp(kKappa) *
        effective_variance(problem.w, Eigen::MatrixXd::Identity(n, n));
    CHECK(sol.objective < 0.9 * ldp_trace);
  }
}

TEST_CASE("solve_cov agrees with the brute-force oracle on small instances") {
  struct Case {
    const char* name;
    Eigen::MatrixXd w;
  };
  const std::vector<Case> cases = {
      {"complete-2", complete_mixing(2)},
      {"complete-3", complete_mixing(3)},
      {"path-3", metropolis_weights(path_graph(3)).w},
  };
  for (const auto& c : cases) {
    INFO(c.name);
    const int n = static_cast<int>(c.w.rows());
    CovDesignProblem problem{c.w, kKappa, 100.0 / kKappa};
    const CovSolution sol = solve_cov(problem);
    const auto inst = oracle::full_symmetric(c.w, kKappa, problem.cap);
    const auto ref = oracle::brute_force_min(inst);
    CHECK(std::abs(sol.objective - ref.objective) / ref.objective < 1e-4);
    CHECK(sol.kkt.kappa_violation <= 0.0);
    CHECK(sol.kkt.stationarity < 1e-7);
    CHECK(sol.kkt.complementarity < 1e-7);
    CHECK(sol.kkt.min_eigenvalue > 0.0);
    (void)n;
  }
}

TEST_CASE("complete-graph symmetric reduction cross-checks the solver") {
  // On K3 the optimum has the exchange symmetry R = a I + b (J - I); the
  // active kappa constraint gives a 1-D root-finding problem.
  const int n = 3;
  CovDesignProblem problem{complete_mixing(n), kKappa, 100.0 / kKappa};
  const CovSolution sol = solve_cov(problem);

  const double cap = problem.cap;
  auto inv_diag = [&](double b) {
    // diag of (a I + b (J - I))^{-1} with a at the cap.
    const double lam1 = cap + (n - 1) * b;
    const double lam2 = cap - b;
    return (1.0 / n) * (1.0 / lam1) + ((n - 1.0) / n) * (1.0 / lam2);
  };
  double lo = -cap / (n - 1) + 1e-9 * cap, hi = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (inv_diag(mid) > kKappa) lo = mid;
    else hi = mid;
  }
  const double expected = cap + (n - 1) * hi;  // Tr(W R W^T) = (a + (n-1)b)
  CHECK(sol.objective == Approx(expected).epsilon(1e-5));
}

TEST_CASE("returned covariances satisfy the budget exactly") {
  const PrivacyBudget budget{10.0, 1e-5, 5000, 0.1};
  const double kappa = kappa_from_budget(budget).kappa;
  const Graph g = erdos_renyi(10, 0.4, 5);
  CovDesignProblem problem{metropolis_weights(g).w, kappa, 100.0 / kappa};
  const CovSolution sol = solve_cov(problem);
  CHECK(verify_budget(sol.r_star, budget).pass);
  CHECK(sol.kkt.kappa_violation <= 0.0);
}

TEST_CASE("feasible-set nesting orders the three structures") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    const Graph g = erdos_renyi(12, 0.4, seed);
    const Eigen::MatrixXd w = metropolis_weights(g).w;
    const Eigen::MatrixXd l = laplacian_matrix(g);
    const double cap = 100.0 / kKappa;
    const CovSolution general = solve_cov({w, kKappa, cap});
    const DecorSolution pair = solve_decor(w, l, kKappa, cap);
    const double ldp_trace =
        solve_ldp(kKappa) *
        effective_variance(w, Eigen::MatrixXd::Identity(12, 12));
    CHECK(general.objective <= pair.solution.objective + 1e-6);
    CHECK(pair.solution.objective <= ldp_trace + 1e-6);
  }
}

TEST_CASE("general and pairwise agree on complete graphs") {
  for (int n : {4, 8}) {
    const Graph g = complete_graph(n);
    const Eigen::MatrixXd w = metropolis_weights(g).w;
    const Eigen::MatrixXd l = laplacian_matrix(g);
    const double cap = 100.0 / kKappa;
    const CovSolution general = solve_cov({w, kKappa, cap});
    const DecorSolution pair = solve_decor(w, l, kKappa, cap);
    CHECK(std::abs(general.objective - pair.solution.objective) /
              pair.solution.objective <
          0.01);
  }
}

TEST_CASE("relabeling agents conjugates the solution") {
  const Graph g = erdos_renyi(6, 0.6, 9);
  const Eigen::MatrixXd w = metropolis_weights(g).w;
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.setIdentity();
  std::swap(perm.indices()(0), perm.indices()(3));
  std::swap(perm.indices()(1), perm.indices()(5));
  const Eigen::MatrixXd w_perm = perm * w * perm.transpose();
  const double cap = 100.0 / kKappa;
  const CovSolution a = solve_cov({w, kKappa, cap});
  const CovSolution b = solve_cov({w_perm, kKappa, cap});
  CHECK(a.objective == Approx(b.objective).epsilon(1e-6));
}

TEST_CASE("hbc with one global seed and q=0 matches the general solve") {
  const Graph g = erdos_renyi(5, 0.6, 2);
  const Eigen::MatrixXd w = metropolis_weights(g).w;
  const double cap = 100.0 / kKappa;
  HbcThreatModel threat;
  threat.groups = {{0, 1, 2, 3, 4}};
  threat.max_coalition = 0;
  const CovSolution hbc = solve_cov_hbc(w, kKappa, threat, cap);
  const CovSolution general = solve_cov({w, kKappa, cap});
  CHECK(std::abs(hbc.objective - general.objective) / general.objective < 1e-3);
  CHECK(hbc.sigma_mix2 > 0.0);
  CHECK(hbc.kkt.kappa_violation <= 0.0);
}

TEST_CASE("hbc with singleton seeds and q=n-1 collapses to LDP") {
  const int n = 4;
  const Eigen::MatrixXd w = complete_mixing(n);
  const double cap = 100.0 / kKappa;
  HbcThreatModel threat;
  for (int i = 0; i < n; ++i) threat.groups.push_back({i});
  threat.max_coalition = n - 1;
  const CovSolution sol = solve_cov_hbc(w, kKappa, threat, cap);
  for (int i = 0; i < n; ++i)
    CHECK(sol.r_star(i, i) == Approx(1.0 / kKappa).epsilon(1e-3));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) CHECK(std::abs(sol.r_star(i, j)) < 1e-6 / kKappa);
}

TEST_CASE("hbc objective is non-decreasing in the coalition bound") {
  const int n = 4;
  const Eigen::MatrixXd w = complete_mixing(n);
  const double cap = 100.0 / kKappa;
  HbcThreatModel threat;
  threat.groups = {{0, 1}, {2, 3}, {0, 2}, {1, 3}};
  double prev = -1;
  for (int q : {0, 1, 2}) {
    threat.max_coalition = q;
    const CovSolution sol = solve_cov_hbc(w, kKappa, threat, cap);
    CHECK(sol.objective >= prev - 1e-6);
    prev = sol.objective;
  }
}

TEST_CASE("hbc enumeration limit guards against coalition explosion") {
  HbcThreatModel threat;
  threat.groups = {{0}};
  threat.max_coalition = 20;
  SolverOptions opts;
  opts.max_coalition_enumeration = 1000;
  CHECK_THROWS_WITH(
      solve_cov_hbc(Eigen::MatrixXd::Identity(30, 30) , kKappa, threat,
                    100.0 / kKappa, opts),
      Catch::Matchers::ContainsSubstring("reduce q"));
}

TEST_CASE("kkt_report on the analytic two-agent optimum") {
  const double cap = 100.0 / kKappa;
  const double b = std::sqrt(cap * cap - cap / kKappa);
  Eigen::MatrixXd r(2, 2);
  r << cap, -b, -b, cap;
  CovDesignProblem problem{complete_mixing(2), kKappa, cap};
  const KktReport report = kkt_report(r, problem);
  CHECK(report.kappa_violation <= 1e-10);
  CHECK(report.kappa_violation > -1e-6 * kKappa);
  CHECK(report.stationarity < 1e-7);
  CHECK(report.complementarity < 1e-7);
  CHECK(report.cap_active);
}

TEST_CASE("kkt_report recognizes the LDP point as optimal for W = I") {
  const int n = 3;
  CovDesignProblem problem{Eigen::MatrixXd::Identity(n, n), kKappa,
                           100.0 / kKappa};
  const Eigen::MatrixXd r = (1.0 / kKappa) * Eigen::MatrixXd::Identity(n, n);
  const KktReport report = kkt_report(r, problem);
  CHECK(std::abs(report.kappa_violation) < 1e-12);
  CHECK(report.stationarity < 1e-10);
  CHECK(report.complementarity < 1e-10);
}

TEST_CASE("kkt_report flags an infeasible candidate") {
  CovDesignProblem problem{Eigen::MatrixXd::Identity(2, 2), kKappa,
                           100.0 / kKappa};
  const Eigen::MatrixXd r = (0.5 / kKappa) * Eigen::MatrixXd::Identity(2, 2);
  const KktReport report = kkt_report(r, problem);
  CHECK(report.kappa_violation == Approx(kKappa).epsilon(1e-9));
}
