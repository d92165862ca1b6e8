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
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "corn/io.hpp"
#include "corn/rng.hpp"

namespace corn {

inline constexpr double kStochasticTol = 1e-12;

// Undirected simple graph on agents 0..n-1.
class Graph {
 public:
  Graph(int n, std::vector<std::pair<int, int>> edges) : n_(n) {
    if (n < 1) throw std::invalid_argument("Graph: need at least one agent");
    std::set<std::pair<int, int>> dedup;
    for (auto [i, j] : edges) {
      if (i == j) throw std::invalid_argument("Graph: self-loop");
      if (i < 0 || j < 0 || i >= n || j >= n)
        throw std::invalid_argument("Graph: agent index out of range");
      if (i > j) std::swap(i, j);
      if (!dedup.insert({i, j}).second)
        throw std::invalid_argument("Graph: duplicate edge");
    }
    edges_.assign(dedup.begin(), dedup.end());
    adjacency_.assign(static_cast<size_t>(n), {});
    for (auto [i, j] : edges_) {
      adjacency_[static_cast<size_t>(i)].push_back(j);
      adjacency_[static_cast<size_t>(j)].push_back(i);
    }
  }

  int size() const { return n_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<int>& neighbors(int i) const {
    return adjacency_[static_cast<size_t>(i)];
  }
  int degree(int i) const {
    return static_cast<int>(adjacency_[static_cast<size_t>(i)].size());
  }

  bool is_connected() const {
    if (n_ == 1) return true;
    std::vector<char> seen(static_cast<size_t>(n_), 0);
    std::queue<int> frontier;
    frontier.push(0);
    seen[0] = 1;
    int reached = 1;
    while (!frontier.empty()) {
      const int v = frontier.front();
      frontier.pop();
      for (int w : neighbors(v)) {
        if (!seen[static_cast<size_t>(w)]) {
          seen[static_cast<size_t>(w)] = 1;
          ++reached;
          frontier.push(w);
        }
      }
    }
    return reached == n_;
  }

  // Edge-list text format: first line "n", then one "i j" line per edge.
  std::string to_edge_list() const {
    std::string out = std::to_string(n_) + "\n";
    for (auto [i, j] : edges_)
      out += std::to_string(i) + " " + std::to_string(j) + "\n";
    return out;
  }

  static Graph from_edge_list(const std::string& text) {
    std::istringstream in(text);
    int n = 0;
    if (!(in >> n)) throw std::runtime_error("edge list: missing agent count");
    std::vector<std::pair<int, int>> edges;
    int i = 0, j = 0;
    while (in >> i >> j) edges.emplace_back(i, j);
    return Graph(n, std::move(edges));
  }

 private:
  int n_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> adjacency_;
};

// G(n, p): each pair kept independently with probability p. Disconnected
// samples are resampled with an incremented sub-seed; DSGD needs a connected
// topology (lambda_2 < 1), so returning one would poison everything
// downstream.
inline Graph erdos_renyi(int n, double p, uint64_t seed,
                         int max_retries = 1000) {
  if (n < 2) throw std::invalid_argument("erdos_renyi: need n >= 2");
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("erdos_renyi: p must be in [0, 1]");
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    CounterRng rng(seed, static_cast<uint64_t>(attempt));
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.uniform(static_cast<uint64_t>(i), static_cast<uint64_t>(j)) < p)
          edges.emplace_back(i, j);
      }
    }
    Graph g(n, std::move(edges));
    if (g.is_connected()) return g;
  }
  throw std::runtime_error("erdos_renyi: no connected sample for n=" +
                           std::to_string(n) + ", p=" + format_double(p) +
                           " after " + std::to_string(max_retries) +
                           " retries");
}

// Doubly stochastic gossip weights. Validated on construction.
struct MixingMatrix {
  Eigen::MatrixXd w;

  int size() const { return static_cast<int>(w.rows()); }
};

inline void check_doubly_stochastic(const Eigen::MatrixXd& w,
                                    double tol = kStochasticTol) {
  if (w.rows() != w.cols()) throw std::invalid_argument("mixing matrix: not square");
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    if (std::abs(w.row(i).sum() - 1.0) > tol)
      throw std::runtime_error("mixing matrix: row " + std::to_string(i) +
                               " sum differs from 1 by more than tolerance");
    if (std::abs(w.col(i).sum() - 1.0) > tol)
      throw std::runtime_error("mixing matrix: column " + std::to_string(i) +
                               " sum differs from 1 by more than tolerance");
  }
}

// Checks the off-diagonal sparsity pattern of w against the edge set.
inline void check_sparsity_pattern(const Eigen::MatrixXd& w, const Graph& g) {
  std::set<std::pair<int, int>> edges(g.edges().begin(), g.edges().end());
  for (int i = 0; i < g.size(); ++i) {
    for (int j = i + 1; j < g.size(); ++j) {
      const bool has_edge = edges.count({i, j}) > 0;
      if (!has_edge && (w(i, j) != 0.0 || w(j, i) != 0.0))
        throw std::runtime_error("mixing matrix: weight on a non-edge");
    }
  }
}

enum class WeightRule {
  // w_ij = 1 / (1 + max(deg_i, deg_j)): symmetric, doubly stochastic on any
  // graph.
  kMetropolisHastings,
  // w_ij = 1 / (deg_i + 1): matches kMetropolisHastings on regular graphs,
  // rejected on irregular graphs where it cannot be doubly stochastic.
  kNeighborCount,
};

inline MixingMatrix metropolis_weights(
    const Graph& g, WeightRule rule = WeightRule::kMetropolisHastings) {
  if (!g.is_connected())
    throw std::invalid_argument("metropolis_weights: graph is disconnected");
  const int n = g.size();
  if (rule == WeightRule::kNeighborCount) {
    for (int i = 1; i < n; ++i) {
      if (g.degree(i) != g.degree(0))
        throw std::invalid_argument(
            "metropolis_weights: the neighbor-count rule is not doubly "
            "stochastic on irregular graphs; use the symmetric rule");
    }
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (auto [i, j] : g.edges()) {
    const double wij =
        rule == WeightRule::kMetropolisHastings
            ? 1.0 / (1.0 + std::max(g.degree(i), g.degree(j)))
            : 1.0 / (g.degree(i) + 1.0);
    w(i, j) = wij;
    w(j, i) = rule == WeightRule::kMetropolisHastings
                  ? wij
                  : 1.0 / (g.degree(j) + 1.0);
  }
  for (int i = 0; i < n; ++i) w(i, i) = 1.0 - w.row(i).sum();
  check_doubly_stochastic(w);
  check_sparsity_pattern(w, g);
  return MixingMatrix{std::move(w)};
}

// L = sum over edges of (e_i - e_j)(e_i - e_j)^T.
inline Eigen::MatrixXd laplacian_matrix(const Graph& g) {
  const int n = g.size();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (auto [i, j] : g.edges()) {
    l(i, i) += 1.0;
    l(j, j) += 1.0;
    l(i, j) -= 1.0;
    l(j, i) -= 1.0;
  }
  return l;
}

// Second largest eigenvalue of W^T W; < 1 exactly when gossip contracts.
inline double spectral_gap(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w.transpose() * w);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("spectral_gap: eigensolver did not converge");
  const auto& ev = es.eigenvalues();  // ascending
  if (ev.size() < 2) return 0.0;
  return ev(ev.size() - 2);
}

}  // namespace corn
