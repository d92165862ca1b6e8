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
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "corn/covariance.hpp"
#include "corn/rng.hpp"

namespace corn {

// Sub-seed domains, so noise draws, data draws and probe redraws never share
// counter cells.
inline constexpr uint64_t kNoiseDomain = 0x636f726e2d767276ULL;
inline constexpr uint64_t kDataDomain = 0x636f726e2d646174ULL;
inline constexpr uint64_t kProbeDomain = 0x636f726e2d707262ULL;

// g scaled onto the C-ball: min(1, C/||g||) g.
inline Eigen::VectorXd clip(const Eigen::VectorXd& g, double threshold) {
  if (!(threshold > 0)) throw std::invalid_argument("clip: threshold must be > 0");
  const double norm = g.norm();
  if (norm <= threshold) return g;
  return (threshold / norm) * g;
}

// Synchronous gossip update: X <- W (X - eta G), all agents simultaneously.
inline void dsgd_step(Eigen::MatrixXd& states, const Eigen::MatrixXd& gradients,
                      const Eigen::MatrixXd& w, double step_size) {
  states = w * (states - step_size * gradients);
}

struct StepSchedule {
  enum class Kind { kConstant, kInverseSqrt };
  Kind kind = Kind::kInverseSqrt;
  double eta1 = 1e-2;

  // t is the 0-based iteration index; the diminishing schedule is
  // eta1 / sqrt(t+1).
  double at(int64_t t) const {
    return kind == Kind::kConstant
               ? eta1
               : eta1 / std::sqrt(static_cast<double>(t + 1));
  }
};

struct RunConfig {
  Eigen::MatrixXd w;
  CovarianceFactor noise_factor;  // zero matrix = noise-free run
  int64_t iterations = 1;         // T
  double clip_threshold = 0.1;    // C
  StepSchedule step;
  uint64_t seed = 0;
  int metric_stride = 0;          // 0 -> max(1, T/500)
  Eigen::MatrixXd initial_states; // n x d; empty -> zeros

  int stride() const {
    return metric_stride > 0
               ? metric_stride
               : static_cast<int>(std::max<int64_t>(1, iterations / 500));
  }

  void validate(int task_dim) const {
    const int n = static_cast<int>(w.rows());
    if (w.rows() != w.cols()) throw std::invalid_argument("run: W must be square");
    if (noise_factor.dimension() != n)
      throw std::invalid_argument("run: noise factor dimension mismatch");
    if (iterations < 1) throw std::invalid_argument("run: T must be >= 1");
    if (!(clip_threshold > 0)) throw std::invalid_argument("run: C must be > 0");
    if (!(step.eta1 > 0)) throw std::invalid_argument("run: eta1 must be > 0");
    if (initial_states.size() != 0 &&
        (initial_states.rows() != n || initial_states.cols() != task_dim))
      throw std::invalid_argument("run: initial states must be n x d");
  }
};

struct MetricRecord {
  int64_t iteration;
  std::string name;
  double value;
};

struct Trajectory {
  std::vector<MetricRecord> records;
  Eigen::MatrixXd final_states;
};

namespace detail_engine {

inline double consensus_error(const Eigen::MatrixXd& states) {
  const Eigen::RowVectorXd mean = states.colwise().mean();
  return (states.rowwise() - mean).squaredNorm() /
         static_cast<double>(states.rows());
}

// One independent length-n correlated noise vector per coordinate, all from
// the shared seed.
inline Eigen::MatrixXd noise_matrix(const CovarianceFactor& factor,
                                    uint64_t noise_seed, int64_t t, int dim) {
  const int n = factor.dimension();
  Eigen::MatrixXd v(n, dim);
  for (int c = 0; c < dim; ++c)
    v.col(c) = sample_noise(factor, noise_seed, t,
                            static_cast<uint64_t>(c)).v;
  return v;
}

template <typename Task>
Eigen::MatrixXd clipped_gradients(const Task& task,
                                  const Eigen::MatrixXd& states,
                                  double threshold, uint64_t data_seed,
                                  int64_t t) {
  const int n = static_cast<int>(states.rows());
  Eigen::MatrixXd g(states.rows(), states.cols());
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd gi =
        task.stochastic_gradient(i, states.row(i).transpose(), data_seed, t);
    g.row(i) = clip(gi, threshold).transpose();
  }
  return g;
}

}  // namespace detail_engine

// Runs the correlated-noise DSGD loop: clip, perturb with v = F s(t), mix.
// Fully deterministic given the config; baselines differ only in the factor.
template <typename Task>
Trajectory corn_dsgd_run(const RunConfig& cfg, const Task& task) {
  cfg.validate(task.dim());
  const int n = static_cast<int>(cfg.w.rows());
  const int d = task.dim();
  const uint64_t noise_seed = derive_seed(cfg.seed, kNoiseDomain);
  const uint64_t data_seed = derive_seed(cfg.seed, kDataDomain);
  const int stride = cfg.stride();
  const bool noisy = cfg.noise_factor.f.cwiseAbs().maxCoeff() > 0;

  Eigen::MatrixXd states = cfg.initial_states.size() != 0
                               ? cfg.initial_states
                               : Eigen::MatrixXd::Zero(n, d);
  Trajectory trajectory;
  auto record = [&](int64_t iteration, double noise_power) {
    task.append_metrics(states, iteration, trajectory.records);
    trajectory.records.push_back(
        {iteration, "consensus_error", detail_engine::consensus_error(states)});
    trajectory.records.push_back({iteration, "noise_power", noise_power});
  };
  record(0, 0.0);

  for (int64_t t = 0; t < cfg.iterations; ++t) {
    const double eta = cfg.step.at(t);
    Eigen::MatrixXd update = detail_engine::clipped_gradients(
        task, states, cfg.clip_threshold, data_seed, t);
    double noise_power = 0;
    if (noisy) {
      const Eigen::MatrixXd v =
          detail_engine::noise_matrix(cfg.noise_factor, noise_seed, t, d);
      noise_power = eta * eta * (cfg.w * v).squaredNorm();
      update += v;
    }
    dsgd_step(states, update, cfg.w, eta);
    if (!states.allFinite())
      throw std::runtime_error("run diverged (non-finite state) at iteration " +
                               std::to_string(t));
    if ((t + 1) % stride == 0 || t + 1 == cfg.iterations)
      record(t + 1, noise_power);
  }
  trajectory.final_states = std::move(states);
  return trajectory;
}

// Empirical check of the per-iteration error split: total update energy =
// noise-free DSGD error + eta^2 d Tr(W R W^T), cross term vanishing in
// expectation.
struct VarianceProbe {
  double noise_free_error = 0;       // || x_hat - x ||^2, deterministic
  double noise_variance_expected = 0; // eta^2 * d * Tr(W R W^T)
  double total_empirical = 0;        // mean over redraws of || x~next - x ||^2
  double cross_term = 0;             // total - noise_free - expected
};

template <typename Task>
VarianceProbe variance_decomposition_probe(const RunConfig& cfg,
                                           const Task& task, int64_t t_probe,
                                           int redraws) {
  cfg.validate(task.dim());
  if (t_probe < 0 || t_probe >= cfg.iterations)
    throw std::invalid_argument("probe: t_probe out of range");
  if (redraws < 1) throw std::invalid_argument("probe: need redraws >= 1");

  const int n = static_cast<int>(cfg.w.rows());
  const int d = task.dim();
  const uint64_t noise_seed = derive_seed(cfg.seed, kNoiseDomain);
  const uint64_t data_seed = derive_seed(cfg.seed, kDataDomain);
  const uint64_t probe_seed = derive_seed(cfg.seed, kProbeDomain);

  // Advance to the probe iterate along the exact run path.
  Eigen::MatrixXd states = cfg.initial_states.size() != 0
                               ? cfg.initial_states
                               : Eigen::MatrixXd::Zero(n, d);
  const bool noisy = cfg.noise_factor.f.cwiseAbs().maxCoeff() > 0;
  for (int64_t t = 0; t < t_probe; ++t) {
    Eigen::MatrixXd update = detail_engine::clipped_gradients(
        task, states, cfg.clip_threshold, data_seed, t);
    if (noisy)
      update += detail_engine::noise_matrix(cfg.noise_factor, noise_seed, t, d);
    dsgd_step(states, update, cfg.w, cfg.step.at(t));
  }

  const double eta = cfg.step.at(t_probe);
  const Eigen::MatrixXd g_hat = detail_engine::clipped_gradients(
      task, states, cfg.clip_threshold, data_seed, t_probe);
  const Eigen::MatrixXd x_virtual = cfg.w * (states - eta * g_hat);

  VarianceProbe probe;
  probe.noise_free_error = (x_virtual - states).squaredNorm();
  const Eigen::MatrixXd r = cfg.noise_factor.f * cfg.noise_factor.f.transpose();
  probe.noise_variance_expected =
      eta * eta * static_cast<double>(d) * effective_variance(cfg.w, r);

  double total = 0;
  for (int k = 0; k < redraws; ++k) {
    Eigen::MatrixXd v(n, d);
    for (int c = 0; c < d; ++c)
      v.col(c) = sample_noise(cfg.noise_factor, probe_seed, t_probe,
                              static_cast<uint64_t>(k) * d +
                                  static_cast<uint64_t>(c)).v;
    total += (x_virtual - eta * (cfg.w * v) - states).squaredNorm();
  }
  probe.total_empirical = total / redraws;
  probe.cross_term = probe.total_empirical - probe.noise_free_error -
                     probe.noise_variance_expected;
  return probe;
}

}  // namespace corn
