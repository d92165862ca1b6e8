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
#include <istream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "corn/engine.hpp"
#include "corn/io.hpp"
#include "corn/rng.hpp"

namespace corn {

inline constexpr uint64_t kSplitDomain = 0x636f726e2d73706cULL;

// Heterogeneous 2-D quadratics: f_i(x) = z^T A z with z = Q_i (x - m_i),
// A = diag(15, 1).
class QuadraticTask {
 public:
  struct Component {
    Eigen::Vector2d minimizer;
    double theta_radians = 0;
  };

  explicit QuadraticTask(std::vector<Component> components)
      : components_(std::move(components)) {
    if (components_.empty())
      throw std::invalid_argument("quadratic task: no agents");
    const Eigen::Matrix2d a = curvature();
    Eigen::Matrix2d normal = Eigen::Matrix2d::Zero();
    Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
    for (const auto& c : components_) {
      const Eigen::Matrix2d b = rotation(c.theta_radians).transpose() * a *
                                rotation(c.theta_radians);
      normal += b;
      rhs += b * c.minimizer;
    }
    // normal is a sum of PD matrices, so always invertible here.
    minimizer_ = normal.ldlt().solve(rhs);
    optimal_ = global_objective(minimizer_);
  }

  // Paper layout: minimizers at (-(i), 0) for 1-based i <= n/2 and (+i, 0)
  // above, with the upper half rotated around its minimizer.
  static QuadraticTask heterogeneous(int n, double theta_degrees = 15.0) {
    if (n < 2 || n % 2 != 0)
      throw std::invalid_argument(
          "quadratic task: the split layout needs an even agent count");
    const double theta = theta_degrees * std::numbers::pi / 180.0;
    std::vector<Component> components;
    components.reserve(static_cast<size_t>(n));
    for (int idx = 1; idx <= n; ++idx) {
      if (idx <= n / 2)
        components.push_back({Eigen::Vector2d(-idx, 0.0), 0.0});
      else
        components.push_back({Eigen::Vector2d(idx, 0.0), theta});
    }
    return QuadraticTask(std::move(components));
  }

  static Eigen::Matrix2d curvature() {
    Eigen::Matrix2d a;
    a << 15.0, 0.0, 0.0, 1.0;
    return a;
  }
  static Eigen::Matrix2d rotation(double theta) {
    Eigen::Matrix2d q;
    q << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    return q;
  }

  int dim() const { return 2; }
  int agents() const { return static_cast<int>(components_.size()); }

  double objective(int agent, const Eigen::Vector2d& x) const {
    const auto& c = components_.at(static_cast<size_t>(agent));
    const Eigen::Vector2d z = rotation(c.theta_radians) * (x - c.minimizer);
    return z.dot(curvature() * z);
  }

  Eigen::Vector2d gradient(int agent, const Eigen::Vector2d& x) const {
    const auto& c = components_.at(static_cast<size_t>(agent));
    const Eigen::Matrix2d q = rotation(c.theta_radians);
    return 2.0 * q.transpose() * curvature() * q * (x - c.minimizer);
  }

  // Gradients are exact for this task; the engine's data seed is unused.
  Eigen::VectorXd stochastic_gradient(int agent, const Eigen::VectorXd& x,
                                      uint64_t /*data_seed*/,
                                      int64_t /*t*/) const {
    return gradient(agent, Eigen::Vector2d(x));
  }

  double global_objective(const Eigen::Vector2d& x) const {
    double s = 0;
    for (int i = 0; i < agents(); ++i) s += objective(i, x);
    return s / agents();
  }

  const Eigen::Vector2d& global_minimizer() const { return minimizer_; }
  double optimal_value() const { return optimal_; }

  // (1/n) sum_i f_i(x_i) - f*, each agent evaluated at its own iterate.
  double optimality_gap(const Eigen::MatrixXd& states) const {
    if (states.rows() != agents() || states.cols() != 2)
      throw std::invalid_argument("optimality_gap: states must be n x 2");
    double s = 0;
    for (int i = 0; i < agents(); ++i)
      s += objective(i, states.row(i).transpose());
    return s / agents() - optimal_;
  }

  void append_metrics(const Eigen::MatrixXd& states, int64_t iteration,
                      std::vector<MetricRecord>& out) const {
    out.push_back({iteration, "opt_gap", optimality_gap(states)});
  }

 private:
  std::vector<Component> components_;
  Eigen::Vector2d minimizer_;
  double optimal_ = 0;
};

// Zero-gradient task of a given dimension; isolates the privacy-noise term
// in the update-variance decomposition.
class ConstantTask {
 public:
  explicit ConstantTask(int dim) : dim_(dim) {
    if (dim < 1) throw std::invalid_argument("constant task: dim must be >= 1");
  }
  int dim() const { return dim_; }
  Eigen::VectorXd stochastic_gradient(int /*agent*/, const Eigen::VectorXd& x,
                                      uint64_t /*data_seed*/,
                                      int64_t /*t*/) const {
    return Eigen::VectorXd::Zero(x.size());
  }
  void append_metrics(const Eigen::MatrixXd& states, int64_t iteration,
                      std::vector<MetricRecord>& out) const {
    out.push_back({iteration, "mean_sq_state", states.squaredNorm() /
                                                   static_cast<double>(
                                                       states.rows())});
  }

 private:
  int dim_;
};

struct Dataset {
  Eigen::MatrixXd features;  // samples x dim
  Eigen::VectorXd labels;    // in {-1, +1}

  Eigen::Index samples() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

// LIBSVM sparse text format: "label idx:val idx:val ..." with 1-based,
// strictly increasing indices.
inline Dataset parse_libsvm(std::istream& in, int feature_dim) {
  if (feature_dim < 1)
    throw std::invalid_argument("parse_libsvm: feature_dim must be >= 1");
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> labels;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error("libsvm parse error at line " +
                             std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;  // blank line
    double label = 0;
    try {
      label = parse_double(token);
    } catch (const std::exception&) {
      fail("non-numeric label '" + token + "'");
    }
    Eigen::VectorXd row = Eigen::VectorXd::Zero(feature_dim);
    int prev_index = 0;
    while (ls >> token) {
      const auto colon = token.find(':');
      if (colon == std::string::npos) fail("expected idx:val, got '" + token + "'");
      int index = 0;
      double value = 0;
      try {
        index = static_cast<int>(std::stol(token.substr(0, colon)));
        value = parse_double(token.substr(colon + 1));
      } catch (const std::exception&) {
        fail("non-numeric token '" + token + "'");
      }
      if (index <= prev_index) fail("indices must be strictly increasing");
      if (index > feature_dim)
        fail("index " + std::to_string(index) + " exceeds declared dimension " +
             std::to_string(feature_dim));
      row(index - 1) = value;
      prev_index = index;
    }
    rows.push_back(std::move(row));
    labels.push_back(label > 0 ? 1.0 : -1.0);
  }
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(rows.size()), feature_dim);
  d.labels.resize(static_cast<Eigen::Index>(labels.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    d.features.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    d.labels(static_cast<Eigen::Index>(i)) = labels[i];
  }
  return d;
}

inline std::string to_libsvm(const Dataset& d) {
  std::string out;
  for (Eigen::Index i = 0; i < d.samples(); ++i) {
    out += d.labels(i) > 0 ? "+1" : "-1";
    for (Eigen::Index j = 0; j < d.dim(); ++j) {
      if (d.features(i, j) != 0.0) {
        out += ' ';
        out += std::to_string(j + 1);
        out += ':';
        out += format_double(d.features(i, j));
      }
    }
    out += '\n';
  }
  return out;
}

struct DirichletPartition {
  double alpha = 0;
  uint64_t seed = 0;
  int attempts = 1;                      // resamples until all shards filled
  std::vector<int> assignment;           // sample -> agent
  std::vector<std::vector<int>> shards;  // agent -> sample indices
};

// Per class, draw agent proportions from Dirichlet(alpha 1_n) and assign the
// class's samples multinomially. Partitions with an empty shard are redrawn
// with an incremented sub-seed.
inline DirichletPartition dirichlet_partition(const std::vector<int>& class_ids,
                                              int n_agents, double alpha,
                                              uint64_t seed,
                                              int max_retries = 100) {
  if (n_agents < 1) throw std::invalid_argument("partition: need n_agents >= 1");
  if (!(alpha > 0)) throw std::invalid_argument("partition: alpha must be > 0");
  if (class_ids.empty()) throw std::invalid_argument("partition: no samples");
  if (class_ids.size() < static_cast<size_t>(n_agents))
    throw std::invalid_argument("partition: fewer samples than agents");

  std::map<int, std::vector<int>> by_class;
  for (size_t s = 0; s < class_ids.size(); ++s)
    by_class[class_ids[s]].push_back(static_cast<int>(s));

  for (int attempt = 0; attempt < max_retries; ++attempt) {
    DirichletPartition part;
    part.alpha = alpha;
    part.seed = seed;
    part.attempts = attempt + 1;
    part.assignment.assign(class_ids.size(), -1);
    part.shards.assign(static_cast<size_t>(n_agents), {});
    uint64_t class_index = 0;
    for (const auto& [cls, samples] : by_class) {
      RngStream stream(
          CounterRng(derive_seed(seed, static_cast<uint64_t>(attempt)),
                     class_index++),
          0);
      Eigen::VectorXd proportions(n_agents);
      for (int a = 0; a < n_agents; ++a) proportions(a) = stream.gamma(alpha);
      proportions /= proportions.sum();
      for (int s : samples) {
        const double u = stream.uniform();
        double acc = 0;
        int agent = n_agents - 1;
        for (int a = 0; a < n_agents; ++a) {
          acc += proportions(a);
          if (u < acc) {
            agent = a;
            break;
          }
        }
        part.assignment[static_cast<size_t>(s)] = agent;
        part.shards[static_cast<size_t>(agent)].push_back(s);
      }
    }
    const bool ok = std::all_of(part.shards.begin(), part.shards.end(),
                                [](const auto& s) { return !s.empty(); });
    if (ok) return part;
  }
  throw std::runtime_error("partition: empty shard persisted after " +
                           std::to_string(max_retries) + " resamples");
}

inline double logistic_loss(const Eigen::VectorXd& weights,
                            const Eigen::MatrixXd& features,
                            const Eigen::VectorXd& labels, double l2_reg) {
  const Eigen::VectorXd z = labels.array() * (features * weights).array();
  double loss = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    // log(1 + exp(-z)) without overflow.
    const double a = -z(i);
    loss += std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a)));
  }
  return loss / static_cast<double>(z.size()) +
         0.5 * l2_reg * weights.squaredNorm();
}

inline Eigen::VectorXd logistic_gradient(const Eigen::VectorXd& weights,
                                         const Eigen::MatrixXd& features,
                                         const Eigen::VectorXd& labels,
                                         double l2_reg) {
  if (features.rows() == 0)
    throw std::invalid_argument("logistic_gradient: empty batch");
  const Eigen::VectorXd z = labels.array() * (features * weights).array();
  Eigen::VectorXd coeff(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    // -y * sigmoid(-z), evaluated stably on both tails.
    const double s = z(i) > 0 ? std::exp(-z(i)) / (1.0 + std::exp(-z(i)))
                              : 1.0 / (1.0 + std::exp(z(i)));
    coeff(i) = -labels(i) * s;
  }
  return features.transpose() * coeff / static_cast<double>(z.size()) +
         l2_reg * weights;
}

// Regularized logistic regression over a Dirichlet-partitioned dataset.
class LogisticTask {
 public:
  LogisticTask(Dataset train, Dataset test,
               std::vector<std::vector<int>> shards, double l2_reg,
               int batch_size)
      : train_(std::move(train)),
        test_(std::move(test)),
        shards_(std::move(shards)),
        l2_reg_(l2_reg),
        batch_size_(batch_size) {
    if (batch_size_ < 1)
      throw std::invalid_argument("logistic task: batch_size must be >= 1");
    for (const auto& shard : shards_)
      if (shard.empty())
        throw std::invalid_argument("logistic task: empty shard");
  }

  // Shuffle, split train/test, then Dirichlet-partition the training split
  // by class.
  static LogisticTask from_dataset(const Dataset& all, int n_agents,
                                   double dirichlet_alpha,
                                   double train_fraction, double l2_reg,
                                   int batch_size, uint64_t seed) {
    const Eigen::Index total = all.samples();
    if (total < 2) throw std::invalid_argument("logistic task: need >= 2 samples");
    std::vector<Eigen::Index> order(static_cast<size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i) order[static_cast<size_t>(i)] = i;
    RngStream stream(CounterRng(derive_seed(seed, kSplitDomain), 0), 0);
    for (Eigen::Index i = total - 1; i > 0; --i) {
      const auto j = static_cast<Eigen::Index>(
          stream.uniform_int(static_cast<uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    const auto n_train = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::llround(
               train_fraction * static_cast<double>(total))));
    if (n_train >= total)
      throw std::invalid_argument("logistic task: empty test split");

    auto take = [&](Eigen::Index begin, Eigen::Index end) {
      Dataset d;
      d.features.resize(end - begin, all.dim());
      d.labels.resize(end - begin);
      for (Eigen::Index i = begin; i < end; ++i) {
        d.features.row(i - begin) = all.features.row(order[static_cast<size_t>(i)]);
        d.labels(i - begin) = all.labels(order[static_cast<size_t>(i)]);
      }
      return d;
    };
    Dataset train = take(0, n_train);
    Dataset test = take(n_train, total);

    std::vector<int> class_ids(static_cast<size_t>(train.samples()));
    for (Eigen::Index i = 0; i < train.samples(); ++i)
      class_ids[static_cast<size_t>(i)] = train.labels(i) > 0 ? 1 : 0;
    auto partition = dirichlet_partition(class_ids, n_agents, dirichlet_alpha,
                                         derive_seed(seed, kDataDomain));
    return LogisticTask(std::move(train), std::move(test),
                        std::move(partition.shards), l2_reg, batch_size);
  }

  int dim() const { return static_cast<int>(train_.dim()); }
  int agents() const { return static_cast<int>(shards_.size()); }
  double l2_reg() const { return l2_reg_; }
  const std::vector<std::vector<int>>& shards() const { return shards_; }

  // Mini-batch drawn with replacement from the agent's shard, seeded by
  // (data_seed, agent, t): baselines see identical batches.
  Eigen::VectorXd stochastic_gradient(int agent, const Eigen::VectorXd& x,
                                      uint64_t data_seed, int64_t t) const {
    const auto& shard = shards_.at(static_cast<size_t>(agent));
    CounterRng rng(data_seed, static_cast<uint64_t>(agent));
    Eigen::MatrixXd batch(batch_size_, train_.dim());
    Eigen::VectorXd labels(batch_size_);
    for (int j = 0; j < batch_size_; ++j) {
      const auto pick = shard[static_cast<size_t>(rng.uniform_int(
          static_cast<uint64_t>(t), static_cast<uint64_t>(j), shard.size()))];
      batch.row(j) = train_.features.row(pick);
      labels(j) = train_.labels(pick);
    }
    return logistic_gradient(x, batch, labels, l2_reg_);
  }

  void append_metrics(const Eigen::MatrixXd& states, int64_t iteration,
                      std::vector<MetricRecord>& out) const {
    const Eigen::VectorXd mean = states.colwise().mean().transpose();
    out.push_back({iteration, "train_loss",
                   logistic_loss(mean, train_.features, train_.labels, l2_reg_)});
    out.push_back({iteration, "test_loss",
                   logistic_loss(mean, test_.features, test_.labels, l2_reg_)});
    const Eigen::VectorXd margins =
        test_.labels.array() * (test_.features * mean).array();
    out.push_back({iteration, "test_accuracy",
                   (margins.array() > 0).count() /
                       static_cast<double>(test_.samples())});
  }

 private:
  Dataset train_;
  Dataset test_;
  std::vector<std::vector<int>> shards_;
  double l2_reg_;
  int batch_size_;
};

}  // namespace corn
