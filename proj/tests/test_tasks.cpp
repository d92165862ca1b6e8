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

#include "corn/tasks.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

using Catch::Approx;
using namespace corn;

namespace {

const std::string kDataPath = std::string(CORN_SOURCE_DIR) + "/data/a9a_sample.libsvm";

Eigen::VectorXd finite_difference(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd hi = x, lo = x;
    hi(i) += h;
    lo(i) -= h;
    g(i) = (f(hi) - f(lo)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("quadratic minimizers have zero objective") {
  const QuadraticTask task = QuadraticTask::heterogeneous(8);
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector2d m = i < 4 ? Eigen::Vector2d(-(i + 1), 0)
                                    : Eigen::Vector2d(i + 1, 0);
    CHECK(task.objective(i, m) == Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("quadratic value matches the formula for the first agent") {
  // Agent 1 (index 0) in a 2-agent task: 15 (x1 + 1)^2 + x2^2 at the origin.
  const QuadraticTask task = QuadraticTask::heterogeneous(2);
  CHECK(task.objective(0, Eigen::Vector2d(0, 0)) == Approx(15.0));
}

TEST_CASE("rotation is an isometry around the minimizer") {
  const int n = 6;
  const double theta = 15.0 * std::numbers::pi / 180.0;
  const QuadraticTask task = QuadraticTask::heterogeneous(n, 15.0);
  const int upper = 5;  // rotated half
  const Eigen::Vector2d m(upper + 1, 0);
  const Eigen::Vector2d offset =
      QuadraticTask::rotation(theta).transpose() * Eigen::Vector2d(1, 0);
  CHECK(task.objective(upper, m + offset) == Approx(15.0).epsilon(1e-12));
}

TEST_CASE("rotated objective has its minimum at the minimizer") {
  const QuadraticTask task = QuadraticTask::heterogeneous(4, 15.0);
  const Eigen::Vector2d m(4, 0);  // agent index 3, rotated half
  const double at_min = task.objective(3, m);
  for (double dx : {-0.01, 0.01})
    for (double dy : {-0.01, 0.01})
      CHECK(task.objective(3, m + Eigen::Vector2d(dx, dy)) > at_min);
  CHECK(at_min == Approx(0.0).margin(1e-12));
}

TEST_CASE("quadratic gradients match central finite differences") {
  const QuadraticTask task = QuadraticTask::heterogeneous(6, 15.0);
  for (int agent : {0, 4}) {
    const Eigen::Vector2d x(0.7, -1.3);
    const Eigen::VectorXd fd = finite_difference(
        [&](const Eigen::VectorXd& p) {
          return task.objective(agent, Eigen::Vector2d(p));
        },
        x, 1e-6);
    const Eigen::Vector2d g = task.gradient(agent, x);
    CHECK((g - fd).norm() / g.norm() < 1e-7);
  }
}

TEST_CASE("symmetric minimizer layout has its optimum at the origin") {
  std::vector<QuadraticTask::Component> components;
  for (int i = 1; i <= 3; ++i) {
    components.push_back({Eigen::Vector2d(-i, 0), 0.0});
    components.push_back({Eigen::Vector2d(i, 0), 0.0});
  }
  const QuadraticTask task((std::move(components)));
  CHECK(task.global_minimizer().norm() < 1e-12);
}

TEST_CASE("optimality gap closed forms") {
  const QuadraticTask task = QuadraticTask::heterogeneous(4, 15.0);
  // All agents at the global minimizer: gap 0.
  Eigen::MatrixXd at_opt(4, 2);
  at_opt.rowwise() = task.global_minimizer().transpose();
  CHECK(task.optimality_gap(at_opt) == Approx(0.0).margin(1e-10));

  // Consensus states: gap is nonnegative (f* minimizes the average).
  for (double c : {-3.0, 0.0, 2.5}) {
    Eigen::MatrixXd consensus(4, 2);
    consensus.rowwise() = Eigen::RowVector2d(c, -c);
    CHECK(task.optimality_gap(consensus) >= -1e-12);
  }
}

TEST_CASE("parse_libsvm reads sparse rows") {
  std::istringstream in("+1 3:1 11:1\n-1\n");
  const Dataset d = parse_libsvm(in, 12);
  REQUIRE(d.samples() == 2);
  CHECK(d.labels(0) == 1.0);
  CHECK(d.labels(1) == -1.0);
  CHECK(d.features(0, 2) == 1.0);
  CHECK(d.features(0, 10) == 1.0);
  CHECK(d.features.row(0).sum() == 2.0);
  CHECK(d.features.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("parse_libsvm reports malformed lines with their number") {
  std::istringstream bad_label("+1 3:1\nfoo 1:1\n");
  CHECK_THROWS_WITH(parse_libsvm(bad_label, 10),
                    Catch::Matchers::ContainsSubstring("line 2"));

  std::istringstream bad_order("+1 5:1 3:1\n");
  CHECK_THROWS_WITH(parse_libsvm(bad_order, 10),
                    Catch::Matchers::ContainsSubstring("strictly increasing"));

  std::istringstream bad_index("+1 11:1\n");
  CHECK_THROWS_WITH(parse_libsvm(bad_index, 10),
                    Catch::Matchers::ContainsSubstring("exceeds declared"));

  std::istringstream bad_value("+1 3:abc\n");
  CHECK_THROWS_WITH(parse_libsvm(bad_value, 10),
                    Catch::Matchers::ContainsSubstring("line 1"));
}

TEST_CASE("the shipped sample parses to 200 x 123 with labels in {-1,+1}") {
  std::ifstream in(kDataPath);
  REQUIRE(in.good());
  const Dataset d = parse_libsvm(in, 123);
  CHECK(d.samples() == 200);
  CHECK(d.dim() == 123);
  for (Eigen::Index i = 0; i < d.samples(); ++i)
    CHECK((d.labels(i) == 1.0 || d.labels(i) == -1.0));

  // Count against an independent line scan.
  std::ifstream again(kDataPath);
  int lines = 0;
  std::string line;
  while (std::getline(again, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 200);
}

TEST_CASE("libsvm round trip is the identity") {
  std::ifstream in(kDataPath);
  const Dataset d = parse_libsvm(in, 123);
  std::istringstream back(to_libsvm(d));
  const Dataset d2 = parse_libsvm(back, 123);
  CHECK(d.labels == d2.labels);
  CHECK(d.features == d2.features);
}

TEST_CASE("dirichlet partition conserves the sample multiset") {
  std::vector<int> classes;
  for (int i = 0; i < 97; ++i) classes.push_back(i % 3);
  const DirichletPartition part = dirichlet_partition(classes, 5, 10.0, 42);
  std::set<int> seen;
  size_t total = 0;
  for (const auto& shard : part.shards) {
    total += shard.size();
    for (int s : shard) CHECK(seen.insert(s).second);  // no duplicates
  }
  CHECK(total == classes.size());
  for (size_t s = 0; s < classes.size(); ++s)
    CHECK(part.assignment[s] >= 0);
}

TEST_CASE("dirichlet partition is deterministic and seed sensitive") {
  std::vector<int> classes(120, 0);
  for (size_t i = 0; i < classes.size(); ++i) classes[i] = i % 2;
  const DirichletPartition a = dirichlet_partition(classes, 4, 10.0, 7);
  const DirichletPartition b = dirichlet_partition(classes, 4, 10.0, 7);
  CHECK(a.assignment == b.assignment);
  const DirichletPartition c = dirichlet_partition(classes, 4, 10.0, 8);
  CHECK(a.assignment != c.assignment);
}

TEST_CASE("single agent receives everything") {
  std::vector<int> classes = {0, 1, 0, 1, 1};
  const DirichletPartition part = dirichlet_partition(classes, 1, 10.0, 1);
  CHECK(part.shards[0].size() == 5);
}

TEST_CASE("large alpha concentrates shard sizes near uniform") {
  std::vector<int> classes(4000, 0);
  for (size_t i = 0; i < classes.size(); ++i) classes[i] = i % 2;
  const int n_agents = 4;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const DirichletPartition part =
        dirichlet_partition(classes, n_agents, 1e6, seed);
    for (const auto& shard : part.shards) {
      const double expected = 4000.0 / n_agents;
      CHECK(std::abs(static_cast<double>(shard.size()) - expected) / expected <
            0.05);
    }
  }
}

TEST_CASE("tiny shards are resampled until non-empty") {
  // 6 samples over 5 agents with a sharply skewed prior: empty shards are
  // likely per draw, so the retry path has to fire.
  std::vector<int> classes = {0, 0, 0, 0, 0, 0};
  const DirichletPartition part = dirichlet_partition(classes, 5, 0.05, 3);
  for (const auto& shard : part.shards) CHECK(!shard.empty());
}

TEST_CASE("logistic gradient is zero on a symmetric batch at the origin") {
  Eigen::MatrixXd x(2, 3);
  x << 1, -2, 0.5, -1, 2, -0.5;
  Eigen::VectorXd y(2);
  y << 1, -1;
  const Eigen::VectorXd g =
      logistic_gradient(Eigen::VectorXd::Zero(3), x, y, 0.0);
  CHECK(g.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("logistic gradient matches central finite differences") {
  CounterRng rng(5, 0);
  Eigen::MatrixXd x(6, 4);
  Eigen::VectorXd y(6), w(4);
  for (int i = 0; i < 6; ++i) {
    y(i) = (i % 2 == 0) ? 1 : -1;
    for (int j = 0; j < 4; ++j)
      x(i, j) = rng.normal(static_cast<uint64_t>(i), static_cast<uint64_t>(j));
  }
  for (int j = 0; j < 4; ++j) w(j) = rng.normal(100, static_cast<uint64_t>(j));

  const double l2 = 1e-4;
  const Eigen::VectorXd g = logistic_gradient(w, x, y, l2);
  const Eigen::VectorXd fd = finite_difference(
      [&](const Eigen::VectorXd& p) { return logistic_loss(p, x, y, l2); }, w,
      1e-5);
  CHECK((g - fd).norm() / g.norm() < 1e-6);
}

TEST_CASE("saturated logistic loss has a vanishing gradient") {
  Eigen::MatrixXd x(1, 2);
  x << 1, 0;
  Eigen::VectorXd y(1);
  y << 1;
  Eigen::VectorXd w(2);
  w << 50, 0;  // y <x, w> = 50, fully saturated
  const Eigen::VectorXd g = logistic_gradient(w, x, y, 0.0);
  CHECK(g.cwiseAbs().maxCoeff() < 1e-20);
}

TEST_CASE("logistic task wiring from the sample dataset") {
  std::ifstream in(kDataPath);
  const Dataset all = parse_libsvm(in, 123);
  const LogisticTask task =
      LogisticTask::from_dataset(all, 5, 10.0, 0.8, 1e-4, 16, 12345);
  CHECK(task.dim() == 123);
  CHECK(task.agents() == 5);
  size_t train_total = 0;
  for (const auto& shard : task.shards()) {
    CHECK(!shard.empty());
    train_total += shard.size();
  }
  CHECK(train_total == 160);  // 80% of 200

  // Deterministic batches: same (seed, agent, t) gives the same gradient.
  const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(123);
  const Eigen::VectorXd g1 = task.stochastic_gradient(2, w0, 777, 5);
  const Eigen::VectorXd g2 = task.stochastic_gradient(2, w0, 777, 5);
  CHECK(g1 == g2);
  CHECK(task.stochastic_gradient(2, w0, 777, 6) != g1);

  std::vector<MetricRecord> records;
  task.append_metrics(Eigen::MatrixXd::Zero(5, 123), 0, records);
  REQUIRE(records.size() == 3);
  CHECK(records[0].name == "train_loss");
  CHECK(records[0].value == Approx(std::log(2.0)).epsilon(1e-12));
}
