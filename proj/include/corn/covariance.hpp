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

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "corn/rng.hpp"

namespace corn {

// Noise covariance structures. LDP and the pairwise (edge-correlated) design
// are special cases of the mixed form; keeping them distinct preserves the
// structural meaning of a run configuration.
struct LdpSpec {
  double sigma2;
};
struct PairwiseSpec {
  double sigma_pair2;
  double sigma_cor2;
  Eigen::MatrixXd laplacian;
};
struct MixedSpec {
  double sigma_mix2;
  Eigen::MatrixXd r_cor;
};
struct ExplicitSpec {
  Eigen::MatrixXd r;
};

class CovarianceSpec {
 public:
  using Kind = std::variant<LdpSpec, PairwiseSpec, MixedSpec, ExplicitSpec>;

  static CovarianceSpec Ldp(int n, double sigma2) {
    if (!(sigma2 > 0)) throw std::invalid_argument("LDP: sigma2 must be > 0");
    return CovarianceSpec(n, LdpSpec{sigma2});
  }
  static CovarianceSpec Pairwise(double sigma_pair2, double sigma_cor2,
                                 Eigen::MatrixXd laplacian) {
    if (!(sigma_pair2 > 0))
      throw std::invalid_argument("Pairwise: sigma_pair2 must be > 0");
    if (!(sigma_cor2 >= 0))
      throw std::invalid_argument("Pairwise: sigma_cor2 must be >= 0");
    const int n = static_cast<int>(laplacian.rows());
    check_symmetric(laplacian, "Pairwise laplacian");
    return CovarianceSpec(
        n, PairwiseSpec{sigma_pair2, sigma_cor2, std::move(laplacian)});
  }
  static CovarianceSpec Mixed(double sigma_mix2, Eigen::MatrixXd r_cor) {
    if (!(sigma_mix2 > 0))
      throw std::invalid_argument("Mixed: sigma_mix2 must be > 0");
    const int n = static_cast<int>(r_cor.rows());
    check_symmetric(r_cor, "Mixed r_cor");
    check_psd(r_cor, "Mixed r_cor");
    return CovarianceSpec(n, MixedSpec{sigma_mix2, std::move(r_cor)});
  }
  static CovarianceSpec Explicit(Eigen::MatrixXd r) {
    const int n = static_cast<int>(r.rows());
    check_symmetric(r, "Explicit covariance");
    return CovarianceSpec(n, ExplicitSpec{std::move(r)});
  }

  int dimension() const { return n_; }
  const Kind& kind() const { return kind_; }

 private:
  CovarianceSpec(int n, Kind kind) : n_(n), kind_(std::move(kind)) {}

  static void check_symmetric(const Eigen::MatrixXd& m, const char* what) {
    if (m.rows() != m.cols())
      throw std::invalid_argument(std::string(what) + ": not square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw std::invalid_argument(std::string(what) + ": not symmetric");
  }
  static void check_psd(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, m.trace()))
      throw std::invalid_argument(std::string(what) +
                                  ": not positive semidefinite");
  }

  int n_;
  Kind kind_;
};

// Builds the covariance matrix R for a spec. R must come out positive
// definite: a singular R voids any privacy guarantee.
inline Eigen::MatrixXd materialize(const CovarianceSpec& spec) {
  const int n = spec.dimension();
  Eigen::MatrixXd r;
  if (const auto* ldp = std::get_if<LdpSpec>(&spec.kind())) {
    r = ldp->sigma2 * Eigen::MatrixXd::Identity(n, n);
  } else if (const auto* pw = std::get_if<PairwiseSpec>(&spec.kind())) {
    r = pw->sigma_pair2 * Eigen::MatrixXd::Identity(n, n) +
        pw->sigma_cor2 * pw->laplacian;
  } else if (const auto* mx = std::get_if<MixedSpec>(&spec.kind())) {
    r = mx->sigma_mix2 * Eigen::MatrixXd::Identity(n, n) + mx->r_cor;
  } else {
    r = std::get<ExplicitSpec>(spec.kind()).r;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("materialize: eigensolver did not converge");
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw std::runtime_error(
        "materialize: covariance is not positive definite; no privacy "
        "guarantee exists for singular noise");
  return r;
}

// A factor F with F F^T = R. Any such factor yields the same noise
// distribution; the symmetric eigendecomposition root is the default because
// it tolerates PSD-but-singular correlated blocks.
struct CovarianceFactor {
  Eigen::MatrixXd f;
  std::string provenance;

  int dimension() const { return static_cast<int>(f.rows()); }
};

namespace detail_cov {
inline std::string format_ev(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}
}  // namespace detail_cov

inline CovarianceFactor factorize(const Eigen::MatrixXd& r) {
  if (r.rows() != r.cols()) throw std::invalid_argument("factorize: not square");
  const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
  if ((r - r.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::invalid_argument("factorize: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("factorize: eigensolver did not converge");
  Eigen::VectorXd ev = es.eigenvalues();
  const double clamp_floor = -1e-9 * std::max(r.trace(), 0.0);
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < clamp_floor)
      throw std::invalid_argument(
          "factorize: matrix is indefinite (eigenvalue " +
          detail_cov::format_ev(ev(i)) + " below clamp floor)");
    if (ev(i) < 0) ev(i) = 0;  // tiny float negatives
  }
  CovarianceFactor factor{
      es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
          es.eigenvectors().transpose(),
      "symmetric-eigendecomposition-root"};
  const double rnorm = r.norm();
  if (rnorm > 0) {
    const double rel = (factor.f * factor.f.transpose() - r).norm() / rnorm;
    if (rel >= 1e-9)
      throw std::runtime_error("factorize: reconstruction error " +
                               detail_cov::format_ev(rel) + " exceeds 1e-9");
  }
  return factor;
}

// One correlated noise vector, reproducible from (factor, seed, t).
struct NoiseSample {
  Eigen::VectorXd v;
  int64_t iteration;
  uint64_t seed;
};

// Draws s ~ N(0, I_n) from the counter generator keyed by (seed, t, stream)
// and returns v = F s. Every agent evaluating this with the same arguments
// obtains the identical vector, which is the whole point of the shared-seed
// protocol. `stream` separates independent draws at the same iteration
// (vector-valued parameters, Monte-Carlo redraws).
inline NoiseSample sample_noise(const CovarianceFactor& factor, uint64_t seed,
                                int64_t t, uint64_t stream = 0) {
  const int n = factor.dimension();
  CounterRng rng(seed, static_cast<uint64_t>(t));
  Eigen::VectorXd s(n);
  const uint64_t base = stream * static_cast<uint64_t>(n);
  for (int i = 0; i < n; ++i)
    s(i) = rng.normal(0, base + static_cast<uint64_t>(i));
  return NoiseSample{factor.f * s, t, seed};
}

// Tr(W R W^T): the post-mixing noise power added per unit squared step size.
inline double effective_variance(const Eigen::MatrixXd& w,
                                 const Eigen::MatrixXd& r) {
  if (w.cols() != r.rows() || r.rows() != r.cols())
    throw std::invalid_argument("effective_variance: dimension mismatch");
  return (w * r * w.transpose()).trace();
}

}  // namespace corn
