#pragma once

#include "catcma/hyperparams.hpp"
#include "catcma/types.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

namespace catcma {

/// Continuous search distribution: N(m, sigma^2 C) plus the two evolution
/// paths and the completed-iteration counter.
template <class Scalar = double>
struct GaussianState {
  VectorX<Scalar> mean;
  Scalar sigma = 1;
  MatrixX<Scalar> cov;
  VectorX<Scalar> path_sigma;
  VectorX<Scalar> path_cov;
  Eigen::Index iteration = 0;
};

/// Raw steps y_{i:lambda} as columns, already sorted by ascending fitness,
/// together with the w_i/lambda weights.
template <class Scalar = double>
struct RankedSteps {
  MatrixX<Scalar> steps;
  VectorX<Scalar> weights;

  VectorX<Scalar> weighted_step() const { return steps * weights; }
};

template <class Scalar>
Scalar eigenvalue_floor() {
  const Scalar f = static_cast<Scalar>(1e-300);
  return f > Scalar(0) ? f : std::numeric_limits<Scalar>::min();
}

/// Symmetric inverse square root B diag(d^-1/2) B^T; eigenvalues are
/// floored at 1e-300 before inversion so transient drift cannot produce inf.
template <class Scalar>
MatrixX<Scalar> inverse_sqrt_covariance(const MatrixX<Scalar>& cov) {
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(cov);
  if (es.info() != Eigen::Success)
    throw StateCorruptionError("covariance eigendecomposition failed");
  VectorX<Scalar> d = es.eigenvalues().cwiseMax(eigenvalue_floor<Scalar>());
  return es.eigenvectors() * d.cwiseInverse().cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

/// E||N(0, I_n)|| ~= sqrt(n) (1 - 1/(4n) + 1/(21 n^2)).
template <class Scalar = double>
Scalar expected_norm(Eigen::Index n) {
  if (n < 1) throw ConfigError("expected_norm: n must be >= 1");
  const Scalar nn = Scalar(n);
  return std::sqrt(nn) * (1 - 1 / (4 * nn) + 1 / (21 * nn * nn));
}

template <class Scalar = double>
struct ContinuousSamples {
  MatrixX<Scalar> y;  // columns ~ N(0, C)
  MatrixX<Scalar> x;  // columns = m + sigma * y
};

/// Draws count candidates through the symmetric factor of C. Throws
/// StateCorruptionError when C has drifted off the PSD cone.
template <class Scalar, class Rng>
ContinuousSamples<Scalar> sample_continuous(const GaussianState<Scalar>& state,
                                            Eigen::Index count, Rng& rng) {
  const Eigen::Index n = state.mean.size();
  ContinuousSamples<Scalar> out;
  out.y.resize(n, count);
  out.x.resize(n, count);
  if (n == 0) return out;

  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(state.cov);
  if (es.info() != Eigen::Success)
    throw StateCorruptionError("covariance eigendecomposition failed");
  const VectorX<Scalar>& d = es.eigenvalues();
  if (!d.allFinite()) throw StateCorruptionError("covariance eigenvalues not finite");
  const Scalar round_off = std::numeric_limits<Scalar>::epsilon() * Scalar(n) *
                           std::max(Scalar(1), d.cwiseAbs().maxCoeff());
  if (d.minCoeff() < -round_off)
    throw StateCorruptionError("covariance is not positive semidefinite");
  const MatrixX<Scalar> sqrt_cov = es.eigenvectors() *
                                   d.cwiseMax(Scalar(0)).cwiseSqrt().asDiagonal() *
                                   es.eigenvectors().transpose();

  std::normal_distribution<Scalar> gauss(0, 1);
  for (Eigen::Index i = 0; i < count; ++i)
    for (Eigen::Index r = 0; r < n; ++r) out.y(r, i) = gauss(rng);
  out.y = sqrt_cov * out.y;
  out.x = (state.sigma * out.y).colwise() + state.mean;
  return out;
}

/// Weighted recombination: m' = m + c_m sigma sum_i (w_i/lambda) y_{i:lambda}.
template <class Scalar>
VectorX<Scalar> update_mean(const GaussianState<Scalar>& state,
                            const RankedSteps<Scalar>& ranked,
                            const Hyperparameters<Scalar>& hp) {
  return state.mean + hp.c_m * state.sigma * ranked.weighted_step();
}

template <class Scalar = double>
struct PathUpdate {
  VectorX<Scalar> path_sigma;
  VectorX<Scalar> path_cov;
  bool h_sigma = true;
};

template <class Scalar>
PathUpdate<Scalar> update_evolution_paths(const GaussianState<Scalar>& state,
                                          const RankedSteps<Scalar>& ranked,
                                          const Hyperparameters<Scalar>& hp) {
  const Eigen::Index n = state.mean.size();
  const VectorX<Scalar> dy = ranked.weighted_step();

  PathUpdate<Scalar> out;
  out.path_sigma = (1 - hp.c_sigma) * state.path_sigma +
                   std::sqrt(hp.c_sigma * (2 - hp.c_sigma) * hp.mu_eff) *
                       (inverse_sqrt_covariance(state.cov) * dy);
  if (!out.path_sigma.allFinite())
    throw StateCorruptionError("sigma path became non-finite");

  // h_sigma stalls the rank-one path while ||p_sigma|| is abnormally long.
  const Scalar unbias =
      std::sqrt(1 - std::pow(1 - hp.c_sigma, Scalar(2 * (state.iteration + 1))));
  const Scalar threshold =
      unbias * (Scalar(1.4) + Scalar(2) / Scalar(n + 1)) * expected_norm<Scalar>(n);
  out.h_sigma = out.path_sigma.norm() < threshold;

  out.path_cov = (1 - hp.c_c) * state.path_cov +
                 (out.h_sigma ? Scalar(1) : Scalar(0)) *
                     std::sqrt(hp.c_c * (2 - hp.c_c) * hp.mu_eff) * dy;
  if (!out.path_cov.allFinite())
    throw StateCorruptionError("covariance path became non-finite");
  return out;
}

/// Rank-one plus rank-mu update; the (1-h_sigma) term compensates the
/// stalled path. Result is explicitly symmetrized.
template <class Scalar>
MatrixX<Scalar> update_covariance(const GaussianState<Scalar>& state,
                                  const RankedSteps<Scalar>& ranked,
                                  const VectorX<Scalar>& path_cov_new, bool h_sigma,
                                  const Hyperparameters<Scalar>& hp) {
  const Scalar stall = h_sigma ? Scalar(0) : hp.c_1 * hp.c_c * (2 - hp.c_c);
  const MatrixX<Scalar> rank_mu =
      ranked.steps * ranked.weights.asDiagonal() * ranked.steps.transpose();
  MatrixX<Scalar> cov =
      (1 + stall) * state.cov +
      hp.c_1 * (path_cov_new * path_cov_new.transpose() - state.cov) +
      hp.c_mu * (rank_mu - state.cov);
  cov = ((cov + cov.transpose()) / 2).eval();
  return cov;
}

/// Rank-mu-only update used without the enhancement mechanisms.
template <class Scalar>
MatrixX<Scalar> update_covariance_rank_mu(const GaussianState<Scalar>& state,
                                          const RankedSteps<Scalar>& ranked,
                                          const Hyperparameters<Scalar>& hp) {
  const MatrixX<Scalar> rank_mu =
      ranked.steps * ranked.weights.asDiagonal() * ranked.steps.transpose();
  MatrixX<Scalar> cov = state.cov + hp.c_mu * (rank_mu - state.cov);
  cov = ((cov + cov.transpose()) / 2).eval();
  return cov;
}

/// Cumulative step-size adaptation. The exponent is capped at +-ln(1e10)
/// so sigma moves at most ten decades per iteration.
template <class Scalar>
Scalar update_step_size(const GaussianState<Scalar>& state,
                        const VectorX<Scalar>& path_sigma_new,
                        const Hyperparameters<Scalar>& hp) {
  const Scalar ratio = path_sigma_new.norm() / expected_norm<Scalar>(state.mean.size());
  const Scalar cap = std::log(Scalar(1e10));
  const Scalar arg =
      std::clamp(hp.c_sigma / hp.d_sigma * (ratio - 1), -cap, cap);
  return state.sigma * std::exp(arg);
}

/// Keeps min eig(sigma^2 C) >= lambda_min: sigma' = max(sigma, sqrt(lambda_min/min_eig)).
template <class Scalar>
Scalar clamp_step_size(Scalar sigma, const MatrixX<Scalar>& cov, Scalar lambda_min) {
  if (cov.rows() == 0) return sigma;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(cov, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw StateCorruptionError("covariance eigendecomposition failed");
  const Scalar min_eig = es.eigenvalues().minCoeff();
  if (!(min_eig > Scalar(0)))
    throw StateCorruptionError("covariance lost positive definiteness");
  return std::max(sigma, std::sqrt(lambda_min / min_eig));
}

}  // namespace catcma
