#pragma once

#include "catcma/hyperparams.hpp"
#include "catcma/types.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <random>
#include <span>

namespace catcma {

/// Categorical search distribution: one simplex vector per dimension plus
/// the trust-region accumulators of the adaptive natural-gradient update.
template <class Scalar = double>
struct CategoricalState {
  BlockList<Scalar> q;
  VectorX<Scalar> s;  // length sum(K_n - 1)
  Scalar gamma = 0;
  Scalar delta = 1;

  Eigen::Index reduced_dim() const {
    Eigen::Index d = 0;
    for (const auto& block : q) d += block.size() - 1;
    return d;
  }
};

template <class Scalar = double>
CategoricalState<Scalar> uniform_categorical_state(const ProblemDims& dims) {
  CategoricalState<Scalar> st;
  st.q.reserve(dims.categories.size());
  for (Eigen::Index k : dims.categories)
    st.q.push_back(VectorX<Scalar>::Constant(k, Scalar(1) / Scalar(k)));
  st.s = VectorX<Scalar>::Zero(dims.reduced_cat_dim());
  return st;
}

/// Draws count joint one-hot samples, each block independent with
/// Pr(c_{n,k} = 1) = q_{n,k}.
template <class Scalar, class Rng>
std::vector<OneHotSample<Scalar>> sample_categorical(const CategoricalState<Scalar>& state,
                                                     Eigen::Index count, Rng& rng) {
  std::uniform_real_distribution<Scalar> unit(0, 1);
  std::vector<OneHotSample<Scalar>> out(count);
  for (auto& sample : out) {
    sample.blocks.reserve(state.q.size());
    for (const auto& block : state.q) {
      const Scalar u = unit(rng);
      Scalar cum = 0;
      Eigen::Index pick = block.size() - 1;  // guard against fp shortfall
      for (Eigen::Index k = 0; k < block.size(); ++k) {
        cum += block[k];
        if (u < cum) {
          pick = k;
          break;
        }
      }
      sample.blocks.push_back(one_hot<Scalar>(pick, block.size()));
    }
  }
  return out;
}

/// G = sum_i (w_i/lambda)(c_{i:lambda} - q); every block sums to zero when
/// the weights sum to one.
template <class Scalar>
BlockList<Scalar> estimated_natural_gradient(const CategoricalState<Scalar>& state,
                                             std::span<const OneHotSample<Scalar>> ranked,
                                             const VectorX<Scalar>& weights) {
  BlockList<Scalar> grad;
  grad.reserve(state.q.size());
  for (const auto& block : state.q) grad.push_back(VectorX<Scalar>::Zero(block.size()));
  for (Eigen::Index i = 0; i < Eigen::Index(ranked.size()); ++i) {
    if (weights[i] == Scalar(0)) continue;
    for (std::size_t n = 0; n < grad.size(); ++n)
      grad[n] += weights[i] * (ranked[i].blocks[n] - state.q[n]);
  }
  return grad;
}

/// ||G||_{F(q)} = sqrt(sum G^2 / q); equals the quadratic form through the
/// reduced-block Fisher matrix for zero-sum blocks.
template <class Scalar>
Scalar fisher_norm(const CategoricalState<Scalar>& state, const BlockList<Scalar>& grad) {
  Scalar total = 0;
  for (std::size_t n = 0; n < grad.size(); ++n)
    total += (grad[n].array().square() / state.q[n].array()).sum();
  return std::sqrt(total);
}

/// Applies the exact symmetric square root of each (K_n - 1)-block Fisher
/// matrix F(q_n) = diag(q_n)^-1 + q_{n,K}^-1 11^T to the reduced gradient.
template <class Scalar>
VectorX<Scalar> sqrt_fisher_apply(const CategoricalState<Scalar>& state,
                                  const BlockList<Scalar>& grad) {
  VectorX<Scalar> out(state.reduced_dim());
  Eigen::Index offset = 0;
  for (std::size_t n = 0; n < grad.size(); ++n) {
    const Eigen::Index k = state.q[n].size();
    const Eigen::Index r = k - 1;
    MatrixX<Scalar> fisher =
        MatrixX<Scalar>::Constant(r, r, Scalar(1) / state.q[n][r]);
    fisher.diagonal() += state.q[n].head(r).cwiseInverse();
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(fisher);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= Scalar(0))
      throw StateCorruptionError("Fisher block is not positive definite");
    out.segment(offset, r) = es.eigenvectors() *
                             es.eigenvalues().cwiseSqrt().asDiagonal() *
                             es.eigenvectors().transpose() * grad[n].head(r);
    offset += r;
  }
  return out;
}

namespace detail {
inline void warn_beta_saturated(double delta, double limit) {
  static std::atomic<bool> warned{false};
  if (!warned.exchange(true))
    std::fprintf(stderr,
                 "catcma: warning: trust region delta=%g exceeds sqrt(sum(K-1))=%g; "
                 "beta saturates at 1\n",
                 delta, limit);
}
}  // namespace detail

/// One adaptive natural-gradient step: q moves by delta along the
/// Fisher-normalized gradient, the accumulators track that same normalized
/// direction (its Fisher norm is 1, so gamma's noise fixed point is 1 and
/// the signal test is invariant to the raw gradient scale), and
/// delta' = delta exp(beta(||s'||^2/alpha - gamma')). A zero gradient skips
/// the whole update. beta is capped at 1: past that point the accumulators
/// lose all memory and for any alpha > 1 the exponent turns negative, so
/// delta damps itself back without an explicit upper bound (uncapped,
/// beta > 2 would put sqrt(beta(2-beta)) outside the reals).
template <class Scalar>
CategoricalState<Scalar> asng_update(const CategoricalState<Scalar>& state,
                                     const BlockList<Scalar>& grad,
                                     const Hyperparameters<Scalar>& hp) {
  const Scalar fnorm = fisher_norm(state, grad);
  if (fnorm == Scalar(0)) return state;

  const Scalar sqrt_dim = std::sqrt(Scalar(state.reduced_dim()));
  if (state.delta > sqrt_dim)
    detail::warn_beta_saturated(double(state.delta), double(sqrt_dim));
  const Scalar beta = std::min(state.delta / sqrt_dim, Scalar(1));

  CategoricalState<Scalar> next = state;
  for (std::size_t n = 0; n < next.q.size(); ++n)
    next.q[n] += state.delta * grad[n] / fnorm;
  next.s = (1 - beta) * state.s +
           std::sqrt(beta * (2 - beta)) * sqrt_fisher_apply(state, grad) / fnorm;
  next.gamma = (1 - beta) * (1 - beta) * state.gamma + beta * (2 - beta);
  next.delta =
      state.delta * std::exp(beta * (next.s.squaredNorm() / hp.alpha - next.gamma));
  return next;
}

/// Clamp to the margin, then rescale the slack above the margin so each
/// block sums to one again. A fully degenerate block resets to uniform.
template <class Scalar>
BlockList<Scalar> margin_correction(const CategoricalState<Scalar>& state,
                                    const std::vector<Scalar>& margins) {
  BlockList<Scalar> out;
  out.reserve(state.q.size());
  for (std::size_t n = 0; n < state.q.size(); ++n) {
    const Scalar m = margins[n];
    VectorX<Scalar> block = state.q[n].cwiseMax(m);
    const Scalar sum = block.sum();
    const Scalar slack = (block.array() - m).sum();
    if (slack == Scalar(0)) {
      out.push_back(VectorX<Scalar>::Constant(block.size(),
                                              Scalar(1) / Scalar(block.size())));
      continue;
    }
    block.array() += (1 - sum) / slack * (block.array() - m);
    out.push_back(block.cwiseMax(m));
  }
  return out;
}

/// Plain natural-gradient step with fixed per-dimension rates; the
/// no-enhancement variant of the q update.
template <class Scalar>
BlockList<Scalar> igo_q_update(const CategoricalState<Scalar>& state,
                               std::span<const OneHotSample<Scalar>> ranked,
                               const VectorX<Scalar>& weights,
                               const std::vector<Scalar>& eta) {
  const BlockList<Scalar> grad = estimated_natural_gradient(state, ranked, weights);
  BlockList<Scalar> out = state.q;
  for (std::size_t n = 0; n < out.size(); ++n) {
    if (eta[n] <= Scalar(0) || eta[n] > Scalar(1))
      throw ConfigError("igo_q_update: eta must be in (0, 1]");
    out[n] += eta[n] * grad[n];
  }
  return out;
}

}  // namespace catcma
